"""Figure rendering for kerrsync result directories.

Consumes only the documented CSV/JSON output schemas; never imports the
simulation package itself.
"""

from .figures import (FigureSpec, render_stabilization, render_sync,
                      render_xcorr)
from .hinton import HintonSquare, color_norm, draw_hinton, hinton_squares
from .io import ResultsError, load_summary, read_table

__all__ = [
    "FigureSpec",
    "HintonSquare",
    "ResultsError",
    "color_norm",
    "draw_hinton",
    "hinton_squares",
    "load_summary",
    "read_table",
    "render_stabilization",
    "render_sync",
    "render_xcorr",
]

__version__ = "0.1.0"
