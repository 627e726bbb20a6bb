"""Hinton-diagram geometry for two-mode density-matrix exports.

The input rows are ``(k, l, m, n, abs, re)`` entries for matrix elements
``<k,l|rho|m,n>`` that survived the exporter's amplitude threshold. Squares
are laid out on the flattened-index grid (column ``m*N + n``, row
``k*N + l``) with area proportional to the amplitude and color mapped
linearly from the real part on a diverging scale centered at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import matplotlib
import numpy as np
from matplotlib import cm, colors
from matplotlib.patches import Rectangle

from .io import ResultsError

CMAP = "RdBu_r"


@dataclass(frozen=True)
class HintonSquare:
    """One matrix element placed on the flattened two-mode grid."""

    row: float      # k*N + l (bra index)
    col: float      # m*N + n (ket index)
    side: float     # sqrt(abs / max abs), so area tracks the amplitude
    re: float


def hinton_squares(table) -> tuple[list[HintonSquare], int]:
    """Turn a hinton CSV table into placed squares plus the per-mode size N."""
    needed = ("k", "l", "m", "n", "abs", "re")
    for name in needed:
        if name not in table:
            raise ResultsError(f"hinton table lacks column {name!r}")
    k, l, m, n = (np.asarray(table[c], dtype=np.int64) for c in needed[:4])
    a = np.asarray(table["abs"], dtype=np.float64)
    re = np.asarray(table["re"], dtype=np.float64)
    if a.size == 0:
        raise ResultsError("hinton table has no entries")
    if np.any(a < 0):
        raise ResultsError("hinton amplitudes must be non-negative")
    N = int(max(k.max(), l.max(), m.max(), n.max())) + 1
    amax = float(a.max())
    sides = np.sqrt(a / amax)
    squares = [HintonSquare(row=float(ki * N + li), col=float(mi * N + ni),
                            side=float(s), re=float(r))
               for ki, li, mi, ni, s, r in zip(k, l, m, n, sides, re)]
    return squares, N


def color_norm(squares) -> colors.Normalize:
    """Symmetric normalization so re=0 lands on the colormap midpoint."""
    vmax = max((abs(s.re) for s in squares), default=0.0)
    if vmax == 0.0:
        vmax = 1.0
    return colors.Normalize(vmin=-vmax, vmax=vmax)


def draw_hinton(ax, squares, N: int, title: str | None = None):
    """Paint squares onto ``ax``; returns the ScalarMappable for a colorbar."""
    norm = color_norm(squares)
    cmap = matplotlib.colormaps[CMAP]
    size = N * N
    ax.set_facecolor("0.95")
    for s in squares:
        ax.add_patch(Rectangle((s.col - s.side / 2.0, s.row - s.side / 2.0),
                               s.side, s.side,
                               facecolor=cmap(norm(s.re)), edgecolor="none"))
    ax.set_xlim(-0.6, size - 0.4)
    ax.set_ylim(size - 0.4, -0.6)       # row 0 at the top, matrix style
    ax.set_aspect("equal")
    ticks = np.arange(0, size, N)
    ax.set_xticks(ticks)
    ax.set_xticklabels([f"|{t // N},0>" for t in ticks], fontsize=7)
    ax.set_yticks(ticks)
    ax.set_yticklabels([f"<{t // N},0|" for t in ticks], fontsize=7)
    if title:
        ax.set_title(title, fontsize=9)
    return cm.ScalarMappable(norm=norm, cmap=cmap)
