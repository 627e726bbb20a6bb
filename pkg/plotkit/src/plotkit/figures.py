"""The three figure layouts: stabilization, sync sweep, homodyne xcorr.

Each renderer takes a result directory produced by the matching kerrsync
subcommand, validates its inputs through a FigureSpec, and writes image
files. Rendering never modifies the input directory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .hinton import draw_hinton, hinton_squares  # noqa: E402
from .io import ResultsError, flagged_tables, load_summary, read_table  # noqa: E402

FORMATS = ("png", "svg", "pdf")
PNG_DPI = 200
TRAJ_COLOR = "0.75"
MEAN_COLOR = "C3"


@dataclass(frozen=True)
class FigureSpec:
    """Input files, panel layout and output target for one figure."""

    name: str
    inputs: tuple[Path, ...]
    layout: tuple[int, int]       # panel grid (rows, cols)
    out_base: Path
    formats: tuple[str, ...]

    def validate(self) -> None:
        for fmt in self.formats:
            if fmt not in FORMATS:
                raise ResultsError(f"unsupported output format {fmt!r}")
        for path in self.inputs:
            if not path.is_file():
                raise ResultsError(f"missing input file {path}")


def _save(fig, spec: FigureSpec, reproducible: bool) -> list[Path]:
    """Write one file per requested format; strip volatile metadata when
    byte-stable output is requested."""
    spec.out_base.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in spec.formats:
        out = spec.out_base.with_suffix("." + fmt)
        kw = {}
        if fmt == "png":
            kw["dpi"] = PNG_DPI
        if reproducible:
            if fmt == "svg":
                kw["metadata"] = {"Date": None}
            elif fmt == "pdf":
                kw["metadata"] = {"CreationDate": None}
        fig.savefig(out, **kw)
        written.append(out)
    plt.close(fig)
    return written


def _spec(name, results_dir, rel_inputs, layout, out_base, formats) -> FigureSpec:
    rd = Path(results_dir)
    inputs = tuple(rd / rel for rel in rel_inputs)
    base = Path(out_base) if out_base is not None else Path.cwd() / name
    spec = FigureSpec(name=name, inputs=inputs, layout=layout,
                      out_base=base, formats=tuple(formats))
    spec.validate()
    return spec


def _good(table, *cols):
    """Rows where every requested column is finite."""
    mask = np.ones_like(table[cols[0]], dtype=bool)
    for c in cols:
        mask &= np.isfinite(table[c])
    return tuple(table[c][mask] for c in cols)


# ---------------------------------------------------------------------------
# stabilization figure


def render_stabilization(results_dir, out_base=None, formats=("png",),
                         reproducible=False) -> list[Path]:
    """Four panels: photon distribution, Wigner map, fidelity vs detuning,
    optimized linear-mode detunings vs detuning."""
    summary = load_summary(results_dir, expect_kind="stabilize")
    files = summary.get("files", {})
    if "photon" not in files or "wigner" not in files:
        raise ResultsError("stabilize summary lists no photon/wigner exports")
    spec = _spec("stabilization", results_dir,
                 ["sweep.csv", files["photon"], files["wigner"]],
                 layout=(2, 2), out_base=out_base, formats=formats)
    sweep_p, photon_p, wigner_p = spec.inputs
    sweep = read_table(sweep_p)
    photon = read_table(photon_p)
    wig = read_table(wigner_p)
    axis_name = summary["axis"]["name"]
    n0 = int(summary.get("n0", 1))

    fig, axes = plt.subplots(*spec.layout, figsize=(9.0, 7.0))
    (ax_p, ax_w), (ax_f, ax_d) = axes

    ns = photon["n"].astype(int)
    ax_p.bar(ns, photon["p"], color="C0", width=0.8)
    ax_p.set_xlabel("photon number n")
    ax_p.set_ylabel("p(n)")
    ax_p.set_xticks(ns)
    ax_p.set_title(f"steady-state photon distribution (target n={n0})",
                   fontsize=9)

    xs = np.unique(wig["x"])
    ps = np.unique(wig["p"])
    W = np.full((xs.size, ps.size), np.nan)
    ix = np.searchsorted(xs, wig["x"])
    ip = np.searchsorted(ps, wig["p"])
    W[ix, ip] = wig["W"]
    if not np.all(np.isfinite(W)):
        raise ResultsError(f"{wigner_p} does not cover a full x/p grid")
    vmax = float(np.abs(W).max()) or 1.0
    pc = ax_w.pcolormesh(xs, ps, W.T, cmap="RdBu_r", vmin=-vmax, vmax=vmax,
                         shading="nearest", rasterized=True)
    ax_w.set_aspect("equal")
    ax_w.set_xlabel("x")
    ax_w.set_ylabel("p")
    ax_w.set_title("Wigner function", fontsize=9)
    fig.colorbar(pc, ax=ax_w, shrink=0.9)

    vals, fid = _good(sweep, axis_name, "fidelity")
    ax_f.plot(vals, fid, "o-", color="C0", ms=3)
    ax_f.set_xlabel(axis_name)
    ax_f.set_ylabel(f"fidelity to |{n0}>")
    ax_f.set_ylim(min(0.88, float(fid.min())) - 0.01,
                  max(0.92, float(fid.max())) + 0.01)
    ax_f.grid(alpha=0.3)

    for col, label, style in (("Delta_c_opt", "Delta_c (optimized)", "o-"),
                              ("Delta_d_opt", "Delta_d (optimized)", "s-"),
                              ("Delta_c_seed", "Delta_c (analytic seed)", "--"),
                              ("Delta_d_seed", "Delta_d (analytic seed)", "--")):
        v, y = _good(sweep, axis_name, col)
        ax_d.plot(v, y, style, ms=3, lw=1.2, label=label)
    ax_d.set_xlabel(axis_name)
    ax_d.set_ylabel("linear-mode detuning")
    ax_d.legend(fontsize=7)
    ax_d.grid(alpha=0.3)

    fig.suptitle(f"Fock-state stabilization sweep ({axis_name})", fontsize=11)
    fig.tight_layout()
    return _save(fig, spec, reproducible)


# ---------------------------------------------------------------------------
# synchronization figure


def render_sync(results_dir, out_base=None, formats=("png",),
                reproducible=False) -> list[Path]:
    """S/|J| and E_N versus detuning difference with resonance markers, plus
    Hinton panels at the flagged points of the strongest coupling."""
    summary = load_summary(results_dir, expect_kind="sync-sweep")
    flagged = summary.get("flagged_rows", {})
    if not flagged:
        raise ResultsError("sync summary flags no rows to render")
    hinton_files = {lab: f"hinton_{int(i)}.csv" for lab, i in flagged.items()}
    spec = _spec("sync", results_dir, ["sweep.csv", *hinton_files.values()],
                 layout=(2, max(2, len(flagged))), out_base=out_base,
                 formats=formats)
    sweep = read_table(spec.inputs[0])
    J_flag = summary.get("J_flagged")
    group = summary.get("groups", {}).get(repr(float(J_flag)), {}) \
        if J_flag is not None else {}

    fig = plt.figure(figsize=(3.2 * spec.layout[1], 7.0))
    gs = fig.add_gridspec(2, 2 * len(flagged) or 2)
    half = len(flagged) if flagged else 1
    ax_s = fig.add_subplot(gs[0, :half])
    ax_e = fig.add_subplot(gs[0, half:])

    for J in summary.get("J_values", []):
        sel = sweep["J"] == float(J)
        d = sweep["Delta_hat"][sel]
        if J != 0:
            y = sweep["S_over_absJ"][sel]
            label = f"J = {J:g}"
        else:
            y = sweep["S"][sel]
            label = "J = 0 (S)"
        ok = np.isfinite(d) & np.isfinite(y)
        ax_s.plot(d[ok], y[ok], "-", lw=1.4, label=label)
        en = sweep["E_N"][sel]
        ok = np.isfinite(d) & np.isfinite(en)
        ax_e.plot(d[ok], en[ok], "-", lw=1.4, label=f"J = {J:g}")

    for ax in (ax_s, ax_e):
        for x in group.get("markers_ideal") or []:
            ax.axvline(x, color="0.7", ls=":", lw=1.0)
        for x in group.get("markers_split") or []:
            ax.axvline(x, color="0.4", ls="--", lw=0.8)
        ax.set_xlabel("Delta_hat")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
    ax_s.set_ylabel("S / |J|")
    ax_s.set_title("synchronization measure", fontsize=9)
    ax_e.set_ylabel("E_N")
    ax_e.set_title("logarithmic negativity", fontsize=9)

    # hinton panels ordered by their position on the sweep axis
    order = sorted(flagged,
                   key=lambda lab: sweep["Delta_hat"][
                       sweep["row"] == float(flagged[lab])][0])
    tables = flagged_tables(results_dir, "hinton", flagged)
    width = (2 * len(flagged)) // len(flagged)
    sm = None
    for i, lab in enumerate(order):
        ax = fig.add_subplot(gs[1, i * width:(i + 1) * width])
        squares, N = hinton_squares(tables[lab])
        d_val = float(sweep["Delta_hat"][sweep["row"] == float(flagged[lab])][0])
        sm = draw_hinton(ax, squares, N,
                         title=f"{lab.replace('_', ' ')} (Delta_hat = {d_val:g})")
    if sm is not None:
        fig.colorbar(sm, ax=fig.axes[-len(order):], shrink=0.8,
                     label="Re <k,l|rho|m,n>")

    fig.suptitle(f"synchronization blockade sweep (J flagged = {J_flag:g})",
                 fontsize=11)
    return _save(fig, spec, reproducible)


# ---------------------------------------------------------------------------
# homodyne cross-correlation figure


def render_xcorr(results_dir, out_base=None, formats=("png",),
                 reproducible=False) -> list[Path]:
    """Max averaged cross-correlation versus detuning difference, co-plotted
    with S, plus per-point panels of trajectory curves under the mean."""
    summary = load_summary(results_dir, expect_kind="homodyne")
    flagged = summary.get("flagged_rows", {})
    if not flagged:
        raise ResultsError("homodyne summary flags no rows to render")
    xcorr_files = {lab: f"xcorr_{int(i)}.csv" for lab, i in flagged.items()}
    spec = _spec("xcorr", results_dir, ["sweep.csv", *xcorr_files.values()],
                 layout=(2, max(2, len(flagged))), out_base=out_base,
                 formats=formats)
    sweep = read_table(spec.inputs[0])
    tables = flagged_tables(results_dir, "xcorr", flagged)
    for lab, t in tables.items():
        if not any(c.startswith("traj_") for c in t):
            raise ResultsError(
                f"xcorr export for {lab!r} carries no trajectory curves")

    ncols = max(2, len(flagged))
    fig = plt.figure(figsize=(3.4 * ncols, 6.6))
    gs = fig.add_gridspec(2, ncols)
    ax_a = fig.add_subplot(gs[0, :])

    d, x = _good(sweep, "Delta_hat", "xcorr_max")
    ax_a.plot(d, x, "o-", color=MEAN_COLOR, ms=3, label="max |C(tau)|")
    ax_a.set_xlabel("Delta_hat")
    ax_a.set_ylabel("max averaged xcorr", color=MEAN_COLOR)
    ax_a.grid(alpha=0.3)
    ax_s = ax_a.twinx()
    d, s = _good(sweep, "Delta_hat", "S")
    ax_s.plot(d, s, "--", color="C0", lw=1.2, label="S")
    ax_s.set_ylabel("S", color="C0")
    pear = summary.get("pearson_xcorr_S")
    title = "measured cross-correlation vs synchronization measure"
    if pear is not None:
        title += f" (Pearson r = {pear:.3f})"
    ax_a.set_title(title, fontsize=9)

    order = sorted(flagged,
                   key=lambda lab: sweep["Delta_hat"][
                       sweep["row"] == float(flagged[lab])][0])
    for i, lab in enumerate(order):
        ax = fig.add_subplot(gs[1, i])
        t = tables[lab]
        taus = t["tau"]
        for c in sorted(c for c in t if c.startswith("traj_")):
            ax.plot(taus, t[c], color=TRAJ_COLOR, lw=0.7)
        ax.plot(taus, t["mean"], color=MEAN_COLOR, lw=1.8)
        d_val = float(sweep["Delta_hat"][sweep["row"] == float(flagged[lab])][0])
        ax.set_title(f"{lab.replace('_', ' ')} (Delta_hat = {d_val:g})",
                     fontsize=9)
        ax.set_xlabel("tau")
        if i == 0:
            ax.set_ylabel("C(tau)")
        ax.grid(alpha=0.3)

    fig.suptitle(
        f"homodyne detection, {int(summary.get('n_traj', 0))} trajectories "
        "per point (single trajectories light, ensemble mean bold)",
        fontsize=11)
    fig.tight_layout()
    return _save(fig, spec, reproducible)


RENDERERS = {
    "stabilization": render_stabilization,
    "sync": render_sync,
    "xcorr": render_xcorr,
}
