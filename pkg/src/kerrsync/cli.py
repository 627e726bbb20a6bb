"""Command-line entry point.

Subcommands map onto the experiment pipelines: ``stabilize`` (detuning sweep
with per-point optimization), ``sync-sweep`` (synchronization measure and
entanglement vs detuning), ``homodyne`` (trajectory ensembles and averaged
cross-correlations), ``check`` (truncation / step convergence report) and
``export-hinton`` (steady-state Hinton CSV at one detuning).

Exit codes: 0 success, 2 configuration error, 3 solver failure rate exceeded,
4 convergence check failed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, apply_overrides, load_raw, parse_config
from .sweeps import (ResultDir, SolverFailureRateError, _coupling_terms,
                     _effective_base, convergence_check,
                     run_homodyne_experiment, run_stabilize, run_sync_sweep)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CONVERGENCE = 4


def _add_common(sp):
    sp.add_argument("config", help="TOML experiment configuration")
    sp.add_argument("-o", "--outdir", default=None,
                    help="base output directory (default: config outdir)")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    dest="overrides",
                    help="override a config entry, e.g. --set trajectories.n_traj=200")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kerrsync",
        description="Dissipatively stabilized Kerr self-oscillator experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
            ("stabilize", "Fock-state stabilization sweep"),
            ("sync-sweep", "synchronization measure and entanglement sweep"),
            ("homodyne", "homodyne trajectory ensembles and cross-correlations"),
            ("check", "truncation and time-step convergence report"),
            ("export-hinton", "steady-state Hinton CSV at one detuning")):
        sp = sub.add_parser(name, help=helptext)
        _add_common(sp)
        if name == "export-hinton":
            sp.add_argument("--delta", type=float, required=True,
                            help="detuning difference between the oscillators")
            sp.add_argument("--out", default=None,
                            help="output CSV path (default under the result dir)")
    return parser


_KIND_FOR_COMMAND = {"stabilize": ("stabilize",),
                     "sync-sweep": ("sync-sweep",),
                     "homodyne": ("homodyne",),
                     "check": ("stabilize", "sync-sweep", "homodyne"),
                     "export-hinton": ("sync-sweep", "homodyne")}


def _export_hinton(cfg, outdir, delta: float, out: str | None) -> Path:
    import numpy as np

    from .evolve import steady_state_direct
    from .measures import hinton_export
    from .models import build_coupled_effective_model
    from .qspace import FockSpace

    if cfg.tier != "effective":
        raise ConfigError("export-hinton renders the effective coupled state")
    dims = cfg.dims if len(cfg.dims) == 2 else (6, 6)
    base, alpha = _effective_base(cfg)
    J = max(cfg.J, key=abs)
    J_lin, J_nn = _coupling_terms(cfg, J, alpha)
    p1 = replace(base, Delta_hat=+0.5 * delta)
    p2 = replace(base, Delta_hat=-0.5 * delta)
    model = build_coupled_effective_model(p1, p2, J_lin, FockSpace(dims),
                                          J_nn=J_nn)
    rho = steady_state_direct(model, check_degenerate=False,
                              residual_rtol=cfg.solver.residual_rtol).rho
    if out is not None:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / f"hinton_delta_{np.format_float_positional(delta)}.csv"
    hinton_export(rho, path)
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = apply_overrides(load_raw(args.config), args.overrides)
        cfg = parse_config(raw)
        if cfg.kind not in _KIND_FOR_COMMAND[args.command]:
            raise ConfigError(
                f"command {args.command!r} cannot run a {cfg.kind!r} config")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = Path(args.outdir or cfg.outdir) / cfg.name
    try:
        if args.command == "stabilize":
            summary = run_stabilize(cfg, outdir)
            fid = summary["fidelity"]
            print(f"stabilize '{cfg.name}': fidelity {fid['min']:.4f}"
                  f"..{fid['max']:.4f} over {cfg.sweep.points} points "
                  f"-> {outdir}")
        elif args.command == "sync-sweep":
            summary = run_sync_sweep(cfg, outdir)
            g = summary["groups"].get(str(float(summary["J_flagged"])), {})
            ratio = g.get("blockade_ratio")
            print(f"sync-sweep '{cfg.name}': J={summary['J_flagged']} "
                  f"S_max={g.get('S_max', float('nan')):.4f} "
                  f"blockade_ratio={ratio if ratio is None else round(ratio, 4)} "
                  f"-> {outdir}")
        elif args.command == "homodyne":
            summary = run_homodyne_experiment(cfg, outdir)
            print(f"homodyne '{cfg.name}': pearson(xcorr,S)="
                  f"{summary['pearson_xcorr_S']:.4f} "
                  f"zero/peak={summary['zero_over_peak']:.4f} -> {outdir}")
        elif args.command == "check":
            report = convergence_check(cfg)
            rd = ResultDir(outdir)
            rd.write_json("convergence.json", report)
            for c in report["checks"]:
                ok = (c["abs_change"] <= c["threshold"] if c["statistical"]
                      else c["rel_change"] < c["threshold"])
                print(f"{'PASS' if ok else 'FAIL'} {c['name']}: "
                      f"rel_change={c['rel_change']:.3e} "
                      f"(threshold {c['threshold']:.3e})")
            if not report["passed"]:
                print("convergence check failed", file=sys.stderr)
                return EXIT_CONVERGENCE
            print(f"convergence check passed -> {outdir / 'convergence.json'}")
        elif args.command == "export-hinton":
            path = _export_hinton(cfg, outdir, args.delta, args.out)
            print(f"hinton export -> {path}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailureRateError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
