"""Experiment configuration: TOML schema, unit handling, validation, hashing.

Frequency-like values accept either a bare number (already in rad/µs) or a
string with a unit suffix ("30 MHz", "2 GHz", "100 kHz"). Paper-style MHz
numbers are consumed verbatim as rad/µs equivalents (30 MHz -> 30.0), so the
suffixes scale relative to MHz. The loader resolves every value, applies
defaults, and exposes a canonical nested dict whose SHA-256 identifies the
experiment; formatting and unit spelling do not affect the hash.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .models import CircuitParams, EffectiveKerrParams, OscillatorParams

KINDS = ("stabilize", "sync-sweep", "homodyne")
TIERS = ("full", "displaced", "effective")

_UNIT_SCALE = {
    "khz": 1e-3,
    "mhz": 1.0,
    "ghz": 1e3,
    "rad/us": 1.0,
    "1/us": 1.0,
    "us": 1.0,
}


class ConfigError(ValueError):
    """Configuration file is malformed or inconsistent."""


def parse_quantity(value, where: str = "") -> float:
    """Bare numbers pass through; strings carry a unit suffix ("0.1 MHz")."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        parts = value.split()
        if len(parts) == 2:
            try:
                num = float(parts[0])
            except ValueError as exc:
                raise ConfigError(f"{where}: cannot parse number in {value!r}") from exc
            scale = _UNIT_SCALE.get(parts[1].lower())
            if scale is None:
                raise ConfigError(
                    f"{where}: unknown unit {parts[1]!r} "
                    f"(use kHz, MHz, GHz, rad/us)"
                )
            return num * scale
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: cannot parse quantity {value!r}") from exc
    raise ConfigError(f"{where}: expected a number or quantity string, got {value!r}")


def _parse_complex(value, where: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(float(value), 0.0)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise ConfigError(f"{where}: expected a number or [re, im] pair")


_OSC_FIELDS = ("Delta_a", "Delta_c", "Delta_d", "K", "chi_ac", "chi_ad",
               "eps_a", "eps_c", "eps_d", "kappa_a", "kappa_c", "kappa_d")


@dataclass(frozen=True)
class SweepAxis:
    name: str
    start: float
    stop: float
    points: int

    def values(self):
        import numpy as np
        return np.linspace(self.start, self.stop, self.points)


@dataclass(frozen=True)
class TrajectorySettings:
    """Ensemble settings for stochastic trajectory runs.

    ``tau_max`` bounds the cross-correlation lag grid. The default covers a
    few periods of the two-photon exchange oscillation (period 2pi/(2K) is
    about 0.1 us), whose extremum sits within the first period, while staying
    short against the dissipative time 1/gamma of about 1.1 us over which a
    slow photon-number hopping background builds up between the oscillators;
    that background carries no phase-locking information.
    """

    n_traj: int = 500
    t_burn: float = 2.0
    t_avg: float = 20.0
    tau_max: float = 0.5
    workers: int = 1
    block_size: int = 100


@dataclass(frozen=True)
class OptimizeSettings:
    enabled: bool = True
    half_width: float = 20.0
    evals: int = 120
    warm_start: bool = True


@dataclass(frozen=True)
class SolverSettings:
    dt: float | None = None
    residual_rtol: float = 1e-10
    check_degenerate: bool = True
    method: str = "direct"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str
    tier: str
    seed: int
    outdir: str
    sweep: SweepAxis
    dims: tuple
    dims_optimize: tuple
    oscillator: OscillatorParams | None
    n0: int
    J: tuple
    J_lin: complex | None
    include_nn: bool
    effective_overrides: dict
    solver: SolverSettings
    trajectories: TrajectorySettings
    optimize: OptimizeSettings
    canonical: dict = field(repr=False, compare=False, default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical, sort_keys=True).encode()
        ).hexdigest()


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(sec)


def _pop_quantity(sec: dict, key: str, where: str, default=None) -> float:
    if key not in sec:
        if default is None:
            raise ConfigError(f"{where}: missing required key {key!r}")
        return float(default)
    return parse_quantity(sec.pop(key), f"{where}.{key}")


def _reject_unknown(sec: dict, where: str):
    if sec:
        raise ConfigError(f"{where}: unknown keys {sorted(sec)}")


def _parse_oscillator(sec: dict) -> OscillatorParams:
    vals = {k: _pop_quantity(sec, k, "oscillator") for k in _OSC_FIELDS}
    _reject_unknown(sec, "[oscillator]")
    try:
        return OscillatorParams(**vals)
    except ValueError as exc:
        raise ConfigError(f"[oscillator]: {exc}") from exc


def load_raw(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return _toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error in {path}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    return parse_config(load_raw(path))


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw config mapping and resolve all units and defaults."""
    raw = dict(raw)
    name = raw.pop("name", None)
    kind = raw.pop("kind", None)
    if not isinstance(name, str) or not name:
        raise ConfigError("top-level 'name' (non-empty string) is required")
    if kind not in KINDS:
        raise ConfigError(f"top-level 'kind' must be one of {KINDS}, got {kind!r}")
    default_tier = "displaced" if kind == "stabilize" else "effective"
    tier = raw.pop("tier", default_tier)
    if tier not in TIERS:
        raise ConfigError(f"'tier' must be one of {TIERS}, got {tier!r}")
    seed = raw.pop("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("'seed' must be a nonnegative integer")
    outdir = raw.pop("outdir", "results")

    sweep_sec = _section(raw, "sweep")
    raw.pop("sweep", None)
    axis = sweep_sec.pop("axis", "Delta_a" if kind == "stabilize" else "Delta_hat")
    try:
        start = parse_quantity(sweep_sec.pop("start"), "sweep.start")
        stop = parse_quantity(sweep_sec.pop("stop"), "sweep.stop")
        points = int(sweep_sec.pop("points"))
    except KeyError as exc:
        raise ConfigError(f"[sweep]: missing {exc.args[0]!r}") from exc
    if points < 1:
        raise ConfigError("[sweep]: points must be >= 1")
    if points > 1 and stop <= start:
        raise ConfigError("[sweep]: stop must exceed start for multi-point sweeps")
    _reject_unknown(sweep_sec, "[sweep]")
    sweep = SweepAxis(name=str(axis), start=start, stop=stop, points=points)

    trunc = _section(raw, "truncation")
    raw.pop("truncation", None)
    default_dims = {"stabilize": [6, 4, 4], "homodyne": [5, 5]}.get(kind, [6, 6])
    dims = tuple(int(d) for d in trunc.pop("dims", default_dims))
    dims_opt = tuple(int(d) for d in trunc.pop("dims_optimize", [6, 3, 3]))
    _reject_unknown(trunc, "[truncation]")

    osc_sec = _section(raw, "oscillator")
    raw.pop("oscillator", None)
    n0 = osc_sec.pop("n0", 1)
    if not isinstance(n0, int) or n0 < 1:
        raise ConfigError("[oscillator]: n0 must be an integer >= 1")
    oscillator = _parse_oscillator(osc_sec) if osc_sec else None
    if kind == "stabilize" and oscillator is None:
        raise ConfigError("kind 'stabilize' requires an [oscillator] table")

    coup = _section(raw, "coupling")
    raw.pop("coupling", None)
    default_J = {"stabilize": [0.0], "sync-sweep": [-2.0, -4.0, -6.0]}.get(
        kind, [-6.0])
    J_raw = coup.pop("J", default_J)
    if not isinstance(J_raw, (list, tuple)):
        J_raw = [J_raw]
    if not J_raw:
        raise ConfigError("[coupling]: J must hold at least one value")
    J = tuple(parse_quantity(v, "coupling.J") for v in J_raw)
    J_lin = _parse_complex(coup.pop("J_lin"), "coupling.J_lin") if "J_lin" in coup \
        else None
    if J_lin is not None and len(J) > 1:
        raise ConfigError("[coupling]: explicit J_lin needs a single J value")
    include_nn = bool(coup.pop("include_nn", True))
    _reject_unknown(coup, "[coupling]")
    if kind == "homodyne" and len(J) != 1:
        raise ConfigError("[coupling]: homodyne runs take a single J value")

    eff = _section(raw, "effective")
    raw.pop("effective", None)
    eff_overrides = {}
    for key in ("K", "kappa_a", "kappa_lin", "gamma_up", "gamma_down"):
        if key in eff:
            eff_overrides[key] = _pop_quantity(eff, key, "effective")
    if "alpha" in eff:
        eff_overrides["alpha"] = _parse_complex(eff.pop("alpha"), "effective.alpha")
    _reject_unknown(eff, "[effective]")
    if kind in ("sync-sweep", "homodyne") and tier == "effective":
        have = oscillator is not None or {
            "K", "kappa_a", "kappa_lin", "gamma_up", "gamma_down", "alpha"
        } <= set(eff_overrides)
        if not have:
            raise ConfigError(
                f"kind {kind!r} needs either an [oscillator] table to derive the "
                "effective rates from, or a complete [effective] table "
                "(K, kappa_a, kappa_lin, gamma_up, gamma_down, alpha)"
            )

    sol = _section(raw, "solver")
    raw.pop("solver", None)
    dt = parse_quantity(sol.pop("dt"), "solver.dt") if "dt" in sol else None
    solver = SolverSettings(
        dt=dt,
        residual_rtol=float(sol.pop("residual_rtol", 1e-10)),
        check_degenerate=bool(sol.pop("check_degenerate", True)),
        method=str(sol.pop("method", "direct")),
    )
    if solver.method not in ("direct", "trajectory-average"):
        raise ConfigError("[solver]: method must be 'direct' or 'trajectory-average'")
    _reject_unknown(sol, "[solver]")

    tr = _section(raw, "trajectories")
    raw.pop("trajectories", None)
    trajectories = TrajectorySettings(
        n_traj=int(tr.pop("n_traj", 500)),
        t_burn=parse_quantity(tr.pop("t_burn", 2.0), "trajectories.t_burn"),
        t_avg=parse_quantity(tr.pop("t_avg", 20.0), "trajectories.t_avg"),
        tau_max=parse_quantity(tr.pop("tau_max", 0.5), "trajectories.tau_max"),
        workers=int(tr.pop("workers", 1)),
        block_size=int(tr.pop("block_size", 100)),
    )
    _reject_unknown(tr, "[trajectories]")
    if trajectories.n_traj < 1 or trajectories.workers < 1 or trajectories.block_size < 1:
        raise ConfigError("[trajectories]: n_traj, workers, block_size must be >= 1")
    if kind == "homodyne" and trajectories.n_traj < 100:
        raise ConfigError("[trajectories]: homodyne runs need n_traj >= 100")

    opt = _section(raw, "optimize")
    raw.pop("optimize", None)
    optimize = OptimizeSettings(
        enabled=bool(opt.pop("enabled", True)),
        half_width=parse_quantity(opt.pop("half_width", 20.0), "optimize.half_width"),
        evals=int(opt.pop("evals", 120)),
        warm_start=bool(opt.pop("warm_start", True)),
    )
    _reject_unknown(opt, "[optimize]")
    if not 1 <= optimize.evals <= 200:
        raise ConfigError("[optimize]: evals must be in 1..200")

    _reject_unknown(raw, "top level")

    cfg = ExperimentConfig(
        name=name, kind=kind, tier=tier, seed=seed, outdir=outdir, sweep=sweep,
        dims=dims, dims_optimize=dims_opt, oscillator=oscillator, n0=n0, J=J,
        J_lin=J_lin, include_nn=include_nn, effective_overrides=eff_overrides,
        solver=solver, trajectories=trajectories, optimize=optimize,
    )
    object.__setattr__(cfg, "canonical", _canonical_dict(cfg))
    return cfg


def _canonical_dict(cfg: ExperimentConfig) -> dict:
    osc = None
    if cfg.oscillator is not None:
        osc = {k: getattr(cfg.oscillator, k) for k in _OSC_FIELDS}
    eff = {
        k: ([v.real, v.imag] if isinstance(v, complex) else v)
        for k, v in sorted(cfg.effective_overrides.items())
    }
    return {
        "name": cfg.name,
        "kind": cfg.kind,
        "tier": cfg.tier,
        "seed": cfg.seed,
        "sweep": {"axis": cfg.sweep.name, "start": cfg.sweep.start,
                  "stop": cfg.sweep.stop, "points": cfg.sweep.points},
        "dims": list(cfg.dims),
        "dims_optimize": list(cfg.dims_optimize),
        "oscillator": osc,
        "n0": cfg.n0,
        "J": list(cfg.J),
        "J_lin": None if cfg.J_lin is None else [cfg.J_lin.real, cfg.J_lin.imag],
        "include_nn": cfg.include_nn,
        "effective": eff,
        "solver": {"dt": cfg.solver.dt, "residual_rtol": cfg.solver.residual_rtol,
                   "check_degenerate": cfg.solver.check_degenerate,
                   "method": cfg.solver.method},
        "trajectories": {"n_traj": cfg.trajectories.n_traj,
                         "t_burn": cfg.trajectories.t_burn,
                         "t_avg": cfg.trajectories.t_avg,
                         "tau_max": cfg.trajectories.tau_max,
                         "block_size": cfg.trajectories.block_size},
        "optimize": {"enabled": cfg.optimize.enabled,
                     "half_width": cfg.optimize.half_width,
                     "evals": cfg.optimize.evals,
                     "warm_start": cfg.optimize.warm_start},
    }


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply 'section.key=value' strings onto a raw config mapping."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        path, _, val = item.partition("=")
        keys = path.strip().split(".")
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val.strip()
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-table")
        node[keys[-1]] = parsed
    return out
