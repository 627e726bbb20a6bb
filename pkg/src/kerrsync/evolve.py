"""Master-equation integration, steady states, and stochastic homodyne trajectories.

The stochastic integrator is a split-step scheme: the deterministic Lindblad
part advances by the exact propagator exp(L dt) (dense, precomputed once per
grid), and the homodyne measurement back-action enters as an Euler-Maruyama
kick evaluated at the left grid point, followed by re-hermitization and trace
renormalization. The deterministic half is therefore exact; only the
measurement term carries the integrator's weak O(dt) bias.

Noise streams are counter-based (Philox), keyed per trajectory from
(master_seed, trajectory_index); within a trajectory the counter layout is a
fixed (step, channel) row-major grid, so any (channel, step) increment is
reproducible and independent of execution order. Trajectories are processed in
fixed-size blocks and reduced in block-index order, which makes ensemble
results byte-identical for a given (master_seed, n_traj, block_size)
regardless of worker count or scheduling.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .qspace import (
    DENSE_FALLBACK_DIM,
    DensityMatrix,
    FockSpace,
    Operator,
    Superoperator,
    hermiticity_defect,
)
from .qspace import liouvillian as _build_liouvillian

DEFAULT_BLOCK_SIZE = 100
STIFF_DT_FACTOR = 50.0
TRACE_ABORT_TOL = 1e-6
SOLVER_NNZ_CAP = 4_000_000


class DegenerateSteadyStateError(RuntimeError):
    """The Liouvillian nullspace is not one-dimensional (or the solve broke down)."""


class TrajectoryAbort(RuntimeError):
    """A stochastic trajectory lost its trace (numerical blow-up)."""


def _rho_array(rho, space: FockSpace) -> np.ndarray:
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=np.complex128)
    n = space.size
    if r.shape != (n, n):
        raise ValueError(f"state shape {r.shape} does not match space dim {n}")
    return np.asarray(r, dtype=np.complex128)


def _opnorm2(data) -> float:
    """Largest singular value; dense for small dims, power iteration otherwise."""
    n = data.shape[0]
    if n <= DENSE_FALLBACK_DIM:
        return float(np.linalg.norm(data.toarray() if sp.issparse(data) else data, 2))
    g = data.getH() @ data
    v = np.full(n, 1.0 / np.sqrt(n), dtype=np.complex128)
    lam = 0.0
    for _ in range(60):
        w = g @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        lam = nrm
    return float(np.sqrt(lam))


@dataclass
class LindbladModel:
    """Hamiltonian plus weighted collapse operators on one FockSpace."""

    H: Operator
    collapses: list
    space: FockSpace

    def __post_init__(self):
        self.collapses = [(float(rate), op) for rate, op in self.collapses]
        if self.H.space.dims != self.space.dims:
            raise ValueError("Hamiltonian space does not match model space")
        defect = hermiticity_defect(self.H.data)
        scale = max(1.0, float(abs(self.H.data).max()) if self.H.data.nnz else 1.0)
        if defect > 1e-12 * scale:
            raise ValueError(f"Hamiltonian hermiticity defect {defect:.3e} too large")
        for rate, op in self.collapses:
            if rate < 0:
                raise ValueError(f"collapse rate must be >= 0, got {rate}")
            if op.space.dims != self.space.dims:
                raise ValueError("collapse operator space does not match model space")
        self._liouv = None
        self._stiff = None

    def liouvillian(self) -> Superoperator:
        if self._liouv is None:
            self._liouv = _build_liouvillian(self.H, self.collapses)
        return self._liouv

    def stiff_rate(self) -> float:
        """Max over channels of rate * ||C||_2^2; sets the stochastic step bound."""
        if self._stiff is None:
            rates = [rate * _opnorm2(op.data) ** 2 for rate, op in self.collapses if rate > 0]
            self._stiff = max(rates) if rates else 0.0
        return self._stiff

    def max_stochastic_dt(self) -> float:
        s = self.stiff_rate()
        return np.inf if s == 0.0 else 1.0 / (STIFF_DT_FACTOR * s)


@dataclass
class TrajectoryRecord:
    """One homodyne trajectory: times are the left edges of the integration
    intervals; currents[i, k] is the channel-i current over [t_k, t_k + dt) and
    x_expect[i, k] the conditioned quadrature expectation at t_k."""

    times: np.ndarray
    currents: np.ndarray
    x_expect: np.ndarray
    seed: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.currents = np.atleast_2d(np.asarray(self.currents, dtype=np.float64))
        self.x_expect = np.atleast_2d(np.asarray(self.x_expect, dtype=np.float64))
        n = self.times.size
        if self.currents.shape[1] != n or self.x_expect.shape[1] != n:
            raise ValueError("times, currents, and x_expect must share one length")
        if self.currents.shape[0] != self.x_expect.shape[0]:
            raise ValueError("currents and x_expect must have the same channel count")
        if n > 1:
            d = np.diff(self.times)
            if d.min() <= 0:
                raise ValueError("times must be strictly increasing")
            if abs(d.max() - d.min()) > 1e-9 * max(abs(d.max()), 1e-300):
                raise ValueError("times must be uniformly spaced")

    @property
    def n_channels(self) -> int:
        return self.currents.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def to_csv(self, path):
        cols = ["t"] + [f"J_{i + 1}" for i in range(self.n_channels)] \
            + [f"x{i + 1}" for i in range(self.n_channels)]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(self.times.size):
                row = [repr(float(self.times[k]))]
                row += [repr(float(v)) for v in self.currents[:, k]]
                row += [repr(float(v)) for v in self.x_expect[:, k]]
                fh.write(",".join(row) + "\n")

    def to_npz(self, path):
        np.savez_compressed(path, times=self.times, currents=self.currents,
                            x_expect=self.x_expect, seed=np.uint64(self.seed))

    @classmethod
    def from_npz(cls, path):
        with np.load(path) as z:
            return cls(times=z["times"], currents=z["currents"],
                       x_expect=z["x_expect"], seed=int(z["seed"]))


@dataclass
class SteadyState:
    """Steady-state density matrix with its residual and solution method tag."""

    rho: DensityMatrix
    residual: float
    method: str
    clip_magnitude: float = 0.0


# ---------------------------------------------------------------------------
# deterministic evolution


def _check_uniform_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=np.float64)
    if t.ndim != 1 or t.size < 1:
        raise ValueError("t_grid must be a 1-D array with at least one point")
    if t.size > 1:
        d = np.diff(t)
        if d.min() <= 0:
            raise ValueError("t_grid must be strictly increasing")
        if abs(d.max() - d.min()) > 1e-9 * d.max():
            raise ValueError("t_grid must be uniform")
    return t


def evolve_me(model: LindbladModel, rho0, t_grid) -> list:
    """Integrate the master equation on a uniform grid; returns one
    DensityMatrix per grid point (state at that time).

    Uses Krylov-type exact exponential action on the sparse Liouvillian, so
    stiff models (rates spanning many decades) need no step-size control. A
    trace drift beyond 1e-8 raises, signalling a failed integration.
    """
    t = _check_uniform_grid(t_grid)
    r0 = _rho_array(rho0, model.space)
    L = model.liouvillian().data
    v0 = r0.ravel(order="F")
    tr0 = complex(np.trace(r0))
    n = model.space.size
    if n <= DENSE_FALLBACK_DIM:
        # Small spaces take a precomputed dense step propagator; unlike the
        # Krylov route its cost does not grow with t * ||L||, so very long
        # horizons (stationarity checks) stay cheap.
        out = np.empty((t.size, n * n), dtype=np.complex128)
        v = sla.expm((L * t[0]).toarray()) @ v0 if t[0] != 0.0 else v0.copy()
        out[0] = v
        if t.size > 1:
            P = sla.expm((L * (t[1] - t[0])).toarray())
            for k in range(1, t.size):
                v = P @ v
                out[k] = v
    elif t.size == 1:
        out = spla.expm_multiply(L * t[0], v0)[None, :] if t[0] != 0.0 else v0[None, :]
    else:
        out = spla.expm_multiply(L, v0, start=t[0], stop=t[-1], num=t.size,
                                 endpoint=True, traceA=complex(L.diagonal().sum()))
    states = []
    for k in range(t.size):
        r = out[k].reshape((n, n), order="F")
        drift = abs(np.trace(r) - tr0)
        if drift > 1e-8 * max(1.0, abs(tr0)):
            raise RuntimeError(
                f"master-equation integration lost trace by {drift:.3e} at t={t[k]}"
            )
        states.append(DensityMatrix(model.space, (r + r.conj().T) / 2))
    return states


# ---------------------------------------------------------------------------
# steady states


def _trace_row_solve(L: sp.csc_matrix, n: int, row: int) -> np.ndarray:
    diag_idx = np.arange(n) * (n + 1)
    b = np.zeros(n * n, dtype=np.complex128)
    b[row] = 1.0
    if n <= DENSE_FALLBACK_DIM:
        A = L.toarray()
        A[row, :] = 0.0
        A[row, diag_idx] = 1.0
        return np.linalg.solve(A, b)
    coo = L.tocoo()
    keep = coo.row != row
    rows = np.concatenate([coo.row[keep], np.full(n, row)])
    cols = np.concatenate([coo.col[keep], diag_idx])
    vals = np.concatenate([coo.data[keep], np.ones(n, dtype=np.complex128)])
    A = sp.csc_matrix((vals, (rows, cols)), shape=L.shape)
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        return spla.spsolve(A, b)


def steady_state_direct(model: LindbladModel, *, check_degenerate: bool = True,
                        residual_rtol: float = 1e-10) -> SteadyState:
    """Solve L rho = 0 with a trace-normalization row replacement.

    The residual ||L rho||_inf must come out below residual_rtol * ||L||_inf.
    Uniqueness is cross-checked by re-solving with a different replaced row;
    disagreement (or a singular factorization) raises
    DegenerateSteadyStateError. Tiny negative eigenvalues down to -1e-8 are
    clipped and reported; anything lower raises.
    """
    L = model.liouvillian()
    n = model.space.size
    if L.data.nnz > SOLVER_NNZ_CAP:
        raise ValueError(
            f"Liouvillian has {L.data.nnz} nonzeros, above the direct-solver cap "
            f"{SOLVER_NNZ_CAP}"
        )
    norm = L.norm_inf()
    tol = residual_rtol * max(norm, 1.0)

    def solve(row):
        try:
            v = _trace_row_solve(L.data, n, row)
        except (spla.MatrixRankWarning, np.linalg.LinAlgError, RuntimeError) as exc:
            raise DegenerateSteadyStateError(
                f"steady-state solve with trace row {row} failed: {exc}"
            ) from exc
        if not np.all(np.isfinite(v)):
            raise DegenerateSteadyStateError(
                f"steady-state solve with trace row {row} returned non-finite entries"
            )
        r = v.reshape((n, n), order="F")
        r = (r + r.conj().T) / 2
        r = r / np.trace(r).real
        return r

    rho = solve(0)
    res = float(np.abs(L.data @ rho.ravel(order="F")).max())
    if res > tol:
        rho2 = solve((n // 2) * (n + 1))
        res2 = float(np.abs(L.data @ rho2.ravel(order="F")).max())
        if res2 > tol:
            raise DegenerateSteadyStateError(
                f"residuals {res:.3e} and {res2:.3e} exceed {tol:.3e} for two "
                "independent trace-row placements; nullspace is degenerate or "
                "the solve broke down"
            )
        rho, res = rho2, res2
    elif check_degenerate:
        rho2 = solve((n // 2) * (n + 1))
        dist = 0.5 * float(np.abs(np.linalg.eigvalsh(rho - rho2)).sum())
        if dist > 1e-3:
            raise DegenerateSteadyStateError(
                f"two trace-row placements give states {dist:.3e} apart in trace "
                "distance; the steady state is not unique"
            )

    w, V = np.linalg.eigh(rho)
    if w.min() < -1e-8:
        raise RuntimeError(
            f"steady-state solution has eigenvalue {w.min():.3e}, below the "
            "positivity tolerance -1e-8"
        )
    clip = float(-w[w < 0].sum())
    if clip > 0.0:
        w = np.clip(w, 0.0, None)
        rho = (V * w) @ V.conj().T
        rho = rho / np.trace(rho).real
    return SteadyState(rho=DensityMatrix(model.space, rho), residual=res,
                       method="direct", clip_magnitude=clip)


# ---------------------------------------------------------------------------
# stochastic homodyne engine


def _normalize_channels(measured) -> list:
    out = []
    for ch in measured:
        if len(ch) == 2:
            rate, op = ch
            phase = 0.0
        else:
            rate, op, phase = ch
        out.append((float(rate), op, float(phase)))
    return out


def _check_measured_subset(model: LindbladModel, channels):
    for rate, op, _ in channels:
        matched = False
        for crate, cop in model.collapses:
            d = (op.data - cop.data)
            scale = max(1.0, float(abs(cop.data).max()) if cop.data.nnz else 1.0)
            defect = float(abs(d).max()) if d.nnz else 0.0
            if defect <= 1e-12 * scale:
                if rate == 0.0 or abs(rate - crate) <= 1e-12 * max(crate, 1.0):
                    matched = True
                    break
        if not matched:
            raise ValueError(
                "measured channel is not among the model's collapse channels "
                "(operator and rate must match; rate 0 is allowed)"
            )


def _dense_step_matrix(L: sp.csc_matrix, dt: float, n: int) -> np.ndarray:
    """Right-multiplication matrix advancing row-major-flattened states by dt.

    For column-stacked vec the propagator is P = exp(L dt); a state stored
    row-major (C order) is the column-stacked vec of its transpose, so the
    equivalent action is Q = T P T with T the transposition permutation, and
    the block update is S_flat <- S_flat @ Q^T.
    """
    P = sla.expm((L * dt).toarray())
    Q = P.reshape(n, n, n, n).transpose(1, 0, 3, 2).reshape(n * n, n * n)
    return np.ascontiguousarray(Q.T)


def _traj_keys(master_seed: int, idx: int) -> np.ndarray:
    return np.random.SeedSequence([int(master_seed), int(idx)]).generate_state(
        2, dtype=np.uint64)


def traj_seed_token(master_seed: int, idx: int) -> int:
    """64-bit reproducibility token stored on each TrajectoryRecord."""
    return int(_traj_keys(master_seed, idx)[0])


def _block_noise(master_seed, indices, n_steps, n_chan, dt) -> np.ndarray:
    """Wiener increments, shape (B, n_steps, n_chan), one Philox stream per trajectory."""
    dW = np.empty((len(indices), n_steps, n_chan), dtype=np.float64)
    root = np.sqrt(dt)
    for j, idx in enumerate(indices):
        gen = np.random.Generator(np.random.Philox(key=_traj_keys(master_seed, idx)))
        dW[j] = gen.standard_normal((n_steps, n_chan)) * root
    return dW


def _run_block(QT, channels_dense, S, dW, dt, *, sample_mask=None, avg_from_idx=None):
    """Advance a block of trajectories through all steps.

    S: (B, n, n) states at the first grid point (modified in place).
    Returns (currents, xs, failed_step, samples_sum, samples_abs2, avg_sum, n_avg).
    """
    B, n, _ = S.shape
    n_steps = dW.shape[1]
    currents = np.empty((B, len(channels_dense), n_steps))
    xs = np.empty_like(currents)
    failed = np.full(B, -1, dtype=np.int64)
    n_samples = int(sample_mask.sum()) if sample_mask is not None else 0
    samples_sum = np.zeros((n_samples, n, n), dtype=np.complex128) if n_samples else None
    samples_abs2 = np.zeros((n_samples, n, n), dtype=np.float64) if n_samples else None
    samples_count = np.zeros(n_samples, dtype=np.int64) if n_samples else None
    sample_pos = 0
    if sample_mask is not None and sample_mask[0]:
        samples_sum[0] = S.sum(axis=0)
        samples_abs2[0] = (np.abs(S) ** 2).sum(axis=0)
        samples_count[0] = B
        sample_pos = 1
    avg_sum = np.zeros((B, n, n), dtype=np.complex128) if avg_from_idx is not None else None
    n_avg = 0

    flat = S.reshape(B, n * n)
    for k in range(n_steps):
        delta = np.zeros_like(S)
        for i, (kappa, M, Mh) in enumerate(channels_dense):
            x = 2.0 * np.real(np.einsum("ij,bji->b", M, S))
            xs[:, i, k] = x
            s = np.sqrt(kappa) * dW[:, k, i]
            currents[:, i, k] = kappa * x + s / dt
            if kappa > 0.0:
                delta += s[:, None, None] * (
                    np.matmul(M, S) + np.matmul(S, Mh) - x[:, None, None] * S
                )
        S += delta
        flat[:] = flat @ QT
        S += np.conj(np.swapaxes(S, 1, 2))
        S *= 0.5
        tr = np.einsum("bii->b", S).real
        bad = ~np.isfinite(tr) | (np.abs(tr) < TRACE_ABORT_TOL)
        if bad.any():
            fresh = bad & (failed < 0)
            failed[fresh] = k
            S[bad] = np.eye(n) / n
            tr = np.einsum("bii->b", S).real
        S /= tr[:, None, None]
        grid_idx = k + 1
        if sample_mask is not None and sample_mask[grid_idx]:
            ok = failed < 0
            samples_sum[sample_pos] = S[ok].sum(axis=0)
            samples_abs2[sample_pos] = (np.abs(S[ok]) ** 2).sum(axis=0)
            samples_count[sample_pos] = int(ok.sum())
            sample_pos += 1
        if avg_from_idx is not None and grid_idx >= avg_from_idx:
            avg_sum += S
            n_avg += 1
    return currents, xs, failed, samples_sum, samples_abs2, samples_count, avg_sum, n_avg


@dataclass
class SmeEnsembleResult:
    """Blocked-ensemble output: per-trajectory records plus reduced statistics."""

    times: np.ndarray
    seeds: np.ndarray
    failed_step: np.ndarray
    records: list | None = None
    sample_times: np.ndarray | None = None
    state_mean: np.ndarray | None = None
    state_se: np.ndarray | None = None
    avg_states: np.ndarray | None = None

    @property
    def n_success(self) -> int:
        return int((self.failed_step < 0).sum())


_POOL_CTX = None


def _pool_task(span):
    start, stop = span
    ctx = _POOL_CTX
    indices = range(start, stop)
    dW = _block_noise(ctx["seed"], indices, ctx["n_steps"], len(ctx["channels"]), ctx["dt"])
    S = np.repeat(ctx["rho0"][None, :, :], stop - start, axis=0)
    return _run_block(ctx["QT"], ctx["channels"], S, dW, ctx["dt"],
                      sample_mask=ctx["sample_mask"], avg_from_idx=ctx["avg_from_idx"])


def sme_ensemble(model: LindbladModel, measured, rho0, t_grid, n_traj, master_seed, *,
                 block_size: int = DEFAULT_BLOCK_SIZE, workers: int = 1,
                 keep_records: bool = True, sample_stride: int | None = None,
                 time_average_from: float | None = None) -> SmeEnsembleResult:
    """Run a reproducible homodyne trajectory ensemble.

    ``measured`` is a list of (rate, Operator[, lo_phase]) channels, each of
    which must appear among the model's collapse channels (rate 0 degenerates
    to no measurement). ``sample_stride`` accumulates the ensemble mean and
    standard error of the conditioned state every that-many grid points;
    ``time_average_from`` additionally returns each trajectory's conditioned
    state averaged over t >= that time. The block size is a fixed reduction
    unit: results do not depend on ``workers``.
    """
    global _POOL_CTX
    t = _check_uniform_grid(t_grid)
    if t.size < 2:
        raise ValueError("t_grid needs at least two points")
    dt = float(t[1] - t[0])
    dt_max = model.max_stochastic_dt()
    if dt > dt_max * (1 + 1e-9):
        raise ValueError(
            f"dt = {dt:.3e} exceeds the stability bound 1/({STIFF_DT_FACTOR:.0f} * "
            f"max rate) = {dt_max:.3e}"
        )
    channels = _normalize_channels(measured)
    _check_measured_subset(model, channels)
    n = model.space.size
    r0 = _rho_array(rho0, model.space)

    chans_dense = []
    for rate, op, phase in channels:
        M = op.data.toarray() * np.exp(-1j * phase)
        chans_dense.append((rate, M, M.conj().T))

    QT = _dense_step_matrix(model.liouvillian().data, dt, n)

    n_steps = t.size - 1
    sample_mask = None
    sample_times = None
    if sample_stride is not None:
        sample_mask = np.zeros(t.size, dtype=bool)
        sample_mask[::sample_stride] = True
        sample_times = t[sample_mask]
    avg_from_idx = None
    if time_average_from is not None:
        avg_from_idx = int(np.searchsorted(t, time_average_from - 1e-12 * max(1.0, dt)))
        if avg_from_idx >= t.size:
            raise ValueError("time_average_from lies beyond the grid")

    spans = [(s, min(s + block_size, n_traj)) for s in range(0, n_traj, block_size)]
    ctx = {
        "seed": int(master_seed), "n_steps": n_steps, "dt": dt, "rho0": r0,
        "QT": QT, "channels": chans_dense, "sample_mask": sample_mask,
        "avg_from_idx": avg_from_idx,
    }

    results = []
    if workers > 1 and len(spans) > 1:
        _POOL_CTX = ctx
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_pool_task, spans))
        finally:
            _POOL_CTX = None
    else:
        _POOL_CTX = ctx
        try:
            results = [_pool_task(span) for span in spans]
        finally:
            _POOL_CTX = None

    times = t[:-1]
    seeds = np.array([traj_seed_token(master_seed, i) for i in range(n_traj)],
                     dtype=np.uint64)
    failed = np.concatenate([r[2] for r in results]) if results else np.empty(0, np.int64)
    records = None
    if keep_records:
        records = []
        for (s0, _), res in zip(spans, results):
            currents, xs = res[0], res[1]
            for j in range(currents.shape[0]):
                records.append(TrajectoryRecord(
                    times=times, currents=currents[j], x_expect=xs[j],
                    seed=int(seeds[s0 + j]),
                ))

    state_mean = state_se = None
    if sample_mask is not None:
        n_samples = int(sample_mask.sum())
        total = np.zeros((n_samples, n, n), dtype=np.complex128)
        total2 = np.zeros((n_samples, n, n), dtype=np.float64)
        counts = np.zeros(n_samples, dtype=np.float64)
        for res in results:
            total += res[3]
            total2 += res[4]
            counts += res[5]
        counts[counts == 0] = 1.0
        cc = counts[:, None, None]
        state_mean = total / cc
        var = np.maximum(total2 / cc - np.abs(state_mean) ** 2, 0.0)
        state_se = np.sqrt(var / cc)

    avg_states = None
    if avg_from_idx is not None:
        parts = [res[6] / max(res[7], 1) for res in results]
        avg_states = np.concatenate(parts, axis=0)
        avg_states[failed >= 0] = np.nan

    return SmeEnsembleResult(times=times, seeds=seeds, failed_step=failed,
                             records=records, sample_times=sample_times,
                             state_mean=state_mean, state_se=state_se,
                             avg_states=avg_states)


def sme_homodyne_trajectory(model: LindbladModel, measured_channels, rho0, t_grid,
                            seed) -> TrajectoryRecord:
    """Single stochastic homodyne trajectory (Euler-Maruyama measurement kick,
    exact deterministic propagation, per-step renormalization).

    Equivalent to a one-trajectory ensemble with this master seed: the noise
    stream matches trajectory index 0 of any ensemble sharing the seed and
    grid (values then agree to floating-point reduction order, which varies
    with batch shape). Aborts with TrajectoryAbort if the conditioned state's
    trace collapses below 1e-6.
    """
    res = sme_ensemble(model, measured_channels, rho0, t_grid, 1, seed,
                       block_size=1, keep_records=True)
    if res.failed_step[0] >= 0:
        raise TrajectoryAbort(
            f"trajectory (seed token {int(res.seeds[0])}) lost its trace at step "
            f"{int(res.failed_step[0])} of {res.times.size}; the state norm fell "
            f"below {TRACE_ABORT_TOL}"
        )
    return res.records[0]


def steady_state_trajectory_average(model: LindbladModel, n_traj: int, t_burn: float,
                                    t_avg: float, seed: int, *, measured=None,
                                    dt: float | None = None, workers: int = 1,
                                    block_size: int = DEFAULT_BLOCK_SIZE,
                                    min_relax_rate: float | None = None) -> SteadyState:
    """Steady state as the trajectory-and-time average of conditioned states.

    Each trajectory evolves for t_burn + t_avg; its conditioned state is
    averaged over t >= t_burn, and the per-trajectory averages are averaged in
    fixed index order. By default every collapse channel with a positive rate
    is monitored (any monitoring choice has the same ensemble mean); pass
    ``measured`` to monitor a subset. At least 90% of trajectories must
    succeed. Since the estimate carries statistical noise, negative
    eigenvalues are clipped up to a loose 1e-3 budget (reported in
    clip_magnitude) instead of the direct solver's 1e-8.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if min_relax_rate is not None and t_burn < 5.0 / min_relax_rate:
        warnings.warn(
            f"t_burn = {t_burn} is shorter than 5 relaxation times "
            f"(5/{min_relax_rate} = {5.0 / min_relax_rate:.3g})",
            stacklevel=2,
        )
    if measured is None:
        measured = [(rate, op) for rate, op in model.collapses if rate > 0]
    dt_max = model.max_stochastic_dt()
    if dt is None:
        dt = dt_max
    n_steps = max(int(np.ceil((t_burn + t_avg) / dt)), 2)
    t_grid = np.linspace(0.0, n_steps * dt, n_steps + 1)
    n = model.space.size
    rho0 = np.eye(n, dtype=np.complex128) / n
    res = sme_ensemble(model, measured, rho0, t_grid, n_traj, seed,
                       block_size=block_size, workers=workers, keep_records=False,
                       time_average_from=t_burn)
    ok = res.failed_step < 0
    if ok.sum() < 0.9 * n_traj:
        raise RuntimeError(
            f"only {int(ok.sum())}/{n_traj} trajectories succeeded; "
            "need at least 90%"
        )
    rho = res.avg_states[ok].mean(axis=0)
    rho = (rho + rho.conj().T) / 2
    w, V = np.linalg.eigh(rho)
    clip = float(-w[w < 0].sum())
    if clip > 1e-3:
        raise RuntimeError(
            f"trajectory-averaged state has negative weight {clip:.3e}, beyond "
            "the statistical clipping budget 1e-3"
        )
    if clip > 0.0:
        w = np.clip(w, 0.0, None)
        rho = (V * w) @ V.conj().T
    rho = rho / np.trace(rho).real
    L = model.liouvillian()
    residual = float(np.abs(L.data @ rho.ravel(order="F")).max())
    return SteadyState(rho=DensityMatrix(model.space, rho), residual=residual,
                       method="trajectory-average", clip_magnitude=clip)
