"""Observables: Fock fidelity, photon statistics, Wigner maps, relative-phase
synchronization, entanglement negativity, Hinton exports, and homodyne
cross-correlations.

Quadrature convention: X = (a + a†)/√2 scaling underlies the Wigner map, so
vacuum has variance 1/2 along each axis and the map integrates to one over
the (x, p) plane. The relative-phase distribution is built from coherence
sums: P(φ) = (1/2π) Σ_k C_k e^{ikφ} with C_k = Σ_{n,m} ⟨n+k, m|ρ|n, m+k⟩,
renormalized to unit integral so a phase-symmetric state gives exactly the
uniform density and a zero synchronization measure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate as _sig_correlate
from scipy.special import gammaln

from .qspace import DensityMatrix, partial_transpose

PHASE_GRID_DEFAULT = 512
HINTON_THRESHOLD = 1e-6


def _as_matrix(rho) -> np.ndarray:
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    r = np.asarray(r, dtype=np.complex128)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"expected a square density matrix, got shape {r.shape}")
    return r


def fock_fidelity(rho, n0: int) -> float:
    """Population of Fock level n0 (fidelity of rho to the pure state |n0>)."""
    r = _as_matrix(rho)
    if not 0 <= n0 < r.shape[0]:
        raise ValueError(f"n0 = {n0} outside truncation dim {r.shape[0]}")
    return float(np.real(r[n0, n0]))


def photon_distribution(rho) -> np.ndarray:
    """Diagonal of a single-mode density matrix in the Fock basis."""
    return np.real(np.diag(_as_matrix(rho))).copy()


def _laguerre_table(z: np.ndarray, k: int, n_max: int) -> np.ndarray:
    """Associated Laguerre values L_n^(k)(z) for n = 0..n_max, stacked on axis 0.

    Upward three-term recursion; stable for the small n needed here.
    """
    out = np.empty((n_max + 1,) + z.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 1.0 + k - z
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1 + k - z) * out[n] - (n + k) * out[n - 1]) / (n + 1)
    return out


def wigner(rho, x_grid, p_grid) -> np.ndarray:
    """Wigner map on a cartesian grid; W[i, j] = W(x_grid[i], p_grid[j]).

    Displaced-parity series: at the origin W = (1/π) Σ_n (−1)^n ρ_nn, and the
    map integrates to one on a sufficiently wide grid.
    """
    r = _as_matrix(rho)
    dim = r.shape[0]
    x = np.asarray(x_grid, dtype=np.float64)
    p = np.asarray(p_grid, dtype=np.float64)
    for g in (x, p):
        if g.size > 1 and np.diff(g).max() > 0.4:
            warnings.warn(
                "Wigner grid spacing above 0.4 undersamples vacuum-scale structure",
                stacklevel=2,
            )
    X, P = np.meshgrid(x, p, indexing="ij")
    z = 2.0 * (X**2 + P**2)
    beta2 = np.sqrt(2.0) * (X + 1j * P)

    signs = (-1.0) ** np.arange(dim)
    W = np.zeros_like(X)
    diag = np.real(np.diag(r))
    lag0 = _laguerre_table(z, 0, dim - 1)
    W += np.tensordot(signs * diag, lag0, axes=(0, 0))
    for k in range(1, dim):
        coh = np.diagonal(r, offset=k)
        if not np.any(coh):
            continue
        n = np.arange(dim - k)
        pref = signs[: dim - k] * np.exp(0.5 * (gammaln(n + 1) - gammaln(n + k + 1)))
        amp = np.tensordot(pref * coh, _laguerre_table(z, k, dim - k - 1), axes=(0, 0))
        W += 2.0 * np.real(amp * beta2**k)
    return W * np.exp(-(X**2 + P**2)) / np.pi


@dataclass
class PhaseDistribution:
    """Relative-phase density on a uniform grid over [0, 2π)."""

    phis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.phis = np.asarray(self.phis, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.phis.shape != self.values.shape:
            raise ValueError("phis and values must have matching shapes")

    def integral(self) -> float:
        return float(self.values.mean() * 2.0 * np.pi)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("phi,P\n")
            for phi, v in zip(self.phis, self.values):
                fh.write(f"{float(phi)!r},{float(v)!r}\n")


def phase_coherence_sums(rho_two_mode) -> np.ndarray:
    """C_k = Σ_{n,m} <n+k, m|ρ|n, m+k> for k = 0..N−1 (negative k by conjugation)."""
    r = _as_matrix(rho_two_mode)
    size = r.shape[0]
    N = int(round(np.sqrt(size)))
    if N * N != size:
        raise ValueError(f"two-mode state of size {size} does not factor as (N, N)")
    t = r.reshape(N, N, N, N)
    C = np.empty(N, dtype=np.complex128)
    for k in range(N):
        w = N - k
        C[k] = np.einsum("nmnm->", t[k:, :w, :w, k:])
    return C


def relative_phase_distribution(rho_two_mode, n_phi: int = PHASE_GRID_DEFAULT
                                ) -> PhaseDistribution:
    """Distribution of the phase difference between two modes.

    Built from the coherence sums C_k (see phase_coherence_sums); the result is
    renormalized to unit integral over [0, 2π).
    """
    C = phase_coherence_sums(rho_two_mode)
    phis = np.arange(n_phi) * (2.0 * np.pi / n_phi)
    k = np.arange(C.size)
    phase = np.exp(1j * np.outer(k, phis))
    vals = (C[0].real + 2.0 * np.real(C[1:] @ phase[1:])) / (2.0 * np.pi)
    norm = vals.mean() * 2.0 * np.pi
    if norm <= 0:
        raise ValueError("phase distribution has non-positive integral")
    return PhaseDistribution(phis=phis, values=vals / norm)


def sync_measure(rho_two_mode, n_phi: int = PHASE_GRID_DEFAULT) -> float:
    """S = 2π max_φ P(φ) − 1; zero for a phase-symmetric state."""
    dist = relative_phase_distribution(rho_two_mode, n_phi)
    return float(2.0 * np.pi * dist.values.max() - 1.0)


def log_negativity(rho_two_mode, dims) -> float:
    """log2 of the trace norm of the partial transpose (entanglement monotone)."""
    pt = partial_transpose(rho_two_mode, 1, dims)
    lam = np.linalg.eigvalsh(pt)
    return float(np.log2(np.abs(lam).sum()))


def hinton_export(rho_two_mode, path, threshold: float = HINTON_THRESHOLD):
    """Write two-mode matrix elements above threshold as CSV rows
    (k, l, m, n, abs, re) for element <k,l|ρ|m,n>."""
    r = _as_matrix(rho_two_mode)
    size = r.shape[0]
    N = int(round(np.sqrt(size)))
    if N * N != size:
        raise ValueError(f"two-mode state of size {size} does not factor as (N, N)")
    with open(path, "w") as fh:
        fh.write("k,l,m,n,abs,re\n")
        for row in range(size):
            for col in range(size):
                v = r[row, col]
                a = abs(v)
                if a <= threshold:
                    continue
                k, l = divmod(row, N)
                m, n = divmod(col, N)
                fh.write(f"{k},{l},{m},{n},{float(a)!r},{float(v.real)!r}\n")


@dataclass
class XCorrResult:
    """Finite-window cross-correlation on a symmetric lag grid."""

    taus: np.ndarray
    values: np.ndarray
    max_abs: float
    argmax_tau: float

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cross-correlation values must be finite")
        if not np.allclose(self.taus, -self.taus[::-1], atol=1e-12):
            raise ValueError("lag grid must be symmetric about zero")


def _xcorr_curve(x: np.ndarray, y: np.ndarray, dt: float, m: int) -> np.ndarray:
    """C(τ_j) = Σ_i x[i] y[i−j] dt for j = −m..m (zero-padded window edges)."""
    full = _sig_correlate(x, y, mode="full", method="fft")
    center = y.size - 1
    return full[center - m: center + m + 1] * dt


def cross_correlation(x, y, dt: float, tau_max: float, *,
                      min_rate: float | None = None) -> XCorrResult:
    """Sliding-overlap correlation of two equal-length series.

    The window is finite, so C_xy(τ) = C_yx(−τ) holds exactly for this
    zero-padded definition; edge lags simply accumulate fewer terms. Warns if
    the window is shorter than 10 relaxation times of ``min_rate``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise ValueError("empty time series")
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be 1-D with equal lengths")
    if dt <= 0 or tau_max < 0:
        raise ValueError("dt must be > 0 and tau_max >= 0")
    if min_rate is not None and x.size * dt < 10.0 / min_rate:
        warnings.warn(
            f"window T = {x.size * dt:.3g} is below 10 relaxation times "
            f"(10/{min_rate:.3g})",
            stacklevel=2,
        )
    m = min(int(np.floor(tau_max / dt + 1e-9)), x.size - 1)
    taus = np.arange(-m, m + 1) * dt
    vals = _xcorr_curve(x, y, dt, m)
    idx = int(np.argmax(np.abs(vals)))
    return XCorrResult(taus=taus, values=vals, max_abs=float(np.abs(vals[idx])),
                       argmax_tau=float(taus[idx]))


@dataclass
class XCorrEnsemble:
    """Ensemble-averaged homodyne cross-correlation with consistency checks.

    Both estimators of the averaged cross-correlation share one expectation
    value: the raw-current average E[C_τ(J_1, J_2)] and κ₁κ₂ times the average
    built from the conditioned quadrature expectations. The current version
    carries the full measurement shot noise (per-trajectory spread ~κ√(T/dt)),
    so mean_curve reports the conditioned-quadrature version, which has no
    shot-noise floor; current_curve keeps the raw estimator and identity_gap
    their largest pointwise difference, which must shrink as 1/√n_traj
    (identity_se is the standard error of that difference at the same lag).
    centered_curve repeats mean_curve with each trajectory's quadrature
    time-mean removed first, dropping the noisy DC term.
    """

    taus: np.ndarray
    mean_curve: np.ndarray
    current_curve: np.ndarray
    centered_curve: np.ndarray
    traj_curves: np.ndarray
    max_abs: float
    argmax_tau: float
    se_at_max: float
    identity_gap: float
    identity_se: float
    n_traj: int


def ensemble_xcorr(records, tau_max: float, kappas, *, channels=(0, 1),
                   n_keep_traj: int = 3) -> XCorrEnsemble:
    """Average the homodyne cross-correlation over records, locate its extremum.

    ``kappas`` are the measurement rates of the two selected channels, scaling
    the conditioned-expectation curve onto the current curve. ``n_keep_traj``
    single-trajectory (conditioned-quadrature) curves are kept for plotting.
    """
    if len(records) == 0:
        raise ValueError("need at least one trajectory record")
    i, j = channels
    ref = records[0]
    dt = ref.dt
    m = min(int(np.floor(tau_max / dt + 1e-9)), ref.times.size - 1)
    taus = np.arange(-m, m + 1) * dt
    kk = float(kappas[0]) * float(kappas[1])
    sum_x = np.zeros(taus.size)
    sum_x2 = np.zeros(taus.size)
    sum_c = np.zeros(taus.size)
    sum_d = np.zeros(taus.size)
    sum_d2 = np.zeros(taus.size)
    kept = []
    for rec in records:
        if rec.times.size != ref.times.size or abs(rec.dt - dt) > 1e-12 * dt:
            raise ValueError("trajectory records must share one time grid")
        cx = kk * _xcorr_curve(rec.x_expect[i], rec.x_expect[j], dt, m)
        cj = _xcorr_curve(rec.currents[i], rec.currents[j], dt, m)
        a = rec.x_expect[i] - rec.x_expect[i].mean()
        b = rec.x_expect[j] - rec.x_expect[j].mean()
        cc = kk * _xcorr_curve(a, b, dt, m)
        sum_x += cx
        sum_x2 += cx**2
        sum_c += cc
        d = cj - cx
        sum_d += d
        sum_d2 += d**2
        if len(kept) < n_keep_traj:
            kept.append(cx)
    n = len(records)
    mean_x = sum_x / n
    mean_d = sum_d / n
    centered = sum_c / n
    var_x = np.maximum(sum_x2 / n - mean_x**2, 0.0)
    se_x = np.sqrt(var_x / n)
    var_d = np.maximum(sum_d2 / n - mean_d**2, 0.0)
    se_d = np.sqrt(var_d / n)
    idx = int(np.argmax(np.abs(mean_x)))
    gap_idx = int(np.argmax(np.abs(mean_d)))
    return XCorrEnsemble(
        taus=taus, mean_curve=mean_x, current_curve=mean_x + mean_d,
        centered_curve=centered,
        traj_curves=np.array(kept) if kept else np.empty((0, taus.size)),
        max_abs=float(np.abs(mean_x[idx])), argmax_tau=float(taus[idx]),
        se_at_max=float(se_x[idx]),
        identity_gap=float(np.abs(mean_d[gap_idx])),
        identity_se=float(se_d[gap_idx]), n_traj=n,
    )


def ensemble_xcorr_max(records, tau_max: float, kappas, *, channels=(0, 1)) -> float:
    """Extremum magnitude of the trajectory-averaged cross-correlation."""
    return ensemble_xcorr(records, tau_max, kappas, channels=channels).max_abs
