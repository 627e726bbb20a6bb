"""Truncated Fock-space operators, density matrices, and Liouvillian superoperators.

Vectorization convention (fixed once, used everywhere): column stacking,
``vec(rho) = rho.ravel(order="F")``, so that ``vec(A @ rho @ B) = (B^T kron A) vec(rho)``.
All superoperator matrices act on column-stacked density matrices.

Storage: operators and superoperators are compressed-sparse-column matrices with
complex double entries. Density matrices are dense. Solvers elsewhere switch to
dense linear algebra when the total Hilbert dimension is at most ``DENSE_FALLBACK_DIM``.

Truncation: the ladder algebra holds exactly below the cutoff; the commutator
``[a, a_dag]`` equals the identity except in the top Fock level of each mode,
where it picks up ``-(dim - 1)`` on the diagonal (see ``tests`` for the exact
pattern). Experiment runners are responsible for convergence checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np
import scipy.sparse as sp

DEFAULT_DIM_CAP = 20_000
DENSE_FALLBACK_DIM = 64

HERMITICITY_TOL = 1e-12
DM_TRACE_TOL = 1e-9
DM_HERM_TOL = 1e-10
DM_EIG_TOL = -1e-8


def _csc(data) -> sp.csc_matrix:
    m = sp.csc_matrix(data, dtype=np.complex128)
    m.eliminate_zeros()
    return m


def hermiticity_defect(data) -> float:
    """Max elementwise |A - A^dag|, for sparse or dense A."""
    if sp.issparse(data):
        d = (data - data.getH()).tocoo()
        return float(np.abs(d.data).max()) if d.nnz else 0.0
    d = np.asarray(data)
    return float(np.abs(d - d.conj().T).max()) if d.size else 0.0


@dataclass(frozen=True)
class FockSpace:
    """Tensor product of truncated Fock spaces, one factor per mode.

    ``dims[k]`` is the k-th mode's truncation dimension (photon cutoff + 1).
    """

    dims: tuple
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise ValueError("FockSpace needs at least one mode")
        if any(d < 2 for d in dims):
            raise ValueError(f"every mode dimension must be >= 2, got {dims}")
        if prod(dims) > self.dim_cap:
            raise ValueError(
                f"total Hilbert dimension {prod(dims)} exceeds the cap {self.dim_cap}; "
                "raise dim_cap explicitly if this is intentional"
            )

    @property
    def size(self) -> int:
        return prod(self.dims)

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    def check_mode(self, mode: int):
        if not 0 <= mode < self.n_modes:
            raise ValueError(f"mode index {mode} out of range for {self.n_modes} modes")


def _same_space(a: "FockSpace", b: "FockSpace"):
    if a.dims != b.dims:
        raise ValueError(f"operands live on different spaces: {a.dims} vs {b.dims}")


@dataclass
class Operator:
    """Sparse operator on a FockSpace. Treated as read-only after construction."""

    space: FockSpace
    data: sp.csc_matrix
    hermitian: bool = False

    def __post_init__(self):
        self.data = _csc(self.data)
        n = self.space.size
        if self.data.shape != (n, n):
            raise ValueError(f"operator shape {self.data.shape} does not match space dim {n}")
        if self.hermitian:
            defect = hermiticity_defect(self.data)
            if defect > HERMITICITY_TOL:
                raise ValueError(f"hermitian flag set but max|A - A^dag| = {defect:.3e}")

    def dag(self) -> "Operator":
        return Operator(self.space, self.data.getH(), hermitian=self.hermitian)

    def toarray(self) -> np.ndarray:
        return self.data.toarray()

    def expect(self, rho) -> complex:
        """tr(A rho) for a dense density matrix (or DensityMatrix)."""
        r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
        return complex((self.data.multiply(r.T)).sum())

    def __add__(self, other):
        if isinstance(other, Operator):
            _same_space(self.space, other.space)
            return Operator(self.space, self.data + other.data,
                            hermitian=self.hermitian and other.hermitian)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Operator):
            _same_space(self.space, other.space)
            return Operator(self.space, self.data - other.data,
                            hermitian=self.hermitian and other.hermitian)
        return NotImplemented

    def __neg__(self):
        return Operator(self.space, -self.data, hermitian=self.hermitian)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            herm = self.hermitian and np.isrealobj(np.asarray(scalar)) \
                and float(np.imag(scalar)) == 0.0
            return Operator(self.space, self.data * scalar, hermitian=bool(herm))
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _same_space(self.space, other.space)
            return Operator(self.space, self.data @ other.data)
        return NotImplemented


@dataclass
class DensityMatrix:
    """Dense density matrix on a FockSpace. Treated as read-only after construction."""

    space: FockSpace
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        n = self.space.size
        if self.data.shape != (n, n):
            raise ValueError(f"density matrix shape {self.data.shape} does not match dim {n}")

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.data)))

    def validate(self, trace_tol=DM_TRACE_TOL, herm_tol=DM_HERM_TOL, eig_tol=DM_EIG_TOL):
        """Check trace, Hermiticity, and positivity tolerances; raise on violation."""
        tr = np.trace(self.data)
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"trace {tr} deviates from 1 by more than {trace_tol}")
        defect = hermiticity_defect(self.data)
        if defect > herm_tol:
            raise ValueError(f"hermiticity defect {defect:.3e} exceeds {herm_tol}")
        w = np.linalg.eigvalsh((self.data + self.data.conj().T) / 2)
        if w.min() < eig_tol:
            raise ValueError(f"minimum eigenvalue {w.min():.3e} below tolerance {eig_tol}")
        return self


@dataclass
class Superoperator:
    """Sparse matrix acting on column-stacked density matrices."""

    space: FockSpace
    data: sp.csc_matrix

    def __post_init__(self):
        self.data = _csc(self.data)
        n = self.space.size
        if self.data.shape != (n * n, n * n):
            raise ValueError(
                f"superoperator shape {self.data.shape} does not match {(n * n, n * n)}"
            )

    def apply(self, rho) -> np.ndarray:
        """Return the dense matrix L(rho)."""
        r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
        n = self.space.size
        vec = r.ravel(order="F")
        return (self.data @ vec).reshape((n, n), order="F")

    def norm_inf(self) -> float:
        """Max absolute row sum of the superoperator matrix."""
        return float(abs(self.data).sum(axis=1).max())

    def __add__(self, other):
        if isinstance(other, Superoperator):
            _same_space(self.space, other.space)
            return Superoperator(self.space, self.data + other.data)
        return NotImplemented

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return Superoperator(self.space, self.data * scalar)
        return NotImplemented

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# operator constructors


def identity(space: FockSpace) -> Operator:
    return Operator(space, sp.identity(space.size, format="csc", dtype=np.complex128),
                    hermitian=True)


def embed(space: FockSpace, mode: int, local) -> Operator:
    """Embed a single-mode matrix into the full tensor space at the given mode."""
    space.check_mode(mode)
    local = _csc(local)
    d = space.dims[mode]
    if local.shape != (d, d):
        raise ValueError(f"local matrix shape {local.shape} does not match mode dim {d}")
    before = prod(space.dims[:mode])
    after = prod(space.dims[mode + 1:])
    m = sp.kron(sp.identity(before, dtype=np.complex128), local, format="csc")
    m = sp.kron(m, sp.identity(after, dtype=np.complex128), format="csc")
    return Operator(space, m)


def destroy(space: FockSpace, mode: int = 0) -> Operator:
    space.check_mode(mode)
    d = space.dims[mode]
    a = sp.diags(np.sqrt(np.arange(1, d)), offsets=1, format="csc", dtype=np.complex128)
    return embed(space, mode, a)


def create(space: FockSpace, mode: int = 0) -> Operator:
    return destroy(space, mode).dag()


def number(space: FockSpace, mode: int = 0) -> Operator:
    space.check_mode(mode)
    d = space.dims[mode]
    n = sp.diags(np.arange(d, dtype=np.float64), format="csc", dtype=np.complex128)
    op = embed(space, mode, n)
    op.hermitian = True
    return op


def quadrature(space: FockSpace, mode: int = 0, phase: float = 0.0) -> Operator:
    """X = a e^{-i phase} + a^dag e^{i phase}; phase 0 gives a + a^dag."""
    a = destroy(space, mode)
    op = np.exp(-1j * phase) * a + np.exp(1j * phase) * a.dag()
    op.hermitian = True
    return op


def transition(space: FockSpace, mode: int, m: int, n: int) -> Operator:
    """|m><n| on the selected mode, embedded in the full space."""
    d = space.dims[mode]
    if not (0 <= m < d and 0 <= n < d):
        raise ValueError(f"levels ({m},{n}) out of range for mode dim {d}")
    local = sp.csc_matrix(([1.0], ([m], [n])), shape=(d, d), dtype=np.complex128)
    return embed(space, mode, local)


def fock_ket(space: FockSpace, occupations) -> np.ndarray:
    occ = tuple(int(n) for n in np.atleast_1d(occupations))
    if len(occ) != space.n_modes:
        raise ValueError(f"need {space.n_modes} occupation numbers, got {len(occ)}")
    for n, d in zip(occ, space.dims):
        if not 0 <= n < d:
            raise ValueError(f"occupation {n} out of range for dim {d}")
    idx = 0
    for n, d in zip(occ, space.dims):
        idx = idx * d + n
    ket = np.zeros(space.size, dtype=np.complex128)
    ket[idx] = 1.0
    return ket


def fock_dm(space: FockSpace, occupations) -> DensityMatrix:
    ket = fock_ket(space, occupations)
    return DensityMatrix(space, np.outer(ket, ket.conj()))


# ---------------------------------------------------------------------------
# superoperator constructors (column stacking throughout)


def _data(op) -> sp.csc_matrix:
    return op.data if isinstance(op, Operator) else _csc(op)


def spre(a) -> sp.csc_matrix:
    """vec(A rho) = (I kron A) vec(rho)."""
    a = _data(a)
    return sp.kron(sp.identity(a.shape[0], dtype=np.complex128), a, format="csc")


def spost(b) -> sp.csc_matrix:
    """vec(rho B) = (B^T kron I) vec(rho)."""
    b = _data(b)
    return sp.kron(b.T, sp.identity(b.shape[0], dtype=np.complex128), format="csc")


def sprepost(a, b) -> sp.csc_matrix:
    """vec(A rho B) = (B^T kron A) vec(rho)."""
    return sp.kron(_data(b).T, _data(a), format="csc")


def dissipator(c: Operator, rate: float = 1.0) -> Superoperator:
    """rate * D[c], with D[c] rho = c rho c^dag - (1/2){c^dag c, rho}."""
    if rate < 0:
        raise ValueError(f"dissipator rate must be >= 0, got {rate}")
    cd = c.data
    cdc = cd.getH() @ cd
    m = sprepost(cd, cd.getH()) - 0.5 * (spre(cdc) + spost(cdc))
    return Superoperator(c.space, rate * m)


def liouvillian(H, collapses=()) -> Superoperator:
    """L = -i(I kron H - H^T kron I) + sum_k rate_k D[c_k], column-stacked.

    ``H`` may be None for purely dissipative generators. ``collapses`` is an
    iterable of (rate, Operator) pairs with nonnegative rates.
    """
    collapses = list(collapses)
    space = H.space if H is not None else collapses[0][1].space
    n = space.size
    m = sp.csc_matrix((n * n, n * n), dtype=np.complex128)
    if H is not None:
        m = m + (-1j) * (spre(H) - spost(H))
    for rate, c in collapses:
        if rate < 0:
            raise ValueError(f"collapse rate must be >= 0, got {rate}")
        _same_space(space, c.space)
        m = m + dissipator(c, rate).data
    return Superoperator(space, m)


# ---------------------------------------------------------------------------
# bipartite utilities


def partial_transpose(rho, subsystem: int, dims) -> np.ndarray:
    """Transpose one factor of a bipartite density matrix; returns a dense matrix."""
    d1, d2 = int(dims[0]), int(dims[1])
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if r.shape != (d1 * d2, d1 * d2):
        raise ValueError(f"matrix shape {r.shape} does not factor as {d1}x{d2}")
    if subsystem not in (0, 1):
        raise ValueError("subsystem must be 0 or 1")
    t = np.asarray(r, dtype=np.complex128).reshape(d1, d2, d1, d2)
    if subsystem == 0:
        t = t.transpose(2, 1, 0, 3)
    else:
        t = t.transpose(0, 3, 2, 1)
    return t.reshape(d1 * d2, d1 * d2)


def partial_trace(rho, dims, keep) -> np.ndarray:
    """Reduced density matrix over the kept modes (int or sequence of ints),
    in their original order."""
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    keep_t = (keep,) if np.isscalar(keep) else tuple(keep)
    if any(k < 0 or k >= n for k in keep_t) or len(set(keep_t)) != len(keep_t):
        raise ValueError(f"keep {keep} is not a set of mode indices for {n} modes")
    size = int(np.prod(dims))
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if r.shape != (size, size):
        raise ValueError(f"matrix shape {r.shape} does not factor as dims {dims}")
    t = np.asarray(r, dtype=np.complex128).reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwx"
    row = list(letters[:n])
    col = [letters[i] if i not in keep_t else letters[n + i] for i in range(n)]
    out = "".join(row[i] for i in keep_t) + "".join(col[i] for i in keep_t)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d_keep = int(np.prod([dims[i] for i in keep_t]))
    return reduced.reshape(d_keep, d_keep)
