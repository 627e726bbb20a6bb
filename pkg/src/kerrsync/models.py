"""Model builders for driven Kerr oscillators with dissipative Fock-state stabilization.

Three tiers are supported:

* full: driven three-mode circuit per oscillator (Kerr mode a, linear modes c, d
  with cross-Kerr couplings and coherent drives), optionally two oscillators
  coupled by a cross-Kerr J between the Kerr modes.
* displaced: exact image of the full model under the mode displacements
  a -> a + alpha, c -> c + gamma, d -> d + delta. The displacement amplitudes
  follow the linear-response formula (see ``compute_displacements``), so small
  drive residuals proportional to the Kerr and cross-Kerr shifts remain in the
  Hamiltonian; they are retained, keeping the tier unitarily equivalent to the
  full model while removing the large coherent amplitudes from the truncated
  basis.
* effective: single-mode Kerr oscillator with Lorentzian-filtered raising and
  lowering jump operators obtained by adiabatic elimination of the linear
  modes, plus an optional linear inter-oscillator coupling for the two-mode
  coupled model.

Units: all rates and detunings are angular frequencies in rad/us. Paper-style
MHz/GHz/kHz figures are consumed verbatim as rad/us (e.g. K = 30 MHz enters as
30.0); only ratios and the overall time scale matter for every dimensionless
observable. Detunings follow Delta = omega_mode - omega_drive.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from math import prod

import numpy as np

from .evolve import LindbladModel
from .qspace import FockSpace, Operator, create, destroy, embed, identity, number

__all__ = [
    "OscillatorParams",
    "CircuitParams",
    "DisplacedFrame",
    "EffectiveKerrParams",
    "compute_displacements",
    "sideband_conditions",
    "seed_linear_detunings",
    "effective_params_from",
    "build_full_model",
    "build_displaced_model",
    "build_effective_model",
    "build_coupled_effective_model",
]


@dataclass(frozen=True)
class OscillatorParams:
    """Physical parameters of one stabilized oscillator (all rad/us).

    Delta_a, Delta_c, Delta_d: detunings of the Kerr mode and the two linear
    modes from their drives; K: self-Kerr; chi_ac, chi_ad: cross-Kerr couplings;
    eps_a, eps_c, eps_d: real drive amplitudes; kappa_a, kappa_c, kappa_d: loss rates.
    """

    Delta_a: float
    Delta_c: float
    Delta_d: float
    K: float
    chi_ac: float
    chi_ad: float
    eps_a: float
    eps_c: float
    eps_d: float
    kappa_a: float
    kappa_c: float
    kappa_d: float

    def __post_init__(self):
        if self.kappa_a <= 0 or self.kappa_c <= 0 or self.kappa_d <= 0:
            raise ValueError("all loss rates kappa must be > 0")
        if self.K <= 0:
            raise ValueError("self-Kerr K must be > 0")
        if self.chi_ac < 0 or self.chi_ad < 0:
            raise ValueError("cross-Kerr couplings chi must be >= 0")
        if self.K / self.kappa_a <= 1:
            warnings.warn(
                f"K/kappa_a = {self.K / self.kappa_a:.3g} <= 1: outside the "
                "single-photon Kerr regime required for blockade experiments",
                stacklevel=2,
            )


@dataclass(frozen=True)
class CircuitParams:
    """Two stabilized oscillators coupled by a cross-Kerr J between their Kerr modes."""

    osc: tuple
    J: float

    def __post_init__(self):
        osc = tuple(self.osc)
        object.__setattr__(self, "osc", osc)
        if len(osc) != 2 or not all(isinstance(o, OscillatorParams) for o in osc):
            raise ValueError("CircuitParams.osc must hold exactly two OscillatorParams")
        k_min = min(o.K for o in osc)
        if abs(self.J) >= 0.5 * k_min:
            warnings.warn(
                f"|J| = {abs(self.J):.3g} is not small against K = {k_min:.3g}; "
                "the weak-coupling treatment may not apply",
                stacklevel=2,
            )


@dataclass(frozen=True)
class DisplacedFrame:
    """Displacement amplitudes and renormalized detunings for one oscillator.

    smallness_ac and smallness_ad report (K/chi)/(|gamma/alpha|) and
    (K/chi)/(|delta/alpha|): both must be well below 1 for the sideband
    engineering to dominate the bare Kerr-induced processes.
    """

    alpha: complex
    gamma: complex
    delta: complex
    Delta_a_hat: float
    Delta_c_tilde: float
    Delta_d_tilde: float
    smallness_ac: float
    smallness_ad: float


@dataclass(frozen=True)
class EffectiveKerrParams:
    """Parameters of the effective stabilized Kerr oscillator.

    kappa_lin is the linear-resonator loss used in the adiabatic elimination;
    it fixes the Lorentzian width through sigma = kappa_lin / (4 K), which is
    verified on construction. J_lin = J * alpha_1 * conj(alpha_2) is the linear
    coupling amplitude of the coupled two-oscillator model.
    """

    Delta_hat: float
    K: float
    kappa_a: float
    gamma_up: float
    gamma_down: float
    n0: int
    sigma: float
    kappa_lin: float
    J_lin: complex = 0.0 + 0.0j

    def __post_init__(self):
        if self.n0 < 1:
            raise ValueError("target Fock number n0 must be >= 1")
        if self.gamma_up < 0 or self.gamma_down < 0:
            raise ValueError("gamma_up and gamma_down must be >= 0")
        expected = self.kappa_lin / (4.0 * self.K)
        if abs(self.sigma - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ValueError(
                f"sigma = {self.sigma} inconsistent with kappa_lin/(4K) = {expected}"
            )

    def lorentzian(self, m: int) -> float:
        """L_m = sigma^2 / ((n0 - m)^2 + sigma^2)."""
        return self.sigma**2 / ((self.n0 - m) ** 2 + self.sigma**2)


# ---------------------------------------------------------------------------
# displaced-frame arithmetic


def _displacement(eps: float, Delta: float, kappa: float) -> complex:
    den = Delta - 0.5j * kappa
    if den == 0:
        raise ValueError("displacement denominator Delta - i kappa/2 vanishes")
    return -eps / den


def compute_displacements(p: OscillatorParams, *, self_consistent: bool = False,
                          max_iter: int = 50, tol: float = 1e-10) -> DisplacedFrame:
    """Displacement amplitudes and renormalized detunings of one oscillator.

    Default mode evaluates the closed forms once from the bare detunings:
    alpha = -eps_a / (Delta_a - i kappa_a / 2) (likewise gamma, delta), then
    Delta_c_tilde = Delta_c - chi_ac |alpha|^2, Delta_d_tilde = Delta_d - chi_ad |alpha|^2,
    Delta_a_hat = Delta_a - chi_ac |gamma|^2 - chi_ad |delta|^2 - 4 K |alpha|^2.

    With ``self_consistent=True`` the amplitudes are iterated against the
    renormalized detunings to a fixed point (diagnostic mode; the default
    matches the perturbative treatment, and its alpha satisfies
    alpha (Delta_a - i kappa_a/2) = -eps_a exactly).
    """
    Da, Dc, Dd = p.Delta_a, p.Delta_c, p.Delta_d
    alpha = gamma = delta = 0.0j
    for it in range(max_iter if self_consistent else 1):
        alpha_n = _displacement(p.eps_a, Da, p.kappa_a)
        gamma_n = _displacement(p.eps_c, Dc, p.kappa_c)
        delta_n = _displacement(p.eps_d, Dd, p.kappa_d)
        shift = max(abs(alpha_n - alpha), abs(gamma_n - gamma), abs(delta_n - delta))
        alpha, gamma, delta = alpha_n, gamma_n, delta_n
        if not self_consistent:
            break
        Da = p.Delta_a - p.chi_ac * abs(gamma) ** 2 - p.chi_ad * abs(delta) ** 2 \
            - 4.0 * p.K * abs(alpha) ** 2
        Dc = p.Delta_c - p.chi_ac * abs(alpha) ** 2
        Dd = p.Delta_d - p.chi_ad * abs(alpha) ** 2
        if shift <= tol * max(1.0, abs(alpha), abs(gamma), abs(delta)):
            break
    a2 = abs(alpha) ** 2
    frame = DisplacedFrame(
        alpha=alpha,
        gamma=gamma,
        delta=delta,
        Delta_a_hat=p.Delta_a - p.chi_ac * abs(gamma) ** 2 - p.chi_ad * abs(delta) ** 2
        - 4.0 * p.K * a2,
        Delta_c_tilde=p.Delta_c - p.chi_ac * a2,
        Delta_d_tilde=p.Delta_d - p.chi_ad * a2,
        smallness_ac=_smallness(p.K, p.chi_ac, gamma, alpha),
        smallness_ad=_smallness(p.K, p.chi_ad, delta, alpha),
    )
    return frame


def _smallness(K, chi, beta, alpha) -> float:
    if chi == 0 or abs(alpha) == 0:
        return np.inf
    return (K / chi) / (abs(beta) / abs(alpha))


def sideband_conditions(n0: int, frame: DisplacedFrame, K: float):
    """Renormalized linear-mode detunings that put both sidebands on resonance.

    The lowering (red) sideband needs Delta_a_hat = Delta_c_tilde + 2 K n0 and
    the raising (blue) one Delta_a_hat = -Delta_d_tilde + 2 K (n0 - 1); returns
    the (Delta_c_tilde, Delta_d_tilde) targets for the stabilized level n0.
    """
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    delta_down = 2.0 * K * n0
    delta_up = 2.0 * K * (n0 - 1)
    return frame.Delta_a_hat - delta_down, delta_up - frame.Delta_a_hat


def seed_linear_detunings(p: OscillatorParams, n0: int, *, rounds: int = 8,
                          fixed_point: bool = False, max_iter: int = 50,
                          tol: float = 1e-10) -> OscillatorParams:
    """Bare Delta_c, Delta_d placing both sidebands on resonance for |n0>.

    The sideband targets constrain the renormalized detunings, which depend on
    the displacement amplitudes, which depend on the bare detunings being
    solved for. The map contracts strongly once the drives sit near their
    sidebands, but the first rounds start from arbitrary detunings, so several
    rounds are needed before the residual drops below the linewidth; eight
    reach numerical convergence for typical parameters. ``fixed_point=True``
    instead iterates until successive detunings agree to ``tol``.

    On top of inverting the chi |alpha|^2 renormalization, the bare values
    advance the targets by chi n0: the cross-Kerr quartic survives the
    displacement and lowers the one-sideband-photon levels |n0, 1_c> and
    |n0, 1_d> by chi n0, so the undressed conditions would sit one chi off
    the actual transition energies of the stabilized manifold.
    """
    q = p
    n_rounds = max_iter if fixed_point else rounds
    prev = (q.Delta_c, q.Delta_d)
    for _ in range(n_rounds):
        frame = compute_displacements(q)
        tc, td = sideband_conditions(n0, frame, p.K)
        a2 = abs(frame.alpha) ** 2
        q = replace(q, Delta_c=tc + p.chi_ac * (a2 + n0),
                    Delta_d=td + p.chi_ad * (a2 + n0))
        cur = (q.Delta_c, q.Delta_d)
        if fixed_point and max(abs(c - pr) for c, pr in zip(cur, prev)) <= tol * max(
                1.0, *map(abs, cur)):
            break
        prev = cur
    return q


def effective_params_from(p: OscillatorParams, n0: int,
                          frame: DisplacedFrame | None = None) -> EffectiveKerrParams:
    """Adiabatic-elimination rates for the effective model of one oscillator.

    gamma_up = 4 |alpha delta chi_ad|^2 / kappa_d pumps the Kerr mode upward
    through the raising sideband; gamma_down = 4 |alpha gamma chi_ac|^2 / kappa_c
    damps it downward. The Lorentzian width uses the (common) linear loss,
    sigma = kappa_c / (4 K); kappa_c and kappa_d must agree for the filter
    width to be well defined.
    """
    if frame is None:
        frame = compute_displacements(p)
    if abs(p.kappa_c - p.kappa_d) > 1e-12 * max(p.kappa_c, p.kappa_d):
        raise ValueError(
            "effective Lorentzian width needs kappa_c == kappa_d; "
            f"got {p.kappa_c} and {p.kappa_d}"
        )
    gamma_up = 4.0 * abs(frame.alpha * frame.delta * p.chi_ad) ** 2 / p.kappa_d
    gamma_down = 4.0 * abs(frame.alpha * frame.gamma * p.chi_ac) ** 2 / p.kappa_c
    return EffectiveKerrParams(
        Delta_hat=frame.Delta_a_hat,
        K=p.K,
        kappa_a=p.kappa_a,
        gamma_up=gamma_up,
        gamma_down=gamma_down,
        n0=n0,
        sigma=p.kappa_c / (4.0 * p.K),
        kappa_lin=p.kappa_c,
    )


# ---------------------------------------------------------------------------
# Hamiltonian assembly

_MODES_PER_OSC = 3


def _osc_hamiltonian(space, offset, p, shifts=(0.0j, 0.0j, 0.0j)):
    """Hamiltonian terms of one oscillator with optional mode displacements.

    ``shifts`` = (alpha, gamma, delta) displaces each lowering operator,
    b -> b + beta. With all shifts zero this is the bare driven model:
    detuning terms + self-Kerr (-K a^dag a^dag a a) + cross-Kerr
    (-chi n_a n_c, -chi n_a n_d) + drives eps (b + b^dag). With nonzero shifts
    the same polynomial is evaluated in the displaced operators (exact
    substitution; scalar offsets are kept, they only shift the energy origin)
    and the dissipative displacement correction (i kappa / 2)(conj(beta) b - beta b^dag)
    is added for each mode so the bare collapse operators remain valid.
    """
    a, c, d = (destroy(space, offset + k) for k in range(3))
    one = identity(space)
    A = a + shifts[0] * one
    C = c + shifts[1] * one
    D = d + shifts[2] * one
    Na, Nc, Nd = (op.dag() @ op for op in (A, C, D))
    H = p.Delta_a * Na + p.Delta_c * Nc + p.Delta_d * Nd
    H = H - p.K * (A.dag() @ A.dag() @ A @ A)
    H = H - p.chi_ac * (Na @ Nc) - p.chi_ad * (Na @ Nd)
    H = H + p.eps_a * (A + A.dag()) + p.eps_c * (C + C.dag()) + p.eps_d * (D + D.dag())
    for op, beta, kappa in ((a, shifts[0], p.kappa_a), (c, shifts[1], p.kappa_c),
                            (d, shifts[2], p.kappa_d)):
        if beta != 0:
            H = H + (0.5j * kappa) * (np.conj(beta) * op - beta * op.dag())
    return H


def _osc_collapses(space, offset, p):
    return [
        (p.kappa_a, destroy(space, offset + 0)),
        (p.kappa_c, destroy(space, offset + 1)),
        (p.kappa_d, destroy(space, offset + 2)),
    ]


def _as_circuit(p):
    if isinstance(p, OscillatorParams):
        return (p,), 0.0
    if isinstance(p, CircuitParams):
        return p.osc, p.J
    raise TypeError(f"expected OscillatorParams or CircuitParams, got {type(p).__name__}")


def build_full_model(p, space: FockSpace) -> LindbladModel:
    """Driven three-mode model per oscillator; six modes plus the J coupling
    for CircuitParams, three modes for a single OscillatorParams."""
    oscs, J = _as_circuit(p)
    if space.n_modes != _MODES_PER_OSC * len(oscs):
        raise ValueError(
            f"space has {space.n_modes} modes, expected {_MODES_PER_OSC * len(oscs)}"
        )
    H = None
    collapses = []
    for j, osc in enumerate(oscs):
        term = _osc_hamiltonian(space, _MODES_PER_OSC * j, osc)
        H = term if H is None else H + term
        collapses.extend(_osc_collapses(space, _MODES_PER_OSC * j, osc))
    if len(oscs) == 2 and J != 0.0:
        H = H + J * (number(space, 0) @ number(space, 3))
    H.hermitian = True
    return LindbladModel(H=H, collapses=collapses, space=space)


def build_displaced_model(p, space: FockSpace, frames=None, *,
                          rwa: bool = False) -> LindbladModel:
    """Exact displaced image of the full model (drives absorbed into frames).

    ``frames`` may pass precomputed DisplacedFrame objects (one per
    oscillator); by default they come from ``compute_displacements``. With
    ``rwa=False`` (default) the substitution is exact. With ``rwa=True`` the
    Hamiltonian keeps only the co-rotating terms:

    * renormalized detuning terms Delta_a_hat n_a + Delta_c_tilde n_c + Delta_d_tilde n_d,
    * the self-Kerr -K a^dag a^dag a a and the number-number cross-Kerr terms,
    * the lowering sideband -chi_ac (conj(alpha) gamma a c^dag + h.c.),
    * the raising sideband -chi_ad (alpha delta a^dag d^dag + h.c.),
    * the J-linear coupling and J-number shifts for the two-oscillator case,

    and drops every other substitution product (squeezing, cubic Kerr terms,
    counter-rotating sidebands a^dag c^dag / a^dag d, single-operator drive
    residuals and dissipative corrections), which oscillate at multiples of
    the large detunings.
    """
    oscs, J = _as_circuit(p)
    if space.n_modes != _MODES_PER_OSC * len(oscs):
        raise ValueError(
            f"space has {space.n_modes} modes, expected {_MODES_PER_OSC * len(oscs)}"
        )
    if frames is None:
        frames = tuple(compute_displacements(o) for o in oscs)
    frames = tuple(frames)
    if len(frames) != len(oscs):
        raise ValueError("need one DisplacedFrame per oscillator")

    H = None
    collapses = []
    for j, (osc, fr) in enumerate(zip(oscs, frames)):
        off = _MODES_PER_OSC * j
        if rwa:
            term = _osc_rwa_hamiltonian(space, off, osc, fr)
        else:
            term = _osc_hamiltonian(space, off, osc, shifts=(fr.alpha, fr.gamma, fr.delta))
        H = term if H is None else H + term
        collapses.extend(_osc_collapses(space, off, osc))
    if len(oscs) == 2 and J != 0.0:
        a1, a2 = destroy(space, 0), destroy(space, 3)
        al1, al2 = frames[0].alpha, frames[1].alpha
        if rwa:
            n1 = a1.dag() @ a1
            n2 = a2.dag() @ a2
            H = H + J * (n1 @ n2) \
                + (J * al1 * np.conj(al2)) * (a1.dag() @ a2) \
                + (J * np.conj(al1) * al2) * (a2.dag() @ a1) \
                + (J * abs(al2) ** 2) * n1 + (J * abs(al1) ** 2) * n2
        else:
            one = identity(space)
            A1 = a1 + al1 * one
            A2 = a2 + al2 * one
            H = H + J * ((A1.dag() @ A1) @ (A2.dag() @ A2))
    H.hermitian = True
    return LindbladModel(H=H, collapses=collapses, space=space)


def _osc_rwa_hamiltonian(space, offset, p, fr):
    a, c, d = (destroy(space, offset + k) for k in range(3))
    na, nc, nd = (op.dag() @ op for op in (a, c, d))
    H = fr.Delta_a_hat * na + fr.Delta_c_tilde * nc + fr.Delta_d_tilde * nd
    H = H - p.K * (a.dag() @ a.dag() @ a @ a)
    H = H - p.chi_ac * (na @ nc) - p.chi_ad * (na @ nd)
    g_red = -p.chi_ac * np.conj(fr.alpha) * fr.gamma
    g_blue = -p.chi_ad * fr.alpha * fr.delta
    H = H + g_red * (a @ c.dag()) + np.conj(g_red) * (a.dag() @ c)
    H = H + g_blue * (a.dag() @ d.dag()) + np.conj(g_blue) * (d @ a)
    return H


def build_effective_model(p: EffectiveKerrParams, space: FockSpace, *,
                          alpha: complex | None = None) -> LindbladModel:
    """Effective single-mode model: Kerr Hamiltonian plus Lorentzian-filtered jumps.

    H = Delta_hat a^dag a - K a^dag a^dag a a; collapses are the linear loss
    (kappa_a, a), raising jumps (gamma_up L_m, sqrt(m) |m><m-1|) and lowering
    jumps (gamma_down L_m, sqrt(m+1) |m><m+1|) for every level within the
    truncation. Passing ``alpha`` adds the squeezing term
    -K (conj(alpha)^2 a a + alpha^2 a^dag a^dag) for sensitivity studies; it is
    excluded by default.
    """
    if space.n_modes != 1:
        raise ValueError("effective model lives on a single-mode space")
    dim = space.dims[0]
    if dim < p.n0 + 3:
        raise ValueError(
            f"truncation dim {dim} < n0 + 3 = {p.n0 + 3}: too small to resolve "
            "the stabilization manifold"
        )
    a = destroy(space, 0)
    n = a.dag() @ a
    H = p.Delta_hat * n - p.K * (a.dag() @ a.dag() @ a @ a)
    if alpha is not None:
        H = H - p.K * (np.conj(alpha) ** 2 * (a @ a) + alpha**2 * (a.dag() @ a.dag()))
    H.hermitian = True
    collapses = [(p.kappa_a, a)]
    collapses.extend(_lorentzian_jumps(p, space, mode=0))
    return LindbladModel(H=H, collapses=collapses, space=space)


def _lorentzian_jumps(p: EffectiveKerrParams, space: FockSpace, mode: int):
    from .qspace import transition

    dim = space.dims[mode]
    jumps = []
    for m in range(1, dim):
        up = np.sqrt(m) * transition(space, mode, m, m - 1)
        jumps.append((p.gamma_up * p.lorentzian(m), up))
    for m in range(0, dim - 1):
        down = np.sqrt(m + 1) * transition(space, mode, m, m + 1)
        jumps.append((p.gamma_down * p.lorentzian(m), down))
    return jumps


def build_coupled_effective_model(p1: EffectiveKerrParams, p2: EffectiveKerrParams,
                                  J_lin: complex, space: FockSpace, *,
                                  J_nn: float = 0.0, shift_1: float = 0.0,
                                  shift_2: float = 0.0) -> LindbladModel:
    """Two effective oscillators with a linear hopping J_lin a1^dag a2 + h.c.

    ``shift_1`` and ``shift_2`` add the J-induced frequency shifts
    (J |alpha_2|^2 on oscillator 1 and J |alpha_1|^2 on oscillator 2); they can
    equivalently be absorbed into the Delta_hat fields, and default to zero so
    that J_lin = 0 reduces exactly to the tensor sum of the two single-mode
    models. ``J_nn`` adds the number-number coupling J n1 n2 that survives the
    displacement unchanged; it shifts the two-photon exchange resonances from
    ±2K to ±(2K + J_nn), which is what pulls the synchronization peaks inward
    for negative J.
    """
    if space.n_modes != 2:
        raise ValueError("coupled effective model lives on a two-mode space")
    for p in (p1, p2):
        if min(space.dims) < p.n0 + 3:
            raise ValueError(
                f"truncation dims {space.dims} too small to resolve the "
                f"stabilization manifold around n0 = {p.n0} (need >= n0 + 3)"
            )
    a1, a2 = destroy(space, 0), destroy(space, 1)
    n1, n2 = a1.dag() @ a1, a2.dag() @ a2
    H = (p1.Delta_hat + shift_1) * n1 - p1.K * (a1.dag() @ a1.dag() @ a1 @ a1)
    H = H + (p2.Delta_hat + shift_2) * n2 - p2.K * (a2.dag() @ a2.dag() @ a2 @ a2)
    H = H + J_lin * (a1.dag() @ a2) + np.conj(J_lin) * (a2.dag() @ a1)
    if J_nn != 0.0:
        H = H + J_nn * (n1 @ n2)
    H.hermitian = True
    collapses = [(p1.kappa_a, a1), (p2.kappa_a, a2)]
    for mode, p in ((0, p1), (1, p2)):
        collapses.extend(_lorentzian_jumps(p, space, mode=mode))
    return LindbladModel(H=H, collapses=collapses, space=space)
