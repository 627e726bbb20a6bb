"""Deterministic and stochastic solvers: oracle comparisons, steady states,
ensemble statistics, and reproducibility contracts."""

import numpy as np
import pytest

from kerrsync import (
    DegenerateSteadyStateError,
    EffectiveKerrParams,
    FockSpace,
    LindbladModel,
    build_effective_model,
    evolve_me,
    sme_ensemble,
    sme_homodyne_trajectory,
    steady_state_direct,
    steady_state_trajectory_average,
)
from kerrsync.qspace import Operator, destroy, number, quadrature

import oracles


def random_model(space, n_collapse, seed, rate_scale=1.0):
    rng = np.random.default_rng(seed)
    n = space.size
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    H = Operator(space, (h + h.conj().T) / 2, hermitian=True)
    collapses = []
    for _ in range(n_collapse):
        c = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        collapses.append((rate_scale * rng.uniform(0.2, 1.5), Operator(space, c)))
    return LindbladModel(H=H, collapses=collapses, space=space)


def random_rho(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = m @ m.conj().T
    return rho / np.trace(rho)


def eff_model(dim=6, **over):
    base = dict(Delta_hat=2.0, K=30.0, kappa_a=0.1, gamma_up=0.901,
                gamma_down=0.949, n0=1, sigma=10.0 / 120.0, kappa_lin=10.0)
    base.update(over)
    return build_effective_model(EffectiveKerrParams(**base), FockSpace((dim,)))


# -- deterministic evolution ------------------------------------------------


@pytest.mark.parametrize("dims,seed", [((3,), 0), ((4,), 1), ((2, 2), 2)])
def test_evolve_me_matches_dense_expm(dims, seed):
    space = FockSpace(dims)
    model = random_model(space, 2, seed)
    rho0 = random_rho(space.size, seed + 10)
    t_grid = np.linspace(0.0, 1.2, 7)
    got = evolve_me(model, rho0, t_grid)
    H = model.H.toarray()
    collapses = [(r, op.toarray()) for r, op in model.collapses]
    want = oracles.evolve_expm(H, collapses, rho0, t_grid)
    for g, w in zip(got, want):
        assert np.abs(g.data - w).max() < 1e-8


def test_evolve_me_preserves_trace_and_hermiticity():
    model = eff_model()
    rho0 = random_rho(6, 3)
    states = evolve_me(model, rho0, np.linspace(0.0, 5.0, 11))
    for s in states:
        assert abs(s.trace - 1.0) < 1e-9
        assert np.abs(s.data - s.data.conj().T).max() < 1e-9


def test_evolve_me_rejects_bad_grids():
    model = eff_model()
    rho0 = random_rho(6, 4)
    with pytest.raises(ValueError):
        evolve_me(model, rho0, [0.0, 0.2, 0.1])
    with pytest.raises(ValueError):
        evolve_me(model, rho0, [0.0, 0.1, 0.3])


def test_lindblad_model_validation():
    space = FockSpace((3,))
    with pytest.raises(ValueError):
        LindbladModel(H=destroy(space), collapses=[], space=space)
    with pytest.raises(ValueError):
        LindbladModel(H=number(space), collapses=[(-1.0, destroy(space))],
                      space=space)


# -- steady states ----------------------------------------------------------


def test_steady_state_residual_and_stationarity():
    model = eff_model()
    ss = steady_state_direct(model)
    L = model.liouvillian()
    res = np.abs(L.data @ ss.rho.data.ravel(order="F")).max()
    bound = 1e-10 * max(L.norm_inf(), 1.0)
    assert res < bound
    assert ss.residual <= bound
    # evolving the steady state far forward must not move it
    final = evolve_me(model, ss.rho, np.linspace(0.0, 50.0, 3))[-1]
    assert np.abs(final.data - ss.rho.data).max() < 1e-7


def test_steady_state_flags_degenerate_nullspace():
    # pure dephasing preserves every Fock population: nullspace is 3-dim
    space = FockSpace((3,))
    model = LindbladModel(H=number(space), collapses=[(1.0, number(space))],
                          space=space)
    with pytest.raises(DegenerateSteadyStateError):
        steady_state_direct(model)


def test_steady_state_positive_and_normalized():
    ss = steady_state_direct(eff_model(dim=7))
    w = np.linalg.eigvalsh(ss.rho.data)
    assert w.min() > -1e-12
    assert abs(ss.rho.trace - 1.0) < 1e-12
    assert ss.method == "direct"


# -- stochastic engine ------------------------------------------------------


def grid(T, dt):
    n = int(round(T / dt))
    return np.linspace(0.0, n * dt, n + 1)


def test_sme_unmeasured_limit_is_deterministic():
    """With measurement rate zero every trajectory follows the master
    equation exactly, so conditioned quadratures match evolve_me pointwise."""
    model = eff_model(dim=4)
    rho0 = random_rho(4, 7)
    t = grid(1.0, 0.005)
    res = sme_ensemble(model, [(0.0, model.collapses[0][1])], rho0, t, 3, 99,
                       block_size=2)
    X = quadrature(model.space, 0)
    ref = np.array([np.real(X.expect(s)) for s in evolve_me(model, rho0, t)])
    for rec in res.records:
        np.testing.assert_allclose(rec.x_expect[0], ref[:-1], atol=1e-9)
        np.testing.assert_allclose(rec.currents[0], 0.0, atol=1e-12)


def test_sme_ensemble_mean_matches_master_equation():
    """Measurement back-action averages out: the ensemble mean of the
    conditioned state follows the master equation to statistical accuracy."""
    model = eff_model(dim=5)
    rho0 = np.zeros((5, 5), dtype=complex)
    rho0[0, 0] = 1.0
    dt = 0.9 * model.max_stochastic_dt()
    t = grid(3.0, dt)
    stride = max(1, (t.size - 1) // 4)
    res = sme_ensemble(model, [model.collapses[0]], rho0, t, 1000, 2024,
                       block_size=250, sample_stride=stride,
                       keep_records=False)
    assert res.n_success == 1000
    ref_states = evolve_me(model, rho0, res.sample_times)
    for k, ref in enumerate(ref_states):
        gap = np.abs(res.state_mean[k] - ref.data)
        # elementwise z-test with a floor for near-deterministic entries
        assert np.all(gap < 4.5 * res.state_se[k] + 1e-9)
    n_op = number(model.space, 0)
    k = len(ref_states) - 1
    got = float(np.real(np.trace(n_op.toarray() @ res.state_mean[k])))
    want = float(np.real(n_op.expect(ref_states[k])))
    se = float(np.sqrt(np.sum(np.diag(res.state_se[k]) ** 2)))
    assert abs(got - want) < 3.0 * se


def test_sme_step_bound_enforced():
    model = eff_model(dim=5)
    dt = 1.01 * model.max_stochastic_dt()
    with pytest.raises(ValueError):
        sme_ensemble(model, [model.collapses[0]], random_rho(5, 1),
                     grid(0.5, dt), 2, 7)


def test_sme_rejects_unknown_measurement_channel():
    model = eff_model(dim=4)
    bogus = quadrature(model.space, 0)
    with pytest.raises(ValueError):
        sme_ensemble(model, [(0.1, bogus)], random_rho(4, 2), grid(0.2, 0.005),
                     2, 7)
    # right operator, wrong rate
    with pytest.raises(ValueError):
        sme_ensemble(model, [(0.7, model.collapses[0][1])], random_rho(4, 2),
                     grid(0.2, 0.005), 2, 7)


def test_sme_reproducible_across_workers_and_reruns():
    model = eff_model(dim=4)
    rho0 = random_rho(4, 5)
    t = grid(0.5, 0.01)
    runs = [
        sme_ensemble(model, [model.collapses[0]], rho0, t, 6, 1234,
                     block_size=2, workers=w)
        for w in (1, 2, 1)
    ]
    a = runs[0]
    for b in runs[1:]:
        assert np.array_equal(a.seeds, b.seeds)
        for ra, rb in zip(a.records, b.records):
            assert np.array_equal(ra.currents, rb.currents)
            assert np.array_equal(ra.x_expect, rb.x_expect)


def test_sme_block_size_changes_only_reduction_order():
    # the noise stream is fixed per trajectory index; a different block size
    # batches the matmuls differently, so values agree only to float precision
    # (byte identity is promised for fixed seed, n_traj, and block_size)
    model = eff_model(dim=4)
    rho0 = random_rho(4, 5)
    t = grid(0.3, 0.01)
    r1 = sme_ensemble(model, [model.collapses[0]], rho0, t, 4, 77, block_size=4)
    r2 = sme_ensemble(model, [model.collapses[0]], rho0, t, 4, 77, block_size=1)
    for ra, rb in zip(r1.records, r2.records):
        np.testing.assert_allclose(ra.currents, rb.currents, atol=1e-10)
        np.testing.assert_allclose(ra.x_expect, rb.x_expect, atol=1e-10)


def test_single_trajectory_matches_ensemble_member():
    model = eff_model(dim=4)
    rho0 = random_rho(4, 11)
    t = grid(0.4, 0.005)
    chans = [model.collapses[0]]
    single = sme_homodyne_trajectory(model, chans, rho0, t, 4321)
    ens = sme_ensemble(model, chans, rho0, t, 2, 4321, block_size=1)
    assert np.array_equal(single.currents, ens.records[0].currents)
    assert np.array_equal(single.x_expect, ens.records[0].x_expect)
    assert single.seed == int(ens.seeds[0])


def test_trajectory_seed_tokens_unique():
    model = eff_model(dim=4)
    res = sme_ensemble(model, [model.collapses[0]], random_rho(4, 1),
                       grid(0.05, 0.01), 64, 9, keep_records=False)
    assert len(set(res.seeds.tolist())) == 64


def test_trajectory_record_npz_roundtrip(tmp_path):
    model = eff_model(dim=4)
    rec = sme_homodyne_trajectory(model, [model.collapses[0]], random_rho(4, 2),
                                  grid(0.1, 0.01), 5)
    path = tmp_path / "rec.npz"
    rec.to_npz(path)
    back = type(rec).from_npz(path)
    assert np.array_equal(back.currents, rec.currents)
    assert np.array_equal(back.x_expect, rec.x_expect)
    assert np.array_equal(back.times, rec.times)
    assert back.seed == rec.seed


def test_trajectory_average_agrees_with_direct_steady_state():
    model = eff_model(dim=5)
    direct = steady_state_direct(model)
    avg = steady_state_trajectory_average(model, 60, 4.0, 12.0, 31415,
                                          measured=[model.collapses[0]])
    dist = 0.5 * np.abs(np.linalg.eigvalsh(avg.rho.data - direct.rho.data)).sum()
    assert dist < 0.06, f"trace distance {dist:.3f}"
    assert avg.method == "trajectory-average"
