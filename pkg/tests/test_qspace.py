"""Operator algebra, vectorization convention, and bipartite utilities."""

import numpy as np
import pytest

from kerrsync.qspace import (
    DensityMatrix,
    FockSpace,
    Operator,
    create,
    destroy,
    dissipator,
    embed,
    fock_dm,
    fock_ket,
    hermiticity_defect,
    identity,
    liouvillian,
    number,
    partial_trace,
    partial_transpose,
    quadrature,
    spre,
    spost,
    sprepost,
    transition,
)

import oracles


def test_ladder_commutator_below_truncation():
    sp = FockSpace((5,))
    a = destroy(sp)
    comm = (a @ create(sp) - create(sp) @ a).toarray()
    # truncation corrupts only the top level: diag(1, ..., 1, -(d-1))
    expected = np.diag([1.0, 1.0, 1.0, 1.0, -4.0])
    np.testing.assert_allclose(comm, expected, atol=1e-14)


def test_number_equals_adag_a():
    sp = FockSpace((6,))
    n_op = (create(sp) @ destroy(sp)).toarray()
    np.testing.assert_allclose(n_op, number(sp).toarray(), atol=1e-14)


def test_embed_mode_ordering():
    sp = FockSpace((2, 3))
    a1 = destroy(sp, 1).toarray()
    local = np.diag(np.sqrt(np.arange(1, 3)), 1)
    np.testing.assert_allclose(a1, np.kron(np.eye(2), local), atol=1e-14)
    a0 = destroy(sp, 0).toarray()
    np.testing.assert_allclose(a0, np.kron(np.diag([1.0], 1), np.eye(3)), atol=1e-14)


def test_quadrature_phase_convention():
    sp = FockSpace((4,))
    phi = 0.7
    a = destroy(sp).toarray()
    expected = np.exp(-1j * phi) * a + np.exp(1j * phi) * a.conj().T
    np.testing.assert_allclose(quadrature(sp, 0, phi).toarray(), expected, atol=1e-14)
    assert quadrature(sp, 0, phi).hermitian


def test_transition_matrix_element():
    sp = FockSpace((4, 3))
    t = transition(sp, 1, 2, 0).toarray()
    ket_from = fock_ket(sp, (1, 0))
    ket_to = fock_ket(sp, (1, 2))
    assert abs(ket_to.conj() @ t @ ket_from - 1.0) < 1e-14
    assert abs(t.sum() - 4.0) < 1e-14  # one unit entry per mode-0 block


def test_fock_ket_row_major_indexing():
    sp = FockSpace((3, 4))
    ket = fock_ket(sp, (1, 2))
    assert ket[1 * 4 + 2] == 1.0
    assert np.count_nonzero(ket) == 1
    with pytest.raises(ValueError):
        fock_ket(sp, (3, 0))


def test_operator_arithmetic_vs_numpy():
    sp = FockSpace((4,))
    a = destroy(sp)
    expr = (2.0 * a + a.dag() @ a - identity(sp)).toarray()
    ad = a.toarray()
    np.testing.assert_allclose(expr, 2.0 * ad + ad.conj().T @ ad - np.eye(4), atol=1e-14)


def test_expect_matches_trace():
    sp = FockSpace((4,))
    rho = fock_dm(sp, (2,))
    n = number(sp)
    assert abs(n.expect(rho) - 2.0) < 1e-14
    rng = np.random.default_rng(3)
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    r = m @ m.conj().T
    r /= np.trace(r)
    assert abs(n.expect(r) - np.trace(n.toarray() @ r)) < 1e-12


def test_density_matrix_validate_rejects_bad_states():
    sp = FockSpace((3,))
    good = fock_dm(sp, (0,))
    good.validate()
    with pytest.raises(ValueError):
        DensityMatrix(sp, 2.0 * np.eye(3) / 3.0).validate()
    bad_herm = np.eye(3, dtype=complex) / 3.0
    bad_herm[0, 1] = 0.1
    with pytest.raises(ValueError):
        DensityMatrix(sp, bad_herm).validate()
    neg = np.diag([0.7, 0.5, -0.2]).astype(complex)
    with pytest.raises(ValueError):
        DensityMatrix(sp, neg).validate()


def test_hermitian_flag_checked():
    sp = FockSpace((3,))
    with pytest.raises(ValueError):
        Operator(sp, destroy(sp).data, hermitian=True)


def test_vectorization_column_stacking():
    # vec(A rho B) = (B^T kron A) vec(rho) with vec = ravel(order='F')
    rng = np.random.default_rng(11)
    n = 3
    sp = FockSpace((n,))
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    lhs = (sprepost(Operator(sp, A).data, Operator(sp, B).data)
           @ rho.ravel(order="F")).reshape((n, n), order="F")
    np.testing.assert_allclose(lhs, A @ rho @ B, atol=1e-12)
    lhs = (spre(Operator(sp, A).data) @ rho.ravel(order="F")).reshape((n, n), order="F")
    np.testing.assert_allclose(lhs, A @ rho, atol=1e-12)
    lhs = (spost(Operator(sp, B).data) @ rho.ravel(order="F")).reshape((n, n), order="F")
    np.testing.assert_allclose(lhs, rho @ B, atol=1e-12)


def test_liouvillian_matches_dense_oracle():
    rng = np.random.default_rng(7)
    n = 4
    sp = FockSpace((n,))
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    H = (h + h.conj().T) / 2
    C1 = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    C2 = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    collapses = [(0.3, C1), (1.7, C2)]
    L = liouvillian(Operator(sp, H, hermitian=True),
                    [(r, Operator(sp, C)) for r, C in collapses])
    L_ref = oracles.liouvillian_dense(H, collapses)
    np.testing.assert_allclose(L.data.toarray(), L_ref, atol=1e-12)
    # and its action agrees with the term-by-term right-hand side
    rho = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = rho @ rho.conj().T
    rho /= np.trace(rho)
    np.testing.assert_allclose(L.apply(rho), oracles.lindblad_rhs(H, collapses, rho),
                               atol=1e-12)


def test_dissipator_rejects_negative_rate():
    sp = FockSpace((3,))
    with pytest.raises(ValueError):
        dissipator(destroy(sp), -0.1)
    with pytest.raises(ValueError):
        liouvillian(None, [(-1.0, destroy(sp))])


def test_liouvillian_trace_annihilation():
    # rows of L corresponding to tr(rho) must sum to zero: tr(L rho) = 0
    sp = FockSpace((3, 2))
    H = number(sp, 0) + 0.5 * quadrature(sp, 1)
    L = liouvillian(H, [(0.2, destroy(sp, 0)), (0.9, destroy(sp, 1))])
    rng = np.random.default_rng(5)
    r = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    assert abs(np.trace(L.apply(r))) < 1e-12


def test_partial_transpose_involution_and_bell_negativity():
    rng = np.random.default_rng(13)
    d1, d2 = 2, 3
    m = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    rho = m @ m.conj().T
    rho /= np.trace(rho)
    for sub in (0, 1):
        pt2 = partial_transpose(partial_transpose(rho, sub, (d1, d2)), sub, (d1, d2))
        np.testing.assert_allclose(pt2, rho, atol=1e-14)
    # maximally entangled qubit pair: PT spectrum {1/2, 1/2, 1/2, -1/2}
    bell = np.zeros(4, dtype=complex)
    bell[0] = bell[3] = 1.0 / np.sqrt(2.0)
    rho_b = np.outer(bell, bell.conj())
    lam = np.sort(np.linalg.eigvalsh(partial_transpose(rho_b, 1, (2, 2))))
    np.testing.assert_allclose(lam, [-0.5, 0.5, 0.5, 0.5], atol=1e-14)


def test_partial_transpose_positive_for_product_state():
    sp = FockSpace((3, 3))
    rho = fock_dm(sp, (1, 2)).data
    lam = np.linalg.eigvalsh(partial_transpose(rho, 1, (3, 3)))
    assert lam.min() > -1e-14


def test_partial_trace_product_and_bell():
    sp = FockSpace((2, 3))
    rho = fock_dm(sp, (1, 2)).data
    np.testing.assert_allclose(partial_trace(rho, (2, 3), 0), np.diag([0.0, 1.0]),
                               atol=1e-14)
    np.testing.assert_allclose(partial_trace(rho, (2, 3), 1),
                               np.diag([0.0, 0.0, 1.0]), atol=1e-14)
    bell = np.zeros(4, dtype=complex)
    bell[0] = bell[3] = 1.0 / np.sqrt(2.0)
    rho_b = np.outer(bell, bell.conj())
    np.testing.assert_allclose(partial_trace(rho_b, (2, 2), 0), np.eye(2) / 2,
                               atol=1e-14)
    # keeping both modes in order returns the state itself
    np.testing.assert_allclose(partial_trace(rho_b, (2, 2), (0, 1)), rho_b, atol=1e-14)


def test_partial_trace_three_mode_keep_pair():
    spc = FockSpace((2, 2, 2))
    rho = fock_dm(spc, (1, 0, 1)).data
    red = partial_trace(rho, (2, 2, 2), (0, 2))
    expected = np.zeros((4, 4))
    expected[3, 3] = 1.0  # |1,1><1,1| of the kept pair
    np.testing.assert_allclose(red, expected, atol=1e-14)


def test_hermiticity_defect():
    assert hermiticity_defect(np.eye(3)) == 0.0
    m = np.zeros((2, 2), dtype=complex)
    m[0, 1] = 1.0
    assert abs(hermiticity_defect(m) - 1.0) < 1e-15


def test_embed_rejects_bad_mode():
    sp = FockSpace((2, 2))
    with pytest.raises(ValueError):
        destroy(sp, 2)
    with pytest.raises(ValueError):
        transition(sp, 0, 2, 0)
