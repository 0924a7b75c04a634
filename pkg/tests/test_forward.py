import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from eitrb.forward import (FactorizationError, assemble_affine, build_current_basis,
                           current_patterns, factorize_spd, solve_forward, validate_patterns)
from eitrb.mesh import RectElectrode, assign_electrodes, build_mesh
from eitrb.meshgen import disk_mesh


def test_basis_two_electrodes():
    C = build_current_basis(2)
    np.testing.assert_allclose(np.abs(C[:, 0]), [1 / math.sqrt(2)] * 2, rtol=1e-15)
    assert C[0, 0] == -C[1, 0]


def test_basis_orthonormal_16():
    C = build_current_basis(16)
    assert C.shape == (16, 15)
    assert np.abs(C.T @ C - np.eye(15)).max() <= 1e-12


def test_basis_column_sums_48():
    assert np.abs(build_current_basis(48).sum(axis=0)).max() < 1e-12


@given(st.integers(2, 80))
def test_basis_invariants(M):
    C = build_current_basis(M)
    assert np.abs(C.T @ C - np.eye(M - 1)).max() <= 1e-12
    assert np.abs(C.sum(axis=0)).max() <= 1e-12


def test_basis_needs_two():
    with pytest.raises(ValueError):
        build_current_basis(1)


@pytest.mark.parametrize("kind", ["adjacent", "reference", "basis"])
def test_pattern_kinds(kind):
    P = current_patterns(6, kind)
    assert P.shape == (6, 5)
    assert np.abs(P.sum(axis=0)).max() < 1e-14
    assert np.linalg.matrix_rank(P) == 5


def test_pattern_validation():
    with pytest.raises(ValueError, match="sum to zero"):
        validate_patterns(np.array([[1.0], [0.0]]), 2)
    with pytest.raises(ValueError, match="dependent"):
        validate_patterns(np.array([[1.0, 2.0], [-1.0, -2.0], [0, 0]]), 3)
    with pytest.raises(ValueError):
        validate_patterns(np.ones((3, 1)), 4)
    with pytest.raises(ValueError):
        current_patterns(4, "spiral")
    P = current_patterns(3, "explicit", matrix=[[1, 0], [-1, 1], [0, -1]])
    assert P.shape == (3, 2)


# ---- assembly ----------------------------------------------------------------


def tet_system():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    mesh = build_mesh(pts, [[0, 1, 2, 3]])
    # two electrodes on two facets; the remaining two stay insulated
    desc = [RectElectrode((1 / 3, 1 / 3, 0), (0, 0, -1), (1, 0, 0), 1, 1, depth=0.01),
            RectElectrode((0, 1 / 3, 1 / 3), (-1, 0, 0), (0, 1, 0), 1, 1, depth=0.01)]
    return assemble_affine(mesh, assign_electrodes(mesh, desc))


def test_reference_tet_stiffness():
    sys = tet_system()
    K = sys.stiffness(np.ones(4)).toarray()
    # grad phi = (-1,-1,-1), e1, e2, e3; volume 1/6
    G = np.array([[-1, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    np.testing.assert_allclose(K, G @ G.T / 6, rtol=0, atol=1e-15)


def test_reference_tet_contact_block():
    sys = tet_system()
    assert [len(f) for f in sys.layout.facets] == [1, 1]
    np.testing.assert_allclose(sys.layout.areas, [0.5, 0.5])
    # interior block of B_1 is the P1 facet mass matrix of the z = 0 face
    B = sys.contact_blocks[0].toarray()[:4, :4]
    ref = np.zeros((4, 4))
    ref[np.ix_([0, 1, 2], [0, 1, 2])] = 0.5 * (np.ones((3, 3)) + np.eye(3)) / 12
    np.testing.assert_allclose(B, ref, atol=1e-15)


def test_contact_quadratic_form(small_sys):
    # x = [u = 1; beta]: x^T B_m x = |E_m| (1 - U_m)^2 with U = C beta
    rng = np.random.default_rng(0)
    beta = rng.standard_normal(small_sys.n_electrodes - 1)
    x = np.concatenate([np.ones(small_sys.n_nodes), beta])
    U = small_sys.C @ beta
    for m, B in enumerate(small_sys.contact_blocks):
        assert x @ (B @ x) == pytest.approx(small_sys.layout.areas[m] * (1 - U[m]) ** 2, rel=1e-12)


def test_partition_of_unity(small_sys):
    N = small_sys.n_nodes
    total = sp.csr_matrix((N, N))
    for l in range(N):
        e = np.zeros(N)
        e[l] = 1.0
        total = total + small_sys.stiffness(e)
    ref = small_sys.stiffness(np.ones(N))
    assert abs(total - ref).max() <= 1e-12 * abs(ref).max()


def test_affine_in_sigma_and_inverse_z(small_sys):
    rng = np.random.default_rng(1)
    N, M = small_sys.n_nodes, small_sys.n_electrodes
    s1, s2 = rng.uniform(0.5, 2, N), rng.uniform(0.5, 2, N)
    z = rng.uniform(0.01, 0.1, M)
    A = small_sys.matrix(s1 + s2, z)
    contact = sum(B / z[m] for m, B in enumerate(small_sys.contact_blocks))
    ref = sp.block_diag([small_sys.stiffness(s1) + small_sys.stiffness(s2),
                         sp.csr_matrix((M - 1, M - 1))]) + contact
    assert abs(A - ref).max() <= 1e-12 * abs(A).max()


def test_desk_matrix_symmetric(desk):
    rng = np.random.default_rng(2)
    A = desk.sys.matrix(rng.uniform(0.5, 2, desk.sys.n_nodes), rng.uniform(1e-3, 1e-2, 16))
    assert abs(A - A.T).max() <= 1e-12


def test_nonpositive_parameters(small_sys):
    P = current_patterns(8)
    with pytest.raises(ValueError, match="conductivity"):
        solve_forward(small_sys, np.r_[0.0, np.ones(small_sys.n_nodes - 1)], 0.01, P)
    with pytest.raises(ValueError, match="contact"):
        solve_forward(small_sys, 1.0, np.r_[-1.0, np.ones(7)], P)


def test_factorization_rejects_indefinite():
    with pytest.raises(FactorizationError):
        factorize_spd(sp.diags([1.0, -1.0, 2.0]))
    f = factorize_spd(sp.diags([1.0, 4.0]))
    np.testing.assert_allclose(f.solve(np.array([1.0, 1.0])), [1.0, 0.25])


# ---- solves ------------------------------------------------------------------


def test_zero_patterns(small_sys):
    sol = solve_forward(small_sys, 1.0, 0.01, np.zeros((8, 3)))
    assert np.all(sol.X == 0) and np.all(sol.U == 0)


def test_linearity_is_exact(small_solution, small_sys):
    s = small_solution
    sol2 = solve_forward(small_sys, s.sigma, s.z, 2 * s.P)
    np.testing.assert_array_equal(sol2.U, 2 * s.sol.U)


def test_voltages_in_zero_sum_space(small_solution):
    U = small_solution.sol.U
    assert np.abs(U.sum(axis=0)).max() <= 1e-10 * np.abs(U).max()
    np.testing.assert_array_equal(small_solution.sol.Uvec, U.T.ravel())


def test_solution_satisfies_system(small_solution, small_sys):
    s = small_solution
    A = small_sys.matrix(s.sigma, s.z)
    r = A @ s.sol.X - small_sys.rhs(s.P)
    assert np.abs(r).max() <= 1e-10 * np.abs(small_sys.rhs(s.P)).max()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_reciprocity_random_parameters(small_sys, seed):
    sys = small_sys
    rng = np.random.default_rng(seed)
    sigma = np.exp(0.5 * rng.standard_normal(sys.n_nodes))
    z = 10 ** rng.uniform(-3, -1, sys.n_electrodes)
    P = rng.standard_normal((8, 5))
    P -= P.mean(axis=0)
    U = solve_forward(sys, sigma, z, P).U
    G = P.T @ U
    assert np.abs(G - G.T).max() <= 1e-10 * np.abs(G).max()


def test_reciprocity_desk(desk):
    rng = np.random.default_rng(3)
    sigma = np.exp(0.3 * rng.standard_normal(desk.sys.n_nodes))
    sol = solve_forward(desk.sys, sigma, rng.uniform(1e-3, 1e-2, 16), desk.P)
    G = desk.P.T @ sol.U
    assert np.abs(G - G.T).max() <= 1e-10 * np.abs(G).max()


def test_power_decreases_with_conductivity(desk):
    powers = []
    for s in (0.5, 1.0, 2.0):
        sol = solve_forward(desk.sys, s, 0.007, desk.P)
        powers.append(np.einsum("ml,ml->l", desk.P, sol.U))
    powers = np.array(powers)
    assert np.all(powers > 0)
    assert np.all(np.diff(powers, axis=0) < 0)


def test_refinement_difference_is_reported(desk):
    Uc = solve_forward(desk.sys, 1.0, 0.002, desk.P).U
    Uf = solve_forward(desk.fine_sys, 1.0, 0.002, desk.P).U
    rel = np.linalg.norm(Uc - Uf) / np.linalg.norm(Uf)
    print(f"coarse vs fine electrode voltages, homogeneous sigma: relative difference {rel:.3e}")
    assert np.isfinite(rel) and rel < 1.0


def test_two_dimensional_problem():
    mesh = disk_mesh(5, 32)
    desc = [RectElectrode((math.cos(t), math.sin(t)), (math.cos(t), math.sin(t)),
                          (-math.sin(t), math.cos(t)), 0.2) for t in np.arange(4) * math.pi / 2]
    sys = assemble_affine(mesh, assign_electrodes(mesh, desc))
    P = current_patterns(4)
    U = solve_forward(sys, 1.0, 0.01, P).U
    G = P.T @ U
    assert np.abs(G - G.T).max() <= 1e-10 * np.abs(G).max()
