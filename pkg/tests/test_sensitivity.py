import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitrb.forward import solve_forward
from eitrb.sensitivity import fd_check, jacobian_sigma, jacobian_z


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_jacobian_sigma_matches_central_differences(small_sys, small_solution, node_seed):
    s = small_solution
    l = int(np.random.default_rng(node_seed).integers(small_sys.n_nodes))
    J = jacobian_sigma(small_sys, s.sol, columns=[l])[:, 0]
    fd = fd_check(lambda x: solve_forward(small_sys, x, s.z, s.P).Uvec, s.sigma, l)
    assert rel_err(J, fd) <= 1e-5


def test_jacobian_z_matches_central_differences(small_sys, small_solution):
    s = small_solution
    Jz = jacobian_z(small_sys, s.sol)
    for m in range(small_sys.n_electrodes):
        fd = fd_check(lambda z: solve_forward(small_sys, s.sigma, z, s.P).Uvec, s.z, m)
        assert rel_err(Jz[:, m], fd) <= 1e-5


def test_column_subset_matches_full(small_sys, small_solution):
    J = jacobian_sigma(small_sys, small_solution.sol)
    cols = np.array([3, 50, 7])
    np.testing.assert_allclose(jacobian_sigma(small_sys, small_solution.sol, cols), J[:, cols],
                               rtol=1e-12, atol=1e-14 * np.abs(J).max())


def test_jacobian_sigma_explicit_formula(small_sys, small_solution):
    # column l = vec(-X0^T dA_l X), with dA_l built from the affine stiffness
    s = small_solution
    N = small_sys.n_nodes
    l = 11
    e = np.zeros(N)
    e[l] = 1.0
    dA = small_sys.stiffness(e)
    ref = -(s.sol.X0[:N].T @ (dA @ s.sol.X[:N])).ravel(order="F")
    J = jacobian_sigma(small_sys, s.sol, [l])[:, 0]
    np.testing.assert_allclose(J, ref, rtol=1e-10, atol=1e-14 * np.abs(ref).max())


def test_jacobian_z_scaling_identity(small_sys, small_solution):
    s = small_solution
    z2 = 2 * s.z
    sol2 = solve_forward(small_sys, s.sigma, z2, s.P)
    Jz = jacobian_z(small_sys, sol2, z2)
    for m, B in enumerate(small_sys.contact_blocks):
        ref = 0.25 * (sol2.X0.T @ (B @ sol2.X)).ravel(order="F") / s.z[m] ** 2
        np.testing.assert_allclose(Jz[:, m], ref, rtol=1e-12)


def test_entries_finite_and_nonzero(small_sys, small_solution):
    J = jacobian_sigma(small_sys, small_solution.sol)
    Jz = jacobian_z(small_sys, small_solution.sol)
    assert np.all(np.isfinite(J)) and np.abs(J).max() > 0
    assert np.all(np.isfinite(Jz)) and np.abs(Jz).max() > 0


def test_jz_full_rank_at_initial_guess(small_sys):
    from eitrb.forward import current_patterns

    sol = solve_forward(small_sys, 0.93, 0.007, current_patterns(8))
    s = np.linalg.svd(jacobian_z(small_sys, sol), compute_uv=False)
    assert s[-1] > 1e-12 * s[0]


def test_shape_mismatch(small_sys, ball_sys):
    from eitrb.forward import current_patterns

    sol = solve_forward(ball_sys, 1.0, 0.01, current_patterns(6))
    with pytest.raises(ValueError):
        jacobian_sigma(small_sys, sol)
    with pytest.raises(ValueError):
        jacobian_z(small_sys, sol)


def test_fd_check_validation():
    f = lambda x: x**2  # noqa: E731
    with pytest.raises(ValueError):
        fd_check(f, [1.0, 2.0], 0, step=0.0)
    with pytest.raises(ValueError):
        fd_check(f, [1.0, 2.0], 0, step=1.5)
    np.testing.assert_allclose(fd_check(f, [1.0, 2.0], 1), [0.0, 4.0], atol=1e-8)


# ---- symmetry on the ball --------------------------------------------------
# The squashed Kuhn box is invariant under coordinate permutations and under
# x -> -x (all coordinates at once). Both map the six pole electrodes onto
# each other, so Jacobian columns of image nodes agree after permutation.


def _node_map(nodes, f):
    img = f(nodes)
    key = {tuple(np.round(p, 9)): i for i, p in enumerate(nodes)}
    return np.array([key[tuple(np.round(p, 9))] for p in img])


def _electrode_map(sys, f):
    c = np.array([sys.mesh.facet_centroids[fa].mean(axis=0) for fa in sys.layout.facets])
    img = f(c)
    return np.array([int(np.argmin(np.linalg.norm(c - p, axis=1))) for p in img])


SYMMETRIES = {"swap_xy": lambda x: x[:, [1, 0, 2]], "inversion": lambda x: -x,
              "cycle": lambda x: x[:, [2, 0, 1]]}


@pytest.fixture(scope="module")
def ball_unit(ball_sys):
    M = ball_sys.n_electrodes
    Z = np.eye(M) - 1.0 / M  # permutation-invariant pattern set
    sol = solve_forward(ball_sys, 1.0, 0.01, Z)
    return sol, jacobian_sigma(ball_sys, sol), jacobian_z(ball_sys, sol)


@pytest.mark.parametrize("name", sorted(SYMMETRIES))
def test_ball_symmetry_of_sigma_columns(ball_sys, ball_unit, name):
    f = SYMMETRIES[name]
    _, J, _ = ball_unit
    M = ball_sys.n_electrodes
    nmap = _node_map(ball_sys.mesh.nodes, f)
    emap = _electrode_map(ball_sys, f)
    assert sorted(emap) == list(range(M))
    Pi = np.eye(M)[emap]  # (Pi g)[i] = g[emap[i]]
    scale = np.abs(J).max()
    rng = np.random.default_rng(0)
    for l in rng.choice(ball_sys.n_nodes, 25, replace=False):
        G = J[:, l].reshape(M, M)
        Gimg = J[:, nmap[l]].reshape(M, M)
        np.testing.assert_allclose(Pi @ Gimg @ Pi.T, G, atol=1e-8 * scale)


def test_ball_contact_column_norms_equal(ball_unit):
    _, _, Jz = ball_unit
    norms = np.linalg.norm(Jz, axis=0)
    assert np.ptp(norms) <= 1e-6 * norms.max()
