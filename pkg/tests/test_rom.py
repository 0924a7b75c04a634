import struct
import warnings

import numpy as np
import pytest
import scipy.linalg as la

import eitrb.rom as rom
from eitrb.forward import FactorizationError, current_patterns, solve_forward
from eitrb.rom import (BASIS_MAGIC, BasisFormatError, RankDeficiencyWarning, generate_snapshots,
                       identity_basis, load_basis, pod_basis, reduce_system, save_basis,
                       solve_reduced)
from eitrb.sampling import FieldPrior, draw_seeds, sample_contacts, sample_sigma


@pytest.fixture(scope="module")
def prior(small_sys):
    return FieldPrior.build(small_sys.mesh.nodes, 1.0, 0.5, 0.5, 0.01, 0.1, small_sys.n_electrodes)


@pytest.fixture(scope="module")
def P8():
    return current_patterns(8)


@pytest.fixture(scope="module")
def lib(small_sys, prior, P8):
    return generate_snapshots(small_sys, prior, 20, P8, seed=3)


def test_single_draw_passthrough(small_sys, prior, P8):
    lib1 = generate_snapshots(small_sys, prior, 1, P8, seed=11)
    assert lib1.Y.shape == (small_sys.n_nodes, 7)
    s_seed, z_seed = draw_seeds(11, 0)
    sol = solve_forward(small_sys, sample_sigma(prior, s_seed), sample_contacts(prior, z_seed), P8)
    np.testing.assert_array_equal(lib1.Y, sol.X[:small_sys.n_nodes])


def test_snapshot_resolve(small_sys, lib, P8):
    N = small_sys.n_nodes
    for j in (0, 7, 19):
        sol = solve_forward(small_sys, lib.sigmas[:, j], lib.zs[:, j], P8)
        ref = sol.X[:N]
        np.testing.assert_allclose(lib.Y[:, 7 * j:7 * j + 7], ref, atol=1e-12 * np.abs(ref).max())


def test_column_counting(small_sys, prior, P8):
    libc = generate_snapshots(small_sys, prior, 10, P8, count="columns")
    assert libc.Y.shape[1] == 10 and libc.n_draws == 2
    with pytest.raises(ValueError):
        generate_snapshots(small_sys, prior, 0, P8)
    with pytest.raises(ValueError):
        generate_snapshots(small_sys, prior, 3, P8, count="bogus")


def test_failed_draw_is_skipped(small_sys, prior, P8, monkeypatch, caplog):
    real = rom.solve_forward
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise FactorizationError("synthetic failure")
        return real(*a, **k)

    monkeypatch.setattr(rom, "solve_forward", flaky)
    libf = generate_snapshots(small_sys, prior, 3, P8, seed=0)
    assert libf.skipped == [1] and libf.seeds == [0, 2, 3] and libf.n_draws == 3
    assert "failed" in caplog.text


def test_basis_orthonormal_and_sorted(lib):
    b = pod_basis(lib, 30, n_electrodes=8)
    assert np.abs(b.Qhat.T @ b.Qhat - np.eye(30)).max() <= 1e-10
    assert np.all(np.diff(b.singular_values) <= 0)
    Q = b.block_matrix()
    assert np.abs(Q.T @ Q - np.eye(37)).max() <= 1e-10


def test_subspace_accuracy_against_dense_svd(lib):
    k = 30
    Y = lib.Y
    b = pod_basis(lib, k)
    err = np.linalg.norm(Y - b.Qhat @ (b.Qhat.T @ Y)) / np.linalg.norm(Y)
    U, s, _ = la.svd(Y, full_matrices=False)
    ref = np.linalg.norm(Y - U[:, :k] @ (U[:, :k].T @ Y)) / np.linalg.norm(Y)
    assert err <= 1.5 * ref
    np.testing.assert_allclose(b.singular_values[:5], s[:5], rtol=1e-6)


def test_rank_deficient_snapshots():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((60, 4)) @ rng.standard_normal((4, 40))
    with pytest.warns(RankDeficiencyWarning):
        b = pod_basis(Y, 10)
    assert b.k == 4 and b.rank_deficient


def test_too_few_columns():
    with pytest.raises(ValueError):
        pod_basis(np.ones((10, 12)), 5, oversampling=10)


def test_basis_roundtrip(tmp_path, lib):
    b = pod_basis(lib, 12, n_electrodes=8)
    b.provenance["K"] = 20
    save_basis(b, tmp_path / "b.rb")
    b2 = load_basis(tmp_path / "b.rb")
    np.testing.assert_array_equal(b2.Qhat, b.Qhat)
    np.testing.assert_array_equal(b2.singular_values, b.singular_values)
    np.testing.assert_array_equal(b2.spectrum, b.spectrum)
    assert (b2.n_electrodes, b2.provenance, b2.rank_deficient) == (8, b.provenance, False)
    save_basis(b2, tmp_path / "b2.rb")
    assert (tmp_path / "b.rb").read_bytes() == (tmp_path / "b2.rb").read_bytes()


def test_corrupt_basis_files(tmp_path, lib):
    b = pod_basis(lib, 12, n_electrodes=8)
    save_basis(b, tmp_path / "b.rb")
    raw = (tmp_path / "b.rb").read_bytes()
    (tmp_path / "magic.rb").write_bytes(b"NOTABASE" + raw[8:])
    with pytest.raises(BasisFormatError, match="magic"):
        load_basis(tmp_path / "magic.rb")
    (tmp_path / "short.rb").write_bytes(raw[:100])
    with pytest.raises(BasisFormatError, match="truncated"):
        load_basis(tmp_path / "short.rb")
    (tmp_path / "ver.rb").write_bytes(BASIS_MAGIC + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(BasisFormatError, match="version"):
        load_basis(tmp_path / "ver.rb")


# ---- reduced system ------------------------------------------------------------


def _params(sys, seed=0):
    rng = np.random.default_rng(seed)
    return np.exp(0.4 * rng.standard_normal(sys.n_nodes)), rng.uniform(0.005, 0.05, sys.n_electrodes)


def test_identity_basis_reproduces_matrix(small_sys):
    rs = reduce_system(small_sys, identity_basis(small_sys.n_nodes, 8))
    sigma, z = _params(small_sys)
    A = small_sys.matrix(sigma, z).toarray()
    np.testing.assert_allclose(rs.matrix(sigma, z), A, rtol=0, atol=1e-13 * np.abs(A).max())


def test_identity_basis_voltages(small_sys, P8):
    rs = reduce_system(small_sys, identity_basis(small_sys.n_nodes, 8))
    sigma, z = _params(small_sys, 1)
    Ur = solve_reduced(rs, sigma, z, P8).U
    Uf = solve_forward(small_sys, sigma, z, P8).U
    assert np.abs(Ur - Uf).max() <= 1e-10 * np.abs(Uf).max()


def test_reduced_matrix_symmetric_and_interlaced(small_sys, lib):
    rs = reduce_system(small_sys, pod_basis(lib, 25, n_electrodes=8))
    sigma, z = _params(small_sys, 2)
    Ar = rs.matrix(sigma, z)
    assert np.abs(Ar - Ar.T).max() <= 1e-10 * np.abs(Ar).max()
    lam_r = np.linalg.eigvalsh(Ar)[0]
    lam = np.linalg.eigvalsh(small_sys.matrix(sigma, z).toarray())[0]
    assert lam_r >= lam > 0


def test_reduced_matrix_is_congruence(small_sys, lib):
    b = pod_basis(lib, 25, n_electrodes=8)
    rs = reduce_system(small_sys, b)
    sigma, z = _params(small_sys, 3)
    Q = b.block_matrix()
    ref = Q.T @ small_sys.matrix(sigma, z).toarray() @ Q
    np.testing.assert_allclose(rs.matrix(sigma, z), ref, atol=1e-11 * np.abs(ref).max())


def test_galerkin_orthogonality(small_sys, lib, P8):
    b = pod_basis(lib, 25, n_electrodes=8)
    rs = reduce_system(small_sys, b)
    sigma, z = _params(small_sys, 4)
    sol = solve_reduced(rs, sigma, z, P8)
    f = small_sys.rhs(P8)
    r = f - small_sys.matrix(sigma, z) @ sol.X
    Q = b.block_matrix()
    assert np.abs(Q.T @ r).max() <= 1e-8 * np.abs(f).max()


def test_six_basis_products(small_sys, lib, P8):
    rs = reduce_system(small_sys, pod_basis(lib, 20, n_electrodes=8))
    solve_reduced(rs, *_params(small_sys), P8)
    assert rs.basis_products == 6


def test_reduced_rejects_bad_parameters(small_sys, lib, P8):
    rs = reduce_system(small_sys, pod_basis(lib, 20, n_electrodes=8))
    with pytest.raises(ValueError):
        solve_reduced(rs, -1.0, 0.01, P8)
    broken = rom.ReducedSystem(sys=small_sys, basis=rs.basis,
                               contact_blocks=tuple(-B for B in rs.contact_blocks))
    with pytest.raises(FactorizationError):
        solve_reduced(broken, 1e-9, 1e-3, P8)


def test_reduce_system_dimension_check(small_sys, ball_sys):
    with pytest.raises(ValueError):
        reduce_system(ball_sys, identity_basis(small_sys.n_nodes, 8))


def test_error_decreases_with_k(desk, desk_library):
    lib, prior = desk_library.lib, desk_library.prior
    s_seed, z_seed = draw_seeds(12345, 0)
    sigma, z = sample_sigma(prior, s_seed), sample_contacts(prior, z_seed)
    Uf = solve_forward(desk.sys, sigma, z, desk.P).U
    errs = []
    for k in (25, 50, 100, 200):
        rs = reduce_system(desk.sys, pod_basis(lib, k, n_electrodes=16))
        Ur = solve_reduced(rs, sigma, z, desk.P).U
        errs.append(np.linalg.norm(Ur - Uf) / np.linalg.norm(Uf))
    assert all(b <= 1.1 * a for a, b in zip(errs, errs[1:])), errs
