"""POD reduced basis for the interior potential and the reduced forward solve.

Only the N interior potential unknowns are reduced; the M-1 electrode
coefficients are kept, so the full basis is Q = blockdiag(Qhat, I).
"""
from __future__ import annotations

import io
import json
import logging
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .forward import (AffineSystem, FactorizationError, ForwardSolution, _check_params,
                      solve_forward)
from .sampling import FieldPrior, draw_seeds, sample_contacts, sample_sigma

log = logging.getLogger(__name__)

BASIS_MAGIC = b"EITRBQ\x00\x01"
BASIS_VERSION = 1


class BasisFormatError(ValueError):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(eq=False)
class SnapshotLibrary:
    Y: np.ndarray  # N x (draws * L)
    seeds: list
    sigmas: np.ndarray  # n x draws
    zs: np.ndarray  # M x draws
    n_patterns: int
    skipped: list = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return len(self.seeds)


def generate_snapshots(sys: AffineSystem, prior: FieldPrior, K: int, patterns: np.ndarray,
                       seed: int = 0, count: str = "draws") -> SnapshotLibrary:
    """Solve the forward problem for K random (sigma, z) and keep interior potentials.

    ``count="draws"`` collects K successful draws with all L pattern columns
    each; ``count="columns"`` stops once K snapshot columns are available.
    Failed draws are logged and skipped.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    L = patterns.shape[1]
    N = sys.n_nodes
    n_draws = K if count == "draws" else -(-K // L)
    if count not in ("draws", "columns"):
        raise ValueError("count must be 'draws' or 'columns'")
    cols, seeds, sigs, zs, skipped = [], [], [], [], []
    index = 0
    while len(seeds) < n_draws:
        if index >= 2 * n_draws + 10:
            raise RuntimeError(f"too many failed snapshot draws ({len(skipped)})")
        s_seed, z_seed = draw_seeds(seed, index)
        sigma = sample_sigma(prior, s_seed)
        z = sample_contacts(prior, z_seed)
        try:
            sol = solve_forward(sys, sigma, z, patterns)
        except (FactorizationError, ValueError) as exc:
            log.warning("snapshot draw %d (seed %s) failed: %s", index, s_seed, exc)
            skipped.append(index)
            index += 1
            continue
        cols.append(sol.X[:N])
        seeds.append(index)
        sigs.append(sigma)
        zs.append(z)
        index += 1
    Y = np.hstack(cols)
    if count == "columns":
        Y = Y[:, :K]
    return SnapshotLibrary(Y=Y, seeds=seeds, sigmas=np.column_stack(sigs), zs=np.column_stack(zs),
                           n_patterns=L, skipped=skipped)


@dataclass(eq=False)
class ReducedBasis:
    Qhat: np.ndarray  # N x k, orthonormal columns
    singular_values: np.ndarray  # leading k
    n_electrodes: int
    spectrum: np.ndarray = None  # all sketch singular values
    rank_deficient: bool = False
    provenance: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.Qhat.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.Qhat.shape[0]

    def lift(self, Xhat: np.ndarray) -> np.ndarray:
        k = self.k
        return np.vstack([self.Qhat @ Xhat[:k], Xhat[k:]])

    def block_matrix(self) -> np.ndarray:
        """Dense Q = blockdiag(Qhat, I); for tests on small meshes."""
        M1 = self.n_electrodes - 1
        return la.block_diag(self.Qhat, np.eye(M1))


def pod_basis(Y, k: int, oversampling: int = 10, power_iters: int = 1, seed: int = 0,
              n_electrodes: int | None = None, rank_rtol: float = 1e-10) -> ReducedBasis:
    """Randomized range finder with power iterations, then truncated SVD.

    ``Y`` is a SnapshotLibrary or an N x c array.
    """
    lib = Y if isinstance(Y, SnapshotLibrary) else None
    Y = lib.Y if lib is not None else np.asarray(Y, dtype=float)
    N, c = Y.shape
    ell = k + oversampling
    if ell > c:
        raise ValueError(f"k + oversampling = {ell} exceeds the {c} snapshot columns")
    rng = np.random.default_rng(seed)
    Omega = rng.standard_normal((c, ell))
    Qs, _ = la.qr(Y @ Omega, mode="economic")
    for _ in range(power_iters):
        Z, _ = la.qr(Y.T @ Qs, mode="economic")
        Qs, _ = la.qr(Y @ Z, mode="economic")
    Ub, s, _ = la.svd(Qs.T @ Y, full_matrices=False)
    rank = int(np.sum(s > rank_rtol * s[0])) if s[0] > 0 else 0
    deficient = rank < k
    if deficient:
        warnings.warn(f"snapshot matrix has numerical rank {rank} < k = {k}", RankDeficiencyWarning)
    r = min(k, rank)
    prov = {"k": k, "oversampling": oversampling, "power_iters": power_iters, "seed": seed,
            "columns": c}
    if lib is not None:
        prov["draws"] = lib.n_draws
    return ReducedBasis(Qhat=Qs @ Ub[:, :r], singular_values=s[:r].copy(),
                        n_electrodes=n_electrodes or 0, spectrum=s.copy(),
                        rank_deficient=deficient, provenance=prov)


def identity_basis(n_nodes: int, n_electrodes: int) -> ReducedBasis:
    return ReducedBasis(Qhat=np.eye(n_nodes), singular_values=np.ones(n_nodes),
                        n_electrodes=n_electrodes, spectrum=np.ones(n_nodes))


# --------------------------------------------------------------------------
# persistence


def save_basis(basis: ReducedBasis, path) -> None:
    N, k = basis.Qhat.shape
    spec = np.ascontiguousarray(basis.spectrum if basis.spectrum is not None else [], dtype="<f8")
    prov = json.dumps(basis.provenance, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(BASIS_MAGIC)
        f.write(struct.pack("<IQQQ?", BASIS_VERSION, N, basis.n_electrodes, k, basis.rank_deficient))
        f.write(np.ascontiguousarray(basis.Qhat, dtype="<f8").tobytes(order="C"))
        f.write(np.ascontiguousarray(basis.singular_values, dtype="<f8").tobytes())
        f.write(struct.pack("<Q", spec.size))
        f.write(spec.tobytes())
        f.write(struct.pack("<Q", len(prov)))
        f.write(prov)


def load_basis(path) -> ReducedBasis:
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())

    def read(n):
        b = buf.read(n)
        if len(b) != n:
            raise BasisFormatError(f"{path}: truncated basis file")
        return b

    if read(len(BASIS_MAGIC)) != BASIS_MAGIC:
        raise BasisFormatError(f"{path}: not a reduced-basis file (bad magic)")
    version, N, M, k, deficient = struct.unpack("<IQQQ?", read(struct.calcsize("<IQQQ?")))
    if version != BASIS_VERSION:
        raise BasisFormatError(f"{path}: unsupported basis format version {version}")
    Q = np.frombuffer(read(8 * N * k), dtype="<f8").reshape(N, k).astype(np.float64)
    s = np.frombuffer(read(8 * k), dtype="<f8").astype(np.float64)
    (ns,) = struct.unpack("<Q", read(8))
    spec = np.frombuffer(read(8 * ns), dtype="<f8").astype(np.float64)
    (np_,) = struct.unpack("<Q", read(8))
    prov = json.loads(read(np_).decode())
    return ReducedBasis(Qhat=Q, singular_values=s, n_electrodes=int(M), spectrum=spec,
                        rank_deficient=bool(deficient), provenance=prov)


# --------------------------------------------------------------------------
# reduced system


@dataclass(eq=False)
class ReducedSystem:
    sys: AffineSystem
    basis: ReducedBasis
    contact_blocks: tuple  # Q^T B_m Q, dense (k+M-1)^2
    basis_products: int = 0  # full-dimension products with Qhat in the last solve

    @property
    def size(self) -> int:
        return self.basis.k + self.sys.n_electrodes - 1

    def _qt(self, V):
        self.basis_products += 1
        return self.basis.Qhat.T @ V

    def _q(self, V):
        self.basis_products += 1
        return self.basis.Qhat @ V

    def matrix(self, sigma, z) -> np.ndarray:
        """Dense Q^T A(sigma, z) Q."""
        sigma, z = _check_params(sigma, z, self.sys.n_nodes, self.sys.n_electrodes)
        k = self.basis.k
        A = np.zeros((self.size, self.size))
        KQ = self.sys.stiffness(sigma) @ self.basis.Qhat
        self.basis_products += 1
        A[:k, :k] = self._qt(KQ)
        for m, B in enumerate(self.contact_blocks):
            A += B / z[m]
        return A


def reduce_system(sys: AffineSystem, basis: ReducedBasis) -> ReducedSystem:
    if basis.n_nodes != sys.n_nodes:
        raise ValueError(f"basis has {basis.n_nodes} rows, mesh has {sys.n_nodes} nodes")
    N = sys.n_nodes
    k = basis.k
    Qh = basis.Qhat
    blocks = []
    for B in sys.contact_blocks:
        B = B.tocsr()
        Buu = B[:N, :N]
        nodes = np.unique(Buu.nonzero()[0])
        Qn = Qh[nodes]
        out = np.zeros((k + sys.n_electrodes - 1,) * 2)
        out[:k, :k] = Qn.T @ (Buu[nodes][:, nodes] @ Qn)
        off = Qn.T @ B[nodes, N:].toarray()
        out[:k, k:] = off
        out[k:, :k] = off.T
        out[k:, k:] = B[N:, N:].toarray()
        blocks.append(out)
    return ReducedSystem(sys=sys, basis=basis, contact_blocks=tuple(blocks))


def solve_reduced(rsys: ReducedSystem, sigma, z, patterns: np.ndarray) -> ForwardSolution:
    """Galerkin solve in range(Q); X and X0 are returned lifted to full size."""
    sysf = rsys.sys
    N, k = sysf.n_nodes, rsys.basis.k
    rsys.basis_products = 0
    A = rsys.matrix(sigma, z)
    try:
        cho = la.cho_factor(A, lower=True, check_finite=False)
    except la.LinAlgError as exc:
        raise FactorizationError(f"reduced matrix is not positive definite: {exc}") from exc
    L = patterns.shape[1]
    f = sysf.rhs(patterns)
    f0 = sysf.unit_rhs()
    fh = np.vstack([rsys._qt(f[:N]), f[N:]])
    f0h = np.vstack([rsys._qt(f0[:N]), f0[N:]])
    Xh = la.cho_solve(cho, fh, check_finite=False)
    X0h = la.cho_solve(cho, f0h, check_finite=False)
    X = np.vstack([rsys._q(Xh[:k]), Xh[k:]])
    X0 = np.vstack([rsys._q(X0h[:k]), X0h[k:]])
    sigma, z = _check_params(sigma, z, N, sysf.n_electrodes)
    return ForwardSolution(X=X, X0=X0, U=sysf.voltages(X), sigma=np.array(sigma),
                           z=np.array(z), factor=cho)
