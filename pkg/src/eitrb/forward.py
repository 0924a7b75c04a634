"""Complete electrode model: affine FE assembly and forward solves.

Unknowns are ordered as N nodal potentials followed by M-1 coefficients of
the electrode potentials in an orthonormal basis C of the zero-sum space.
The system matrix is affine in the nodal conductivity and in 1/z::

    A(sigma, z) = sum_l sigma_l dA_l + sum_m (1/z_m) B_m

with dA_l the stiffness increment of hat function l and B_m the Robin
coupling block of electrode m.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import ElectrodeLayout, Mesh


class FactorizationError(RuntimeError):
    """Raised when a matrix expected to be SPD has a non-positive pivot."""


def build_current_basis(n_electrodes: int) -> np.ndarray:
    """Orthonormal basis of the zero-sum subspace of R^M (Helmert columns).

    Column k (0-based) is (1, ..., 1, -(k+1), 0, ...) / sqrt((k+1)(k+2)).
    """
    M = int(n_electrodes)
    if M < 2:
        raise ValueError("need at least two electrodes")
    C = np.zeros((M, M - 1))
    for k in range(M - 1):
        s = 1.0 / np.sqrt((k + 1) * (k + 2))
        C[: k + 1, k] = s
        C[k + 1, k] = -(k + 1) * s
    return C


def current_patterns(n_electrodes: int, kind: str = "adjacent", amplitude: float = 1.0,
                     matrix=None) -> np.ndarray:
    """Build an M x L current-pattern matrix.

    ``adjacent``: e_m - e_{m+1}, m = 1..M-1. ``reference``: e_1 - e_m.
    ``basis``: the columns of the zero-sum basis. ``explicit``: ``matrix``.
    """
    M = n_electrodes
    if kind == "adjacent":
        P = np.zeros((M, M - 1))
        P[np.arange(M - 1), np.arange(M - 1)] = 1.0
        P[np.arange(1, M), np.arange(M - 1)] = -1.0
    elif kind == "reference":
        P = np.zeros((M, M - 1))
        P[0, :] = 1.0
        P[np.arange(1, M), np.arange(M - 1)] = -1.0
    elif kind == "basis":
        P = build_current_basis(M)
    elif kind == "explicit":
        P = np.array(matrix, dtype=float)
    else:
        raise ValueError(f"unknown pattern kind {kind!r}")
    P = amplitude * P
    validate_patterns(P, M)
    return P


def validate_patterns(P: np.ndarray, n_electrodes: int) -> None:
    if P.ndim != 2 or P.shape[0] != n_electrodes:
        raise ValueError(f"pattern matrix must have {n_electrodes} rows, got shape {P.shape}")
    scale = max(np.abs(P).max(), 1.0)
    if np.abs(P.sum(axis=0)).max() > 1e-12 * scale:
        raise ValueError("current patterns must sum to zero over the electrodes")
    if np.linalg.matrix_rank(P) < P.shape[1]:
        raise ValueError("current patterns are linearly dependent")


@dataclass(frozen=True, eq=False)
class FactorizedSPD:
    """SuperLU factorization of an SPD matrix in symmetric mode."""

    lu: object
    n: int

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.lu.solve(np.asarray(b, dtype=np.float64))


def factorize_spd(A: sp.spmatrix) -> FactorizedSPD:
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise FactorizationError(str(exc)) from exc
    # symmetric pivoting without row exchanges: SPD iff all pivots positive
    if not (np.all(lu.perm_r == lu.perm_c) and np.all(lu.U.diagonal() > 0)):
        raise FactorizationError("matrix is not positive definite")
    return FactorizedSPD(lu, A.shape[0])


class _Pattern:
    """Fixed CSR sparsity pattern with a linear map onto its data array."""

    def __init__(self, rows, cols, shape):
        key = rows.astype(np.int64) * shape[1] + cols
        uniq, inv = np.unique(key, return_inverse=True)
        self.shape = shape
        self.pos = inv.ravel()
        self.nnz = uniq.size
        r = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(shape[0] + 1)).astype(np.int32)

    def gather(self, values=None, cols=None, n_params=None) -> sp.csr_matrix:
        """Sparse (nnz x n_params) map taking parameter vectors to CSR data."""
        if cols is None:
            return sp.csr_matrix((values, (self.pos, np.arange(self.pos.size))),
                                 shape=(self.nnz, self.pos.size))
        return sp.csr_matrix((values, (self.pos, cols)), shape=(self.nnz, n_params))

    def matrix(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


@dataclass(frozen=True, eq=False)
class AffineSystem:
    mesh: Mesh
    layout: ElectrodeLayout
    C: np.ndarray
    element_stiffness: np.ndarray  # (E, d+1, d+1) at unit conductivity
    contact_blocks: tuple  # M sparse (N+M-1)^2 matrices
    grad_op: sp.csr_matrix  # (E*d, N): nodal field -> elementwise gradients
    incidence: sp.csr_matrix  # (N, E) node-element incidence
    _a_pattern: _Pattern = field(repr=False)
    _a_sigma: sp.csr_matrix = field(repr=False)
    _a_contact: sp.csr_matrix = field(repr=False)
    _k_pattern: _Pattern = field(repr=False)
    _k_sigma: sp.csr_matrix = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_electrodes(self) -> int:
        return self.C.shape[0]

    @property
    def size(self) -> int:
        return self.n_nodes + self.n_electrodes - 1

    def _element_values(self, sigma: np.ndarray) -> np.ndarray:
        sig_e = np.asarray(sigma, dtype=float)[self.mesh.elements].mean(axis=1)
        return (self.element_stiffness * sig_e[:, None, None]).ravel()

    def matrix(self, sigma, z) -> sp.csr_matrix:
        sigma, z = _check_params(sigma, z, self.n_nodes, self.n_electrodes)
        data = self._a_sigma @ self._element_values(sigma) + self._a_contact @ (1.0 / z)
        return self._a_pattern.matrix(data)

    def stiffness(self, sigma) -> sp.csr_matrix:
        """Interior N x N block sum_l sigma_l dA_l."""
        return self._k_pattern.matrix(self._k_sigma @ self._element_values(sigma))

    def rhs(self, patterns: np.ndarray) -> np.ndarray:
        b = np.zeros((self.size, patterns.shape[1]))
        b[self.n_nodes:] = self.C.T @ patterns
        return b

    def unit_rhs(self) -> np.ndarray:
        return self.rhs(np.eye(self.n_electrodes))

    def voltages(self, X: np.ndarray) -> np.ndarray:
        return self.C @ X[self.n_nodes:]


def _check_params(sigma, z, n, M):
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    z = np.broadcast_to(np.asarray(z, dtype=float), (M,))
    if not np.all(sigma > 0):
        raise ValueError("conductivity must be strictly positive")
    if not np.all(z > 0):
        raise ValueError("contact resistances must be strictly positive")
    return sigma, z


def assemble_affine(mesh: Mesh, layout: ElectrodeLayout, C: np.ndarray | None = None) -> AffineSystem:
    M = layout.n_electrodes
    if C is None:
        C = build_current_basis(M)
    if C.shape != (M, M - 1):
        raise ValueError("current basis does not match electrode count")
    N, d = mesh.n_nodes, mesh.dim
    k = d + 1
    E = mesh.n_elements
    G = mesh.shape_gradients
    Ke = mesh.element_volumes[:, None, None] * np.einsum("eic,ejc->eij", G, G)

    el = mesh.elements
    k_rows = np.repeat(el, k, axis=1).ravel()
    k_cols = np.tile(el, (1, k)).ravel()

    # contact triplets: (row, col, value, electrode)
    c_rows, c_cols, c_vals, c_par = [], [], [], []
    facet_mass = (np.ones((d, d)) + np.eye(d)) / (d * (d + 1))
    blocks = []
    size = N + M - 1
    for m, fidx in enumerate(layout.facets):
        fac = mesh.boundary_facets[fidx]
        area = mesh.facet_areas[fidx]
        r_uu = np.repeat(fac, d, axis=1).ravel()
        c_uu = np.tile(fac, (1, d)).ravel()
        v_uu = (area[:, None, None] * facet_mass[None]).ravel()
        bvec = np.bincount(fac.ravel(), weights=np.repeat(area / d, d), minlength=N)
        nodes_m = np.flatnonzero(bvec)
        cm = C[m]
        # uU and Uu blocks
        r_uU = np.repeat(nodes_m, M - 1)
        c_uU = N + np.tile(np.arange(M - 1), nodes_m.size)
        v_uU = -(bvec[nodes_m][:, None] * cm[None, :]).ravel()
        r_UU = N + np.repeat(np.arange(M - 1), M - 1)
        c_UU = N + np.tile(np.arange(M - 1), M - 1)
        v_UU = (layout.areas[m] * np.outer(cm, cm)).ravel()
        rows = np.concatenate([r_uu, r_uU, c_uU, r_UU])
        cols = np.concatenate([c_uu, c_uU, r_uU, c_UU])
        vals = np.concatenate([v_uu, v_uU, v_uU, v_UU])
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(size, size)))
        c_rows.append(rows)
        c_cols.append(cols)
        c_vals.append(vals)
        c_par.append(np.full(rows.size, m))
    c_rows = np.concatenate(c_rows)
    c_cols = np.concatenate(c_cols)
    c_vals = np.concatenate(c_vals)
    c_par = np.concatenate(c_par)

    n_k = k_rows.size
    a_pat = _Pattern(np.concatenate([k_rows, c_rows]), np.concatenate([k_cols, c_cols]), (size, size))
    pos_k, pos_c = a_pat.pos[:n_k], a_pat.pos[n_k:]
    a_sigma = sp.csr_matrix((np.ones(n_k), (pos_k, np.arange(n_k))), shape=(a_pat.nnz, n_k))
    a_contact = sp.csr_matrix((c_vals, (pos_c, c_par)), shape=(a_pat.nnz, M))
    k_pat = _Pattern(k_rows, k_cols, (N, N))
    k_sigma = k_pat.gather(np.ones(n_k))

    g_rows = (np.arange(E)[:, None, None] * d + np.arange(d)[None, None, :])
    g_rows = np.broadcast_to(g_rows, (E, k, d)).ravel()
    g_cols = np.broadcast_to(el[:, :, None], (E, k, d)).ravel()
    grad_op = sp.csr_matrix((G.ravel(), (g_rows, g_cols)), shape=(E * d, N))
    inc = sp.csr_matrix((np.ones(E * k), (el.ravel(), np.repeat(np.arange(E), k))), shape=(N, E))

    return AffineSystem(mesh=mesh, layout=layout, C=C, element_stiffness=Ke,
                        contact_blocks=tuple(blocks), grad_op=grad_op, incidence=inc,
                        _a_pattern=a_pat, _a_sigma=a_sigma, _a_contact=a_contact,
                        _k_pattern=k_pat, _k_sigma=k_sigma)


@dataclass(eq=False)
class ForwardSolution:
    """Nodal solutions for the applied patterns (X) and unit currents (X0).

    ``U`` is the M x L electrode voltage matrix, ``Uvec`` its column-wise
    stacking. X and X0 may be lifted from a reduced solve.
    """

    X: np.ndarray
    X0: np.ndarray
    U: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    factor: object = None

    @property
    def Uvec(self) -> np.ndarray:
        return self.U.ravel(order="F")


def solve_forward(sys: AffineSystem, sigma, z, patterns: np.ndarray) -> ForwardSolution:
    sigma, z = _check_params(sigma, z, sys.n_nodes, sys.n_electrodes)
    A = sys.matrix(sigma, z)
    fac = factorize_spd(A)
    L = patterns.shape[1]
    rhs = np.hstack([sys.rhs(patterns), sys.unit_rhs()])
    sol = fac.solve(rhs)
    X, X0 = sol[:, :L], sol[:, L:]
    return ForwardSolution(X=X, X0=X0, U=sys.voltages(X), sigma=np.array(sigma),
                           z=np.array(z), factor=fac)
