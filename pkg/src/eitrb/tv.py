"""Smoothed total variation and the lagged-diffusivity stiffness matrix H(sigma)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .forward import FactorizationError, factorize_spd
from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class TVConfig:
    T: float
    dirichlet_nodes: np.ndarray
    n_nodes: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("TV smoothing parameter T must be positive")
        if len(self.dirichlet_nodes) == 0:
            raise ValueError("at least one Dirichlet node is needed for a definite H")

    @property
    def free_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask)

    @property
    def n_free(self) -> int:
        return self.n_nodes - len(self.dirichlet_nodes)


def element_gradients(mesh: Mesh, sigma: np.ndarray) -> np.ndarray:
    """(E, d) constant gradient of the P1 field on each element.

    Written in vertex differences, so a constant shift of sigma cancels
    exactly whenever the shifted values are representable.
    """
    s = np.asarray(sigma, float)[mesh.elements]
    return np.einsum("evc,ev->ec", mesh.shape_gradients[:, 1:], s[:, 1:] - s[:, :1])


def tv_value(mesh: Mesh, sigma, T: float) -> float:
    """sum_e vol(e) sqrt(T^2 + |grad sigma|_e|^2)."""
    g = element_gradients(mesh, sigma)
    return float(mesh.element_volumes @ np.sqrt(T**2 + np.einsum("ec,ec->e", g, g)))


def tv_coefficients(mesh: Mesh, sigma, T: float) -> np.ndarray:
    g = element_gradients(mesh, sigma)
    return 1.0 / np.sqrt(T**2 + np.einsum("ec,ec->e", g, g))


def weighted_laplacian(mesh: Mesh, coef: np.ndarray) -> sp.csr_matrix:
    """Stiffness matrix of -div(coef grad .) with natural boundary conditions."""
    G = mesh.shape_gradients
    k = G.shape[1]
    Ke = (coef * mesh.element_volumes)[:, None, None] * np.einsum("eic,ejc->eij", G, G)
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class TVPreconditioner:
    H: sp.csr_matrix  # n' x n', free nodes only
    H_full: sp.csr_matrix  # n x n, before the Dirichlet reduction
    coefficients: np.ndarray
    cfg: TVConfig
    factor: object

    def solve(self, v: np.ndarray) -> np.ndarray:
        return self.factor.solve(v)


def assemble_H(mesh: Mesh, sigma, cfg: TVConfig) -> TVPreconditioner:
    coef = tv_coefficients(mesh, sigma, cfg.T)
    H_full = weighted_laplacian(mesh, coef)
    free = cfg.free_nodes
    H = H_full[free][:, free].tocsr()
    try:
        fac = factorize_spd(H)
    except FactorizationError as exc:
        raise FactorizationError(f"TV preconditioner is not positive definite: {exc}") from exc
    return TVPreconditioner(H=H, H_full=H_full, coefficients=coef, cfg=cfg, factor=fac)


def apply_Hinv(prec: TVPreconditioner, v: np.ndarray) -> np.ndarray:
    return prec.solve(v)


def tv_gradient(prec: TVPreconditioner, sigma: np.ndarray) -> np.ndarray:
    """(H_full sigma) on the free nodes: the reduced H acting on the free part
    plus the columns of the Dirichlet nodes applied to their values."""
    free = prec.cfg.free_nodes
    dn = prec.cfg.dirichlet_nodes
    sigma = np.asarray(sigma, float)
    return prec.H @ sigma[free] + prec.H_full[free][:, dn] @ sigma[dn]
