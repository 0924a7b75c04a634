"""Jacobians of the electrode voltages and a central-difference oracle.

Rows are indexed like the stacked measurements Uvec: row l*M + m holds
electrode m of pattern l.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .forward import AffineSystem, ForwardSolution


def _check(sys: AffineSystem, sol: ForwardSolution):
    if sol.X.shape[0] != sys.size or sol.X0.shape != (sys.size, sys.n_electrodes):
        raise ValueError("forward solution does not match the affine system")


def jacobian_sigma(sys: AffineSystem, sol: ForwardSolution, columns=None) -> np.ndarray:
    """Dense LM x len(columns) Jacobian with respect to nodal conductivity.

    Column l is vec(-X0^T dA_l X). Since dA_l collects the element stiffness
    matrices of the elements around node l, each weighted by 1/(d+1), the
    contraction is done with elementwise gradients of X and X0 and a single
    scatter to nodes. ``columns`` selects nodes (default: all).
    """
    _check(sys, sol)
    mesh = sys.mesh
    N, M, d = sys.n_nodes, sys.n_electrodes, mesh.dim
    L = sol.X.shape[1]
    E = mesh.n_elements
    gX = (sys.grad_op @ sol.X[:N]).reshape(E, d, L)
    gX0 = (sys.grad_op @ sol.X0[:N]).reshape(E, d, M)
    # per element: vol * gX^T gX0, laid out as (l, m) -> l*M + m
    P = np.matmul(np.transpose(gX, (0, 2, 1)), gX0)
    P *= (mesh.element_volumes / (d + 1))[:, None, None]
    P = P.reshape(E, L * M)
    inc = sys.incidence if columns is None else sys.incidence[np.asarray(columns)]
    return -np.asarray((inc @ P).T)


def jacobian_z(sys: AffineSystem, sol: ForwardSolution, z=None) -> np.ndarray:
    """Dense LM x M Jacobian with respect to the contact resistances.

    dA/dz_m = -B_m / z_m^2, hence column m is vec(X0^T B_m X) / z_m^2.
    """
    _check(sys, sol)
    z = sol.z if z is None else np.broadcast_to(np.asarray(z, float), (sys.n_electrodes,))
    cols = []
    for m, B in enumerate(sys.contact_blocks):
        blk = sol.X0.T @ (B @ sol.X)
        cols.append(blk.ravel(order="F") / z[m] ** 2)
    return np.column_stack(cols)


def fd_check(forward: Callable, point, index: int, step: float | None = None,
             rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference column d forward(x) / d x[index].

    ``forward`` maps a parameter vector to measurements. The step defaults
    to ``rel_step * |x[index]|``.
    """
    x = np.array(point, dtype=float)
    h = rel_step * abs(x[index]) if step is None else float(step)
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    if x[index] - h <= 0:
        raise ValueError("perturbed coordinate would be non-positive")
    xp, xm = x.copy(), x.copy()
    xp[index] += h
    xm[index] -= h
    return (np.asarray(forward(xp)) - np.asarray(forward(xm))) / (2 * h)
