"""Projected lagged-diffusivity reconstruction with priorconditioned LSQR.

Contact resistances are never reconstructed: the data are projected onto the
orthogonal complement of range(J_z) computed once at (sigma0, z0), and z
stays at z0. Each outer step linearizes the forward map, takes one lagged
diffusivity step through an LSQR solve preconditioned by H(sigma)^{-1}, and
stops by the discrepancy principle at eps = sqrt(LM).
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .forward import AffineSystem, ForwardSolution, solve_forward
from .rom import ReducedSystem, solve_reduced
from .sensitivity import jacobian_sigma, jacobian_z
from .tv import TVConfig, assemble_H, tv_value

log = logging.getLogger(__name__)


class ProjectionError(np.linalg.LinAlgError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


@dataclass(frozen=True)
class NoiseModel:
    """Gamma = gamma^2 I over LM measurements; Morozov level sqrt(LM)."""

    gamma: float
    n_measurements: int

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("noise standard deviation must be positive")

    @property
    def epsilon(self) -> float:
        return math.sqrt(self.n_measurements)


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    """P = I - Jz (Jz^T Jz)^{-1} Jz^T, kept as I - Qz Qz^T with Qz = orth(Jz)."""

    Qz: np.ndarray
    gamma: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x - self.Qz @ (self.Qz.T @ x)

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Sigma_w x = Gamma^{-1/2} P x."""
        return self.apply(x) / self.gamma

    def dense(self) -> np.ndarray:
        return np.eye(self.Qz.shape[0]) - self.Qz @ self.Qz.T

    @property
    def rank(self) -> int:
        return self.Qz.shape[0] - self.Qz.shape[1]


def build_projection(Jz: np.ndarray, noise: NoiseModel | float, max_cond: float = 1e14
                     ) -> ProjectionOperator:
    gamma = noise.gamma if isinstance(noise, NoiseModel) else float(noise)
    s = la.svdvals(Jz)
    if s[-1] == 0 or (s[0] / s[-1]) ** 2 > max_cond:
        raise ProjectionError("J_z is rank deficient; cannot build the contact projector")
    Qz, _ = la.qr(Jz, mode="economic")
    return ProjectionOperator(Qz=Qz, gamma=gamma)


# --------------------------------------------------------------------------
# inner solver


@dataclass
class LSQRResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list  # residual norm estimates, starting with |b|


def priorcond_lsqr(B: np.ndarray, b: np.ndarray, prec, eps: float, max_inner: int = 200
                   ) -> LSQRResult:
    """LSQR for min |B x - b| right-preconditioned by a Cholesky factor of H.

    Runs Golub-Kahan bidiagonalization of B L^{-1} (H = L^T L) with all
    vectors mapped back to the original coordinates, so only products with
    B, B^T and H^{-1} (``prec.solve``) are needed; H v is carried along by
    recursion. Stops at the first iterate with |b - B x| <= eps.
    """
    B = np.asarray(B)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite values in the LSQR operator or right-hand side")
    n = B.shape[1]
    x = np.zeros(n)
    beta = float(np.linalg.norm(b))
    residuals = [beta]
    if beta <= eps:
        return LSQRResult(x, 0, True, residuals)
    u = b / beta
    p = B.T @ u
    s = prec.solve(p)
    alpha = math.sqrt(max(float(p @ s), 0.0))
    if alpha == 0:
        return LSQRResult(x, 0, False, residuals)
    v = s / alpha
    hv = p / alpha
    w = v.copy()
    phibar, rhobar = beta, alpha
    converged = False
    it = 0
    for it in range(1, max_inner + 1):
        u = B @ v - alpha * u
        beta = float(np.linalg.norm(u))
        if beta > 0:
            u /= beta
            p = B.T @ u
            s = prec.solve(p) - beta * v
            hs = p - beta * hv
            alpha = math.sqrt(max(float(s @ hs), 0.0))
            if alpha > 0:
                v = s / alpha
                hv = hs / alpha
        else:
            alpha = 0.0
        rho = math.hypot(rhobar, beta)
        c, sn = rhobar / rho, beta / rho
        theta = sn * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = sn * phibar
        x += (phi / rho) * w
        w = v - (theta / rho) * w
        residuals.append(abs(phibar))
        if abs(phibar) <= eps:
            converged = True
            break
        if alpha == 0 or beta == 0:
            break
    return LSQRResult(x, it, converged, residuals)


# --------------------------------------------------------------------------
# engines


class FullEngine:
    name = "full"

    def __init__(self, sys: AffineSystem):
        self.sys = sys

    def solve(self, sigma, z, patterns) -> ForwardSolution:
        return solve_forward(self.sys, sigma, z, patterns)


class ReducedEngine:
    name = "reduced"

    def __init__(self, rsys: ReducedSystem):
        self.rsys = rsys
        self.sys = rsys.sys

    def solve(self, sigma, z, patterns) -> ForwardSolution:
        return solve_reduced(self.rsys, sigma, z, patterns)


# --------------------------------------------------------------------------
# outer loop


@dataclass
class ReconstructionResult:
    sigma: np.ndarray
    converged: bool
    outer_iterations: int
    inner_iterations: list
    inner_converged: list
    discrepancy_history: list  # index 0 is the initial guess
    objective_history: list
    epsilon: float
    engine: str
    timings: dict
    iteration_timings: list
    status: str = "converged"
    sigma_history: list = field(default_factory=list)
    projection_check: float | None = None

    @property
    def discrepancy(self) -> float:
        return self.discrepancy_history[-1]

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "status": self.status,
            "engine": self.engine,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": list(self.inner_iterations),
            "inner_converged": list(self.inner_converged),
            "discrepancy": self.discrepancy,
            "discrepancy_history": list(self.discrepancy_history),
            "objective_history": list(self.objective_history),
            "epsilon": self.epsilon,
        }


def objective_eval(V, U, projection: ProjectionOperator, mesh, sigma, alpha: float = 1.0,
                   T: float = 1e-6) -> float:
    """Projected Tikhonov functional 0.5 |Sigma_w (V - U)|^2 + alpha R(sigma)."""
    r = projection.whiten(np.asarray(V) - np.asarray(U))
    val = 0.5 * float(r @ r)
    if alpha:
        val += alpha * tv_value(mesh, sigma, T)
    return val


def outer_iterate(sys: AffineSystem, engine, V: np.ndarray, patterns: np.ndarray,
                  noise: NoiseModel, sigma0, z0, T: float = 1e-6, delta: float = 1e-2,
                  max_outer: int = 50, max_inner: int = 200, projection=None,
                  keep_history: bool = False, log_stream=None, alpha_diag: float = 1.0,
                  divergence_window: int = 5) -> ReconstructionResult:
    """Sequential linearization with one projected lagged diffusivity step per iterate."""
    mesh = sys.mesh
    n, M = sys.n_nodes, sys.n_electrodes
    L = patterns.shape[1]
    V = np.asarray(V, dtype=float)
    if V.shape != (L * M,):
        raise ValueError(f"measurements have shape {V.shape}, expected ({L * M},)")
    sigma0 = np.broadcast_to(np.asarray(sigma0, float), (n,)).copy()
    z0 = np.broadcast_to(np.asarray(z0, float), (M,)).copy()
    eps = noise.epsilon
    dn = sys.layout.electrode_nodes(mesh)
    cfg = TVConfig(T=T, dirichlet_nodes=dn, n_nodes=n)
    free = cfg.free_nodes
    timings = {k: 0.0 for k in ("forward", "jacobian", "projection", "preconditioner", "lsqr")}
    per_iter = []

    t0 = time.perf_counter()
    sol = engine.solve(sigma0, z0, patterns)
    timings["forward"] += time.perf_counter() - t0
    if projection is None:
        t0 = time.perf_counter()
        projection = build_projection(jacobian_z(sys, sol, z0), noise)
        timings["projection"] += time.perf_counter() - t0

    sigma = sigma0.copy()
    disc = float(np.linalg.norm(projection.whiten(V - sol.Uvec)))
    discs = [disc]
    objs = [objective_eval(V, sol.Uvec, projection, mesh, sigma, alpha_diag, T)]
    inner, inner_ok = [], []
    history = [sigma.copy()] if keep_history else []
    converged = False
    status = "max_outer"
    rises = 0

    for i in range(max_outer):
        it_t = {}
        t0 = time.perf_counter()
        J = jacobian_sigma(sys, sol, columns=free)
        it_t["jacobian"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        B = projection.whiten(J)
        st = (sigma - sigma0)[free]
        y = V - sol.Uvec + J @ st
        b = projection.whiten(y)
        st_full = np.zeros(n)
        st_full[free] = st
        prec = assemble_H(mesh, st_full, cfg)
        it_t["preconditioner"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        res = priorcond_lsqr(B, b, prec, eps, max_inner)
        it_t["lsqr"] = time.perf_counter() - t0

        sigma = sigma0.copy()
        sigma[free] += res.x
        np.maximum(sigma, delta, out=sigma)

        t0 = time.perf_counter()
        sol = engine.solve(sigma, z0, patterns)
        it_t["forward"] = time.perf_counter() - t0

        disc = float(np.linalg.norm(projection.whiten(V - sol.Uvec)))
        obj = objective_eval(V, sol.Uvec, projection, mesh, sigma, alpha_diag, T)
        rises = rises + 1 if disc > discs[-1] else 0
        discs.append(disc)
        objs.append(obj)
        inner.append(res.iterations)
        inner_ok.append(res.converged)
        per_iter.append(it_t)
        for k, v in it_t.items():
            timings[k] += v
        if keep_history:
            history.append(sigma.copy())
        line = {"iteration": i + 1, "inner": res.iterations, "discrepancy": disc,
                "objective": obj, "wall_time": sum(it_t.values())}
        log.info(json.dumps(line))
        if log_stream is not None:
            log_stream.write(json.dumps(line) + "\n")

        if disc <= eps:
            converged = True
            status = "converged"
            break
        if rises >= divergence_window:
            status = "diverged"
            result = _result(sigma, False, i + 1, inner, inner_ok, discs, objs, eps, engine,
                             timings, per_iter, status, history)
            raise DivergenceError(
                f"discrepancy grew for {rises} consecutive outer iterations "
                f"({discs[-rises - 1]:.4g} -> {disc:.4g})", result)

    return _result(sigma, converged, len(inner), inner, inner_ok, discs, objs, eps, engine,
                   timings, per_iter, status, history)


def _result(sigma, converged, n_outer, inner, inner_ok, discs, objs, eps, engine, timings,
            per_iter, status, history):
    return ReconstructionResult(sigma=sigma, converged=converged, outer_iterations=n_outer,
                                inner_iterations=inner, inner_converged=inner_ok,
                                discrepancy_history=discs, objective_history=objs, epsilon=eps,
                                engine=engine.name, timings=timings, iteration_timings=per_iter,
                                status=status, sigma_history=history)
