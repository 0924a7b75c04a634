"""Log-normal conductivity and contact-resistance draws for snapshot training."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)

LOW_RANK_THRESHOLD = 8000


class CovarianceFactorError(np.linalg.LinAlgError):
    pass


def squared_exponential(points: np.ndarray, omega: float, ell: float) -> np.ndarray:
    """omega^2 exp(-|x_j - x_k|^2 / (2 ell^2))."""
    d2 = cdist(points, points, "sqeuclidean")
    return omega**2 * np.exp(-d2 / (2.0 * ell**2))


def build_covariance_factor(points: np.ndarray, omega: float, ell: float,
                            low_rank: bool | None = None, rtol: float = 1e-8) -> np.ndarray:
    """Factor F with F F^T = Gamma0 + jitter I (or a truncated eigenfactor).

    Dense mode uses Cholesky with jitter 1e-10 omega^2, escalated by up to
    three decades. Low-rank mode keeps eigenpairs above ``rtol`` times the
    largest eigenvalue; it is the default for more than 8000 points.
    """
    if omega <= 0 or ell <= 0:
        raise ValueError("omega and ell must be positive")
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if low_rank is None:
        low_rank = n > LOW_RANK_THRESHOLD
    G = squared_exponential(points, omega, ell)
    if low_rank:
        w, V = la.eigh(G)
        keep = w > rtol * w[-1]
        return V[:, keep] * np.sqrt(w[keep])
    jitter = 1e-10 * omega**2
    for attempt in range(4):
        try:
            return la.cholesky(G + jitter * np.eye(n), lower=True)
        except la.LinAlgError:
            log.debug("Cholesky failed with jitter %.1e", jitter)
            jitter *= 10.0
    raise CovarianceFactorError("covariance factorization failed after jitter escalation")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class FieldPrior:
    """Log-normal prior for training draws.

    ``sigma0`` is the nodal background (scalar or length n), ``factor`` a
    matrix with factor @ factor.T ~ Gamma0 (None when omega == 0).
    """

    sigma0: np.ndarray
    omega: float
    ell: float
    zeta0: float
    eta: float
    n_electrodes: int
    factor: np.ndarray | None = None

    @classmethod
    def build(cls, points, sigma0, omega, ell, zeta0, eta, n_electrodes, low_rank=None):
        n = len(points)
        sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), (n,)).copy()
        factor = build_covariance_factor(points, omega, ell, low_rank) if omega > 0 else None
        return cls(sigma0, float(omega), float(ell), float(zeta0), float(eta),
                   int(n_electrodes), factor)


def sample_sigma(prior: FieldPrior, seed) -> np.ndarray:
    """sigma = exp(log sigma0 + F xi), xi standard normal."""
    if prior.factor is None:
        return prior.sigma0.copy()
    xi = _rng(seed).standard_normal(prior.factor.shape[1])
    return np.exp(np.log(prior.sigma0) + prior.factor @ xi)


def sample_contacts(prior: FieldPrior, seed) -> np.ndarray:
    """z = zeta0 exp(eta xi), componentwise."""
    if prior.eta == 0:
        return np.full(prior.n_electrodes, prior.zeta0)
    xi = _rng(seed).standard_normal(prior.n_electrodes)
    return np.exp(np.log(prior.zeta0) + prior.eta * xi)


def draw_seeds(seed: int, index: int):
    """Independent (sigma, z) seeds for draw number ``index``."""
    return (seed, index, 0), (seed, index, 1)
