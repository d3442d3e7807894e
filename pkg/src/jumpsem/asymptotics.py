"""Jacobian of vech Sigma, the weight matrix W, Fisher information and identifiability."""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NotPositiveDefinite
from .matrix import duplication_pinv, vech_indices, vech_size
from .model import check_pd, sigma_batch

_MAX_SHRINK = 6
# relative accuracy of the finite-difference Jacobian is far coarser than eps
JACOBIAN_RANK_FLOOR = np.sqrt(np.finfo(float).eps)


def _base_steps(theta):
    return np.maximum(1e-6, 1e-7 * np.abs(theta))


def sigma_jacobian(spec, theta):
    """``d vech Sigma(theta) / d theta'`` by central differences with one Richardson level.

    Returns
    -------
    ndarray, shape (p(p+1)/2, q)
    """
    theta = np.asarray(theta, dtype=float)
    q, p = spec.q, spec.p
    rows, cols = vech_indices(p)
    if q == 0:
        return np.zeros((vech_size(p), 0))
    steps = _base_steps(theta)
    for _ in range(_MAX_SHRINK):
        # probes ordered: +h, -h, +h/2, -h/2 for every coordinate
        eye = np.diag(steps)
        probes = np.concatenate([theta + eye, theta - eye, theta + eye / 2, theta - eye / 2])
        sig = sigma_batch(spec, probes)
        try:
            np.linalg.cholesky(sig)
        except np.linalg.LinAlgError:
            steps = steps / 10
            continue
        v = sig[:, rows, cols]
        wide = (v[:q] - v[q : 2 * q]) / (2 * steps[:, None])
        narrow = (v[2 * q : 3 * q] - v[3 * q :]) / steps[:, None]
        return ((4 * narrow - wide) / 3).T
    raise NotPositiveDefinite("Sigma is not positive definite next to theta; step floor reached")


def numerical_rank(m, floor=0.0):
    """Rank with the tolerance ``max(rows * eps, floor) * sigma_max``."""
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    tol = max(m.shape[0] * np.finfo(float).eps, floor) * s[0]
    return int(np.sum(s > tol))


@dataclass(frozen=True)
class AsymptoticInfo:
    jacobian: np.ndarray
    w: np.ndarray
    info: np.ndarray
    rank: int

    @property
    def q(self):
        return self.jacobian.shape[1]

    def covariance(self):
        """Limit covariance ``I^{-1}`` of ``sqrt(n) (theta_hat - theta_0)``."""
        return np.linalg.inv(self.info)


def weight_matrix(sigma):
    """``W = 2 D+ (Sigma kron Sigma) D+'``."""
    p = sigma.shape[0]
    dp = duplication_pinv(p)
    return 2.0 * dp @ np.kron(sigma, sigma) @ dp.T


def asymptotic_info(spec, theta):
    sigma = sigma_batch(spec, np.asarray(theta, dtype=float))
    check_pd(sigma)
    jac = sigma_jacobian(spec, theta)
    w = weight_matrix(sigma)
    c = cho_factor(w)
    info = jac.T @ cho_solve(c, jac)
    info = 0.5 * (info + info.T)
    return AsymptoticInfo(jacobian=jac, w=w, info=info, rank=numerical_rank(jac, JACOBIAN_RANK_FLOOR))


def check_identifiability(spec, theta0):
    """Local identifiability: the Jacobian of vech Sigma has full column rank at ``theta0``.

    This is a numerical, local check; it does not establish that
    ``Sigma(theta) = Sigma(theta0)`` forces ``theta = theta0`` globally.
    Singular values below ``sqrt(eps) * sigma_max`` count as zero since
    the Jacobian comes from finite differences.
    """
    rank = numerical_rank(sigma_jacobian(spec, theta0), JACOBIAN_RANK_FLOOR)
    return {"rank": rank, "q": spec.q, "is_identified": rank == spec.q}


def _logdet_and_solve(sigma, rhs):
    l = check_pd(sigma)
    logdet = 2.0 * np.sum(np.log(np.diag(l)))
    return logdet, cho_solve((l, True), rhs)


def y_function(spec, theta, theta0):
    """``-1/2 tr(Sigma^{-1} Sigma_0 - I) - 1/2 log(det Sigma / det Sigma_0)``.

    Equals minus the Kullback-Leibler divergence of ``N(0, Sigma(theta))``
    from ``N(0, Sigma(theta0))``, so it is never positive.
    """
    s = sigma_batch(spec, np.asarray(theta, dtype=float))
    s0 = sigma_batch(spec, np.asarray(theta0, dtype=float))
    logdet, solved = _logdet_and_solve(s, s0)
    logdet0, _ = _logdet_and_solve(s0, np.zeros((s0.shape[0], 0)))
    return -0.5 * (np.trace(solved) - s.shape[0]) - 0.5 * (logdet - logdet0)


def population_h(spec, theta, sigma0):
    """``-1/2 tr(Sigma^{-1} Sigma_0) - 1/2 log det Sigma``."""
    s = sigma_batch(spec, np.asarray(theta, dtype=float))
    check_pd(np.asarray(sigma0, dtype=float))
    logdet, solved = _logdet_and_solve(s, np.asarray(sigma0, dtype=float))
    return -0.5 * np.trace(solved) - 0.5 * logdet
