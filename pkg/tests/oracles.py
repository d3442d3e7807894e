"""Independent reference implementations used as test oracles.

Each function is written from the defining formula with explicit loops,
sharing no code with the package beyond plain numpy.
"""
import math

import numpy as np


def lower_pairs(p):
    """``(i, j)`` with ``i >= j`` in column-major order."""
    return [(i, j) for j in range(p) for i in range(j, p)]


def brute_force_w(sigma):
    """``W[(ij),(kl)] = s_ik s_jl + s_il s_jk`` element by element."""
    p = sigma.shape[0]
    pairs = lower_pairs(p)
    w = np.empty((len(pairs), len(pairs)))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            w[a, b] = sigma[i, k] * sigma[j, l] + sigma[i, l] * sigma[j, k]
    return w


def brute_force_duplication(p):
    pairs = lower_pairs(p)
    d = np.zeros((p * p, len(pairs)))
    for c, (i, j) in enumerate(pairs):
        d[i + j * p, c] = 1.0
        d[j + i * p, c] = 1.0
    return d


def naive_quasi_loglik(increments, kept, h, sigma):
    """Sum of per-increment Gaussian kernels, one increment at a time."""
    inv = np.linalg.inv(sigma)
    _, logdet = np.linalg.slogdet(sigma)
    total = 0.0
    for dx, k in zip(increments, kept):
        if not k:
            continue
        total += -float(dx @ inv @ dx) / (2.0 * h) - 0.5 * logdet
    return total


def scalar_qmle(increments, threshold, h):
    """Closed form ``sum dX^2 / (h n_kept)`` of the one-dimensional QMLE."""
    dx = np.asarray(increments, dtype=float).ravel()
    keep = np.abs(dx) <= threshold
    return float(np.sum(dx[keep] ** 2) / (h * keep.sum()))


def welford(xs):
    """Running mean and ddof=1 variance."""
    n, mean, m2 = 0, 0.0, 0.0
    for x in xs:
        n += 1
        d = x - mean
        mean += d / n
        m2 += d * (x - mean)
    return mean, (m2 / (n - 1) if n > 1 else math.nan), n


def latent_sigma(l1, l2, b, gamma, phi, theta_delta, theta_eps, psi_zeta):
    """Observable covariance from the stacked linear map ``(xi, zeta, delta, eps) -> X``."""
    k1, k2 = l1.shape[1], l2.shape[1]
    p1, p2 = l1.shape[0], l2.shape[0]
    dt = np.result_type(l1, l2, b, gamma, phi, theta_delta, theta_eps, psi_zeta)
    psi_inv = np.linalg.inv(np.eye(k2) - b)
    # eta = psi_inv (gamma xi + zeta)
    eta_map = np.hstack([psi_inv @ gamma, psi_inv])
    x_map = np.zeros((p1 + p2, k1 + k2 + p1 + p2), dtype=dt)
    x_map[:p1, :k1] = l1
    x_map[:p1, k1 + k2 : k1 + k2 + p1] = np.eye(p1)
    x_map[p1:, : k1 + k2] = l2 @ eta_map
    x_map[p1:, k1 + k2 + p1 :] = np.eye(p2)
    cov = np.zeros((x_map.shape[1],) * 2, dtype=dt)
    blocks = [phi, psi_zeta, theta_delta, theta_eps]
    o = 0
    for blk in blocks:
        k = blk.shape[0]
        cov[o : o + k, o : o + k] = blk
        o += k
    return x_map @ cov @ x_map.T


def complex_step_jacobian(spec, theta, h=1e-30):
    """``d vech Sigma / d theta`` by the complex-step rule on the stacked-map oracle."""
    from jumpsem.model import BLOCK_NAMES

    theta = np.asarray(theta, dtype=float)
    p = spec.p
    pairs = lower_pairs(p)
    out = np.empty((len(pairs), spec.q))
    for k in range(spec.q):
        t = theta.astype(complex)
        t[k] += 1j * h
        mats = {}
        for name in BLOCK_NAMES:
            blk = getattr(spec, name)
            m = blk.fixed.astype(complex)
            free = blk.index >= 0
            m[free] = t[blk.index[free]]
            mats[name] = m
        s = latent_sigma(
            mats["lambda1"], mats["lambda2"], mats["b"], mats["gamma"], mats["sigma_xixi"],
            mats["sigma_deltadelta"], mats["sigma_epseps"], mats["sigma_zetazeta"],
        )
        out[:, k] = [s[i, j].imag / h for i, j in pairs]
    return out


def gaussian_fisher(sigma, dsigmas):
    """``I_jk = tr(S^{-1} dS_j S^{-1} dS_k) / 2`` for a list of derivative matrices."""
    inv = np.linalg.inv(sigma)
    a = [inv @ d for d in dsigmas]
    q = len(a)
    out = np.empty((q, q))
    for j in range(q):
        for k in range(q):
            out[j, k] = 0.5 * np.trace(a[j] @ a[k])
    return out
