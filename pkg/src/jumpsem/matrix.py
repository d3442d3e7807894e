"""Half-vectorisation and duplication-matrix utilities.

All index conventions are column-major: ``vech`` stacks the lower triangle
column by column, and ``vec`` stacks full columns.
"""
from functools import lru_cache

import numpy as np

from .errors import NotSymmetric


def vech_size(p):
    return p * (p + 1) // 2


@lru_cache(maxsize=None)
def vech_indices(p):
    """Return ``(rows, cols)`` of the lower triangle in vech order."""
    cols, rows = np.triu_indices(p)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def vech(m, rtol=1e-12):
    """Half-vectorise a symmetric matrix.

    Parameters
    ----------
    m : array_like, shape (..., p, p)
        Symmetric matrix or stack of symmetric matrices.
    rtol : float
        Allowed asymmetry relative to ``max |m|``.

    Returns
    -------
    ndarray, shape (..., p*(p+1)/2)
    """
    m = np.asarray(m, dtype=float)
    if m.shape[-1] != m.shape[-2]:
        raise NotSymmetric(f"expected square matrix, got shape {m.shape}")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if np.any(np.abs(m - np.swapaxes(m, -1, -2)) > rtol * scale):
        raise NotSymmetric("matrix is not symmetric")
    rows, cols = vech_indices(m.shape[-1])
    return m[..., rows, cols]


def unvech(v):
    """Inverse of :func:`vech`; the result is exactly symmetric."""
    v = np.asarray(v, dtype=float)
    k = v.shape[-1]
    p = int(round((np.sqrt(8 * k + 1) - 1) / 2))
    if vech_size(p) != k:
        raise ValueError(f"length {k} is not a triangular number")
    rows, cols = vech_indices(p)
    m = np.zeros(v.shape[:-1] + (p, p))
    m[..., rows, cols] = v
    m[..., cols, rows] = v
    return m


def vec(m):
    """Column-major vectorisation."""
    m = np.asarray(m)
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (-1,))


@lru_cache(maxsize=None)
def _duplication(p):
    rows, cols = vech_indices(p)
    d = np.zeros((p * p, vech_size(p)))
    k = np.arange(vech_size(p))
    d[rows + cols * p, k] = 1.0
    d[cols + rows * p, k] = 1.0
    d.setflags(write=False)
    return d


def duplication_matrix(p):
    """The ``p^2 x p(p+1)/2`` matrix with ``vec M = D vech M`` for symmetric M."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return _duplication(p).copy()


def duplication_pinv(p):
    """Moore-Penrose inverse ``(D'D)^{-1} D'`` of the duplication matrix.

    ``D'D`` is diagonal (1 for diagonal cells, 2 otherwise), so the inverse
    is formed exactly with entries in ``{0, 1/2, 1}``.
    """
    d = _duplication(p) if p >= 1 else duplication_matrix(p)
    counts = d.sum(axis=0)
    return d.T / counts[:, None]


@lru_cache(maxsize=None)
def vech_weights(p):
    """Weights turning ``tr(A dS)`` into ``w * vech(A) . vech(dS)`` for symmetric A, dS."""
    rows, cols = vech_indices(p)
    w = np.where(rows == cols, 1.0, 2.0)
    w.setflags(write=False)
    return w
