"""SEM model specifications and the model-implied covariance matrix.

A :class:`ModelSpec` declares, for each of the eight structural matrices,
which cells are fixed numbers and which cells are free parameters.  The
implied covariance of the observable increments is

    Sigma11 = L1 Phi L1' + Theta_delta
    Sigma12 = L1 Phi G' Psi^{-T} L2'
    Sigma22 = L2 Psi^{-1} (G Phi G' + Psi_zeta) Psi^{-T} L2' + Theta_eps

with ``Psi = I - B``.  Parameter vectors are plain 1-d float arrays.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, NotPositiveDefinite, SingularPsi

_FREE_RE = re.compile(r"^t(\d+)$")
_PSI_COND_LIMIT = 1e12

BLOCK_NAMES = (
    "lambda1",
    "lambda2",
    "b",
    "gamma",
    "sigma_xixi",
    "sigma_deltadelta",
    "sigma_epseps",
    "sigma_zetazeta",
)
SYMMETRIC_BLOCKS = frozenset(
    {"sigma_xixi", "sigma_deltadelta", "sigma_epseps", "sigma_zetazeta"}
)


@dataclass(frozen=True)
class Dimensions:
    p1: int
    p2: int
    k1: int
    k2: int
    q: int

    def __post_init__(self):
        for name in ("p1", "p2", "k1", "k2", "q"):
            if getattr(self, name) < 0:
                raise ConfigError(f"dimension {name} must be non-negative")
        if self.k1 > self.p1 or self.k2 > self.p2:
            raise ConfigError("factor counts must satisfy k1 <= p1 and k2 <= p2")
        if self.p < 1:
            raise ConfigError("at least one observable is required")

    @property
    def p(self):
        return self.p1 + self.p2

    @property
    def pbar(self):
        return self.p * (self.p + 1) // 2


@dataclass(frozen=True)
class Fixed:
    value: float


@dataclass(frozen=True)
class Free:
    index: int


def _parse_cell(cell):
    if isinstance(cell, Fixed):
        return float(cell.value), -1
    if isinstance(cell, Free):
        return 0.0, int(cell.index)
    if isinstance(cell, str):
        m = _FREE_RE.match(cell.strip())
        if not m:
            raise ConfigError(f"bad matrix entry {cell!r}; expected a number or 't<k>'")
        return 0.0, int(m.group(1))
    if isinstance(cell, bool) or cell is None:
        raise ConfigError(f"bad matrix entry {cell!r}")
    return float(cell), -1


class EntryBlock:
    """Fixed/free layout of one structural matrix.

    ``fixed`` holds the fixed values (0 where free) and ``index`` the
    parameter index of each free cell (-1 where fixed).  Symmetric blocks
    keep only the lower triangle of the input; the upper triangle mirrors it.
    """

    def __init__(self, fixed, index, symmetric=False):
        fixed = np.array(fixed, dtype=float)
        index = np.array(index, dtype=int)
        if fixed.shape != index.shape or fixed.ndim != 2:
            raise ConfigError("fixed/index arrays must be 2-d with equal shapes")
        if symmetric:
            if fixed.shape[0] != fixed.shape[1]:
                raise ConfigError("symmetric block must be square")
            lower = np.tril(np.ones(fixed.shape, dtype=bool))
            fixed = np.where(lower, fixed, fixed.T)
            index = np.where(lower, index, index.T)
        self.fixed = fixed
        self.index = index
        self.symmetric = symmetric
        self.fixed.setflags(write=False)
        self.index.setflags(write=False)
        flat = index.ravel()
        self._pos = np.flatnonzero(flat >= 0)
        self._idx = flat[self._pos]

    @classmethod
    def from_entries(cls, entries, shape, symmetric=False, name="block"):
        r, c = shape
        if entries is None:
            entries = [[0.0] * c for _ in range(r)]
        if isinstance(entries, dict) and "diag" in entries:
            diag = entries["diag"]
            if len(diag) != r or r != c:
                raise ConfigError(f"{name}: diag shorthand needs {r} entries")
            entries = [[diag[i] if i == j else 0.0 for j in range(c)] for i in range(r)]
        if r == 0 or c == 0:
            if entries not in ([], [[]]) and not all(len(row) == 0 for row in entries):
                raise ConfigError(f"{name}: expected an empty matrix of shape {shape}")
            return cls(np.zeros(shape), -np.ones(shape, dtype=int), symmetric)
        if len(entries) != r or any(len(row) != c for row in entries):
            raise ConfigError(f"{name}: expected a {r}x{c} matrix")
        fixed = np.zeros(shape)
        index = -np.ones(shape, dtype=int)
        for i, row in enumerate(entries):
            for j, cell in enumerate(row):
                fixed[i, j], index[i, j] = _parse_cell(cell)
        if symmetric:
            upper = np.triu_indices(r, 1)
            if np.any(index[upper] != index.T[upper]) or np.any(fixed[upper] != fixed.T[upper]):
                raise ConfigError(f"{name}: symmetric block has inconsistent upper triangle")
        return cls(fixed, index, symmetric)

    @property
    def shape(self):
        return self.fixed.shape

    @property
    def free_indices(self):
        return set(int(i) for i in self._idx)

    def fill(self, thetas):
        """Substitute a batch of parameter vectors; returns shape ``(m, r, c)``."""
        m = thetas.shape[0]
        out = np.broadcast_to(self.fixed, (m,) + self.shape).copy()
        if self._pos.size:
            out.reshape(m, -1)[:, self._pos] = thetas[:, self._idx]
        return out

    def to_entries(self):
        rows = []
        for i in range(self.shape[0]):
            row = []
            for j in range(self.shape[1]):
                k = int(self.index[i, j])
                row.append(f"t{k}" if k >= 0 else float(self.fixed[i, j]))
            rows.append(row)
        return rows


def _parse_bounds(raw, q):
    if raw is None:
        raise ConfigError("bounds are required")
    if len(raw) != q:
        raise ConfigError(f"expected {q} bound entries, got {len(raw)}")
    out = []
    for k, union in enumerate(raw):
        if not union:
            raise ConfigError(f"bounds[{k}] is empty")
        intervals = []
        for iv in union:
            if len(iv) != 2:
                raise ConfigError(f"bounds[{k}]: intervals are [lo, hi] pairs")
            lo = -np.inf if iv[0] is None else float(iv[0])
            hi = np.inf if iv[1] is None else float(iv[1])
            if not lo < hi:
                raise ConfigError(f"bounds[{k}]: empty interval {iv}")
            intervals.append((lo, hi))
        intervals.sort()
        for (a, b), (c, d) in zip(intervals, intervals[1:]):
            if c < b:
                raise ConfigError(f"bounds[{k}]: overlapping intervals")
        out.append(tuple(intervals))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A candidate SEM model.

    Parameters
    ----------
    dims : Dimensions
    lambda1, lambda2, b, gamma : EntryBlock
        Loading matrices and structural coefficients.
    sigma_xixi, sigma_deltadelta, sigma_epseps, sigma_zetazeta : EntryBlock
        Symmetric volatility blocks of the latent processes.
    bounds : tuple of tuple of (lo, hi)
        Admissible open intervals for each parameter; several disjoint
        intervals form a union such as ``(-100, 0) U (0, 100)``.
    name : str
        Label used in reports.
    """

    dims: Dimensions
    lambda1: EntryBlock
    lambda2: EntryBlock
    b: EntryBlock
    gamma: EntryBlock
    sigma_xixi: EntryBlock
    sigma_deltadelta: EntryBlock
    sigma_epseps: EntryBlock
    sigma_zetazeta: EntryBlock
    bounds: tuple
    name: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.dims
        shapes = {
            "lambda1": (d.p1, d.k1),
            "lambda2": (d.p2, d.k2),
            "b": (d.k2, d.k2),
            "gamma": (d.k2, d.k1),
            "sigma_xixi": (d.k1, d.k1),
            "sigma_deltadelta": (d.p1, d.p1),
            "sigma_epseps": (d.p2, d.p2),
            "sigma_zetazeta": (d.k2, d.k2),
        }
        used = set()
        for name in BLOCK_NAMES:
            blk = getattr(self, name)
            if blk.shape != shapes[name]:
                raise ConfigError(f"{name} has shape {blk.shape}, expected {shapes[name]}")
            used |= blk.free_indices
        if any(i >= d.q for i in used):
            raise ConfigError(f"free index out of range for q={d.q}")
        if used != set(range(d.q)):
            missing = sorted(set(range(d.q)) - used)
            raise ConfigError(f"parameters {missing} do not appear in any matrix")
        if np.any(np.diag(self.b.index) >= 0) or np.any(np.diag(self.b.fixed) != 0):
            raise ConfigError("diagonal of b must be fixed at 0")
        if len(self.bounds) != d.q:
            raise ConfigError("one bound entry per parameter is required")
        for name in SYMMETRIC_BLOCKS:
            blk = getattr(self, name)
            for k in np.diag(blk.index):
                if k >= 0 and self.bounds[k][0][0] <= 0:
                    raise ConfigError(
                        f"{name}: diagonal parameter t{k} needs a strictly positive lower bound"
                    )

    @property
    def q(self):
        return self.dims.q

    @property
    def p(self):
        return self.dims.p

    # -- serialisation -------------------------------------------------
    @classmethod
    def from_dict(cls, doc, name=None):
        try:
            raw_dims = doc["dims"]
            p1, p2 = int(raw_dims["p1"]), int(raw_dims["p2"])
            k1, k2 = int(raw_dims.get("k1", 0)), int(raw_dims.get("k2", 0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"dims: {exc}") from None
        shapes = {
            "lambda1": (p1, k1),
            "lambda2": (p2, k2),
            "b": (k2, k2),
            "gamma": (k2, k1),
            "sigma_xixi": (k1, k1),
            "sigma_deltadelta": (p1, p1),
            "sigma_epseps": (p2, p2),
            "sigma_zetazeta": (k2, k2),
        }
        blocks = {}
        for blk in BLOCK_NAMES:
            entries = doc.get(blk)
            r, c = shapes[blk]
            if entries is None and r * c and blk not in ("b", "gamma"):
                raise ConfigError(f"missing matrix {blk!r}")
            blocks[blk] = EntryBlock.from_entries(
                entries, shapes[blk], symmetric=blk in SYMMETRIC_BLOCKS, name=blk
            )
        free = set()
        for blk in blocks.values():
            free |= blk.free_indices
        q = int(raw_dims.get("q", max(free) + 1 if free else 0))
        dims = Dimensions(p1, p2, k1, k2, q)
        bounds = _parse_bounds(doc.get("bounds", [] if q == 0 else None), q)
        extras = {k: v for k, v in doc.items() if k not in BLOCK_NAMES + ("dims", "bounds")}
        return cls(dims=dims, bounds=bounds, name=name or doc.get("name", ""), extras=extras, **blocks)

    def to_dict(self):
        d = self.dims
        doc = {"dims": {"p1": d.p1, "p2": d.p2, "k1": d.k1, "k2": d.k2, "q": d.q}}
        for blk in BLOCK_NAMES:
            doc[blk] = getattr(self, blk).to_entries()
        doc["bounds"] = [
            [[None if np.isinf(lo) else lo, None if np.isinf(hi) else hi] for lo, hi in union]
            for union in self.bounds
        ]
        if self.name:
            doc["name"] = self.name
        doc.update(self.extras)
        return doc

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc, name=doc.get("name", path.stem))

    # -- parameter-space helpers ----------------------------------------
    def in_bounds(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.q,):
            return False
        return all(
            any(lo < t < hi for lo, hi in union) for t, union in zip(theta, self.bounds)
        )

    def is_admissible(self, theta):
        """Bounds hold, ``I - B`` is invertible and ``Sigma(theta)`` is positive definite."""
        if not self.in_bounds(theta):
            return False
        try:
            assemble_sigma(self, theta)
        except (SingularPsi, NotPositiveDefinite):
            return False
        return True

    @property
    def truth(self):
        """Parameter vector stored with the document under ``"truth"``, if any."""
        t = self.extras.get("truth")
        return None if t is None else np.asarray(t, dtype=float)


def bundled_path(name):
    """Path of a bundled JSON document (``model1``, ``true_model`` ...)."""
    fname = name if name.endswith(".json") else f"{name}.json"
    ref = resources.files("jumpsem") / "data" / fname
    if not ref.is_file():
        raise ConfigError(f"no bundled document named {name!r}")
    return Path(str(ref))


def load_model(name_or_path):
    """Load a :class:`ModelSpec` from a file path or a bundled name."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return ModelSpec.load(p)
    return ModelSpec.load(bundled_path(str(name_or_path)))


@dataclass(frozen=True)
class StructuralMatrices:
    lambda1: np.ndarray
    lambda2: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    sigma_xixi: np.ndarray
    sigma_deltadelta: np.ndarray
    sigma_epseps: np.ndarray
    sigma_zetazeta: np.ndarray
    psi: np.ndarray
    psi_inv: np.ndarray


def _as_batch(spec, thetas):
    thetas = np.asarray(thetas, dtype=float)
    single = thetas.ndim == 1
    thetas = np.atleast_2d(thetas)
    if thetas.shape[1] != spec.q:
        raise DimensionMismatch(f"theta has length {thetas.shape[1]}, model has q={spec.q}")
    return thetas, single


def _psi_inverse(b):
    k2 = b.shape[-1]
    eye = np.eye(k2)
    psi = eye - b
    if k2 == 0 or not np.any(b):
        return psi, np.broadcast_to(eye, psi.shape).copy()
    cond = np.linalg.cond(psi)
    if np.any(~np.isfinite(cond)) or np.any(cond > _PSI_COND_LIMIT):
        raise SingularPsi("I - B is singular at this parameter value")
    return psi, np.linalg.inv(psi)


def materialize(spec, theta):
    """Substitute ``theta`` into every structural matrix.

    Returns
    -------
    StructuralMatrices
        The eight matrices plus ``psi = I - B`` and its inverse.
    """
    thetas, _ = _as_batch(spec, theta)
    if thetas.shape[0] != 1:
        raise DimensionMismatch("materialize takes a single parameter vector")
    mats = {name: getattr(spec, name).fill(thetas)[0] for name in BLOCK_NAMES}
    psi, psi_inv = _psi_inverse(mats["b"][None])
    return StructuralMatrices(psi=psi[0], psi_inv=psi_inv[0], **mats)


def covariance_from_blocks(l1, l2, phi, gamma, psi_inv, theta_delta, theta_eps, psi_zeta):
    """Block formula for the observable covariance; all arguments may carry a batch axis."""
    tr = lambda a: np.swapaxes(a, -1, -2)  # noqa: E731
    a = l1 @ phi
    s11 = a @ tr(l1) + theta_delta
    c = l2 @ psi_inv
    s12 = a @ tr(gamma) @ tr(c)
    s22 = c @ (gamma @ phi @ tr(gamma) + psi_zeta) @ tr(c) + theta_eps
    top = np.concatenate([s11, s12], axis=-1)
    bottom = np.concatenate([tr(s12), s22], axis=-1)
    sigma = np.concatenate([top, bottom], axis=-2)
    return 0.5 * (sigma + tr(sigma))


def sigma_batch(spec, thetas):
    """``Sigma(theta)`` for a batch of parameters without a definiteness check."""
    thetas, single = _as_batch(spec, thetas)
    fill = {name: getattr(spec, name).fill(thetas) for name in BLOCK_NAMES}
    _, psi_inv = _psi_inverse(fill["b"])
    sigma = covariance_from_blocks(
        fill["lambda1"],
        fill["lambda2"],
        fill["sigma_xixi"],
        fill["gamma"],
        psi_inv,
        fill["sigma_deltadelta"],
        fill["sigma_epseps"],
        fill["sigma_zetazeta"],
    )
    return sigma[0] if single else sigma


def check_pd(sigma):
    """Cholesky factor of ``sigma``; raises :class:`NotPositiveDefinite` on failure."""
    if not np.all(np.isfinite(sigma)):
        raise NotPositiveDefinite("covariance contains non-finite entries")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("covariance matrix is not positive definite") from None


def assemble_sigma(spec, theta):
    """Model-implied covariance ``Sigma(theta)``, exactly symmetric and positive definite."""
    sigma = sigma_batch(spec, np.asarray(theta, dtype=float))
    check_pd(sigma)
    return sigma
