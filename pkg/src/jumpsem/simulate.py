"""Euler-Maruyama simulation of the latent jump-diffusion factor system.

Each latent block (``xi``, ``delta``, ``eps``, ``zeta``) solves

    dY_t = a(Y_{t-}) dt + S dW_t + dJ_t

on a fine grid of step ``h / s``, where ``J`` is compound Poisson.  The
observable ``X = (L1 xi + delta, L2 eta + eps)`` with
``eta = (I - B)^{-1} (G xi + zeta)`` is recorded every ``s`` fine steps.

Random numbers come from named substreams: process ``i`` and kind ``j``
(gaussian, poisson, jumpsize) use ``SeedSequence(seed, spawn_key=(i, j))``,
so the four processes never share draws.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, SingularPsi
from .model import bundled_path, covariance_from_blocks

PROCESSES = ("xi", "delta", "eps", "zeta")
STREAM_KINDS = ("gaussian", "poisson", "jumpsize")


def substreams(seed, process):
    """Independent generators for one latent process."""
    i = PROCESSES.index(process)
    return {
        kind: np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i, j))))
        for j, kind in enumerate(STREAM_KINDS)
    }


@dataclass(frozen=True)
class JumpSpec:
    """Compound-Poisson jumps of one coordinate.

    ``sampler(rng, k)`` overrides the Gaussian size law when given.
    """

    intensity: float
    mean: float = 0.0
    var: float = 1.0
    sampler: Optional[Callable] = None

    def __post_init__(self):
        if self.intensity < 0:
            raise ConfigError("jump intensity must be non-negative")
        if self.sampler is None and not self.var > 0:
            raise ConfigError("Gaussian jump variance must be positive")

    def draw(self, rng, k):
        if self.sampler is not None:
            return np.asarray(self.sampler(rng, k), dtype=float)
        return rng.normal(self.mean, np.sqrt(self.var), size=k)


@dataclass(frozen=True, eq=False)
class SdeSpec:
    """One latent jump-diffusion block.

    Parameters
    ----------
    diffusion : ndarray, shape (d, r)
        Constant diffusion matrix ``S``.
    x0 : ndarray, shape (d,)
    rate, mean : ndarray, shape (d,), optional
        Affine drift ``a(x) = -rate * (x - mean)``.
    drift : callable, optional
        General drift ``a(x)``; replaces ``rate``/``mean``.
    jumps : tuple of JumpSpec or callable
        Per-coordinate jump laws, or ``jumps(rng, n_steps, dt, d)`` returning
        an ``(n_steps, d)`` array of jump increments for a joint measure.
    jump_coefficient : callable, optional
        ``c(x, z)`` applied to the aggregated jump sizes of a step.
    """

    diffusion: np.ndarray
    x0: np.ndarray
    rate: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    drift: Optional[Callable] = None
    jumps: object = ()
    jump_coefficient: Optional[Callable] = None

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        d = x0.shape[0]
        s = np.asarray(self.diffusion, dtype=float)
        if d == 0:
            s = np.zeros((0, 1))
        s = s.reshape(d, -1) if d else s
        if s.shape[1] < 1:
            raise ConfigError("diffusion matrix needs at least one column")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "diffusion", s)
        if self.drift is None:
            rate = np.zeros(d) if self.rate is None else np.asarray(self.rate, dtype=float)
            mean = np.zeros(d) if self.mean is None else np.asarray(self.mean, dtype=float)
            if rate.shape != (d,) or mean.shape != (d,):
                raise ConfigError("drift rate/mean must have one entry per coordinate")
            object.__setattr__(self, "rate", rate)
            object.__setattr__(self, "mean", mean)
        jumps = self.jumps
        if not callable(jumps):
            jumps = tuple(jumps) if jumps else tuple(JumpSpec(0.0) for _ in range(d))
            if len(jumps) != d:
                raise ConfigError(f"expected {d} jump specs, got {len(jumps)}")
            object.__setattr__(self, "jumps", jumps)

    @property
    def dim(self):
        return self.x0.shape[0]

    @property
    def volatility(self):
        return self.diffusion @ self.diffusion.T

    @property
    def is_affine(self):
        return self.drift is None and self.jump_coefficient is None

    @classmethod
    def from_dict(cls, doc):
        try:
            x0 = np.asarray(doc["x0"], dtype=float)
            drift = doc.get("drift", {"kind": "affine"})
            if drift.get("kind", "affine") != "affine":
                raise ConfigError("only affine drifts can be read from JSON")
            d = x0.shape[0]
            rate = drift.get("rate", [0.0] * d)
            mean = drift.get("mean", [0.0] * d)
            jumps = []
            for j in doc.get("jumps", []):
                dist = j.get("dist", {"kind": "normal"})
                if dist.get("kind", "normal") != "normal":
                    raise ConfigError(f"unsupported jump distribution {dist.get('kind')!r}")
                jumps.append(JumpSpec(float(j["lambda"]), float(dist.get("mean", 0.0)), float(dist.get("var", 1.0))))
            return cls(
                diffusion=np.asarray(doc.get("diffusion", np.zeros((d, 1))), dtype=float),
                x0=x0,
                rate=rate,
                mean=mean,
                jumps=tuple(jumps),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"process: {exc!r}") from None

    def to_dict(self):
        if not self.is_affine or callable(self.jumps):
            raise ConfigError("callback-based processes cannot be serialised")
        return {
            "drift": {"kind": "affine", "rate": self.rate.tolist(), "mean": self.mean.tolist()},
            "diffusion": self.diffusion.tolist(),
            "jumps": [
                {"lambda": j.intensity, "dist": {"kind": "normal", "mean": j.mean, "var": j.var}}
                for j in self.jumps
            ],
            "x0": self.x0.tolist(),
        }


def _empty_sde():
    return SdeSpec(diffusion=np.zeros((0, 1)), x0=np.zeros(0))


@dataclass(frozen=True)
class SamplingDesign:
    n: int
    T: float = 1.0
    euler_substeps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or not self.T > 0 or self.euler_substeps < 1:
            raise ConfigError("design needs n >= 1, T > 0 and euler_substeps >= 1")

    @property
    def h(self):
        return self.T / self.n

    @property
    def dt(self):
        return self.h / self.euler_substeps

    @property
    def n_fine(self):
        return self.n * self.euler_substeps


@dataclass(frozen=True, eq=False)
class ObservationPath:
    times: np.ndarray
    x: np.ndarray
    h: float

    @property
    def n(self):
        return self.x.shape[0] - 1

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def T(self):
        return float(self.times[-1])

    def to_csv(self, path):
        p = self.p
        header = ",".join(["t"] + [f"x{j + 1}" for j in range(p)])
        data = np.column_stack([self.times, self.x])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if data.shape[0] < 2 or data.shape[1] < 2:
            raise ConfigError(f"{path}: need at least two rows and one observable column")
        times = data[:, 0]
        steps = np.diff(times)
        h = float(steps.mean())
        if not np.allclose(steps, h, rtol=1e-9, atol=0):
            raise ConfigError(f"{path}: sampling times are not equally spaced")
        return cls(times=times, x=data[:, 1:], h=h)


def _jump_increments(sde, n_steps, dt, streams, counts_out=None):
    d = sde.dim
    if callable(sde.jumps):
        return np.asarray(sde.jumps(streams["jumpsize"], n_steps, dt, d), dtype=float).reshape(n_steps, d)
    lam = np.array([j.intensity for j in sde.jumps])
    counts = streams["poisson"].poisson(lam * dt, size=(n_steps, d))
    jumps = np.zeros((n_steps, d))
    for c, spec in enumerate(sde.jumps):
        k = counts[:, c]
        total = int(k.sum())
        if counts_out is not None:
            counts_out[c] = total
        if total == 0:
            continue
        sizes = spec.draw(streams["jumpsize"], total)
        steps = np.repeat(np.arange(n_steps), k)
        jumps[:, c] = np.bincount(steps, weights=sizes, minlength=n_steps)
    return jumps


def simulate_latent(sde, design, streams=None, return_counts=False):
    """Euler-Maruyama path of one latent block on the fine grid.

    Parameters
    ----------
    sde : SdeSpec
    design : SamplingDesign
    streams : dict of Generator, optional
        Output of :func:`substreams`; defaults to the ``xi`` streams of
        ``design.seed``.
    return_counts : bool
        Also return the number of jump events per coordinate.

    Returns
    -------
    path : ndarray, shape (n * s + 1, d)
    counts : ndarray, shape (d,), only if ``return_counts``
    """
    if streams is None:
        streams = substreams(design.seed, "xi")
    d = sde.dim
    n_steps = design.n_fine
    dt = design.dt
    counts = np.zeros(d, dtype=np.int64)
    if d == 0:
        path = np.zeros((n_steps + 1, 0))
        return (path, counts) if return_counts else path

    r = sde.diffusion.shape[1]
    z = streams["gaussian"].standard_normal((n_steps, r))
    noise = np.sqrt(dt) * (z @ sde.diffusion.T)
    jumps = _jump_increments(sde, n_steps, dt, streams, counts)

    path = np.empty((n_steps + 1, d))
    path[0] = sde.x0
    if sde.is_affine:
        # x_{k+1} = (1 - rate dt) x_k + rate mean dt + noise_k + jump_k
        shock = noise + jumps + sde.rate * sde.mean * dt
        coef = 1.0 - sde.rate * dt
        for j in range(d):
            path[1:, j], _ = lfilter([1.0], [1.0, -coef[j]], shock[:, j], zi=[coef[j] * sde.x0[j]])
    else:
        drift = sde.drift if sde.drift is not None else (lambda x: -sde.rate * (x - sde.mean))
        coeff = sde.jump_coefficient
        x = sde.x0.copy()
        for k in range(n_steps):
            jk = jumps[k]
            if coeff is not None:
                jk = np.asarray(coeff(x, jk), dtype=float) if np.any(jk) else 0.0
            x = x + np.asarray(drift(x), dtype=float) * dt + noise[k] + jk
            path[k + 1] = x
    return (path, counts) if return_counts else path


@dataclass(frozen=True, eq=False)
class TrueModelSpec:
    """Data-generating factor system."""

    xi: SdeSpec
    delta: SdeSpec
    eps: SdeSpec
    zeta: SdeSpec
    lambda1: np.ndarray
    lambda2: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    name: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        k1, p1, p2, k2 = self.xi.dim, self.delta.dim, self.eps.dim, self.zeta.dim
        shapes = {
            "lambda1": (p1, k1),
            "lambda2": (p2, k2),
            "b": (k2, k2),
            "gamma": (k2, k1),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.size == 0:
                arr = np.zeros(shape)
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        if p1 + p2 < 1:
            raise ConfigError("true model has no observables")
        for name, k in (("lambda1", k1), ("lambda2", k2)):
            mat = getattr(self, name)
            if k and np.linalg.matrix_rank(mat) < k:
                raise ConfigError(f"{name} must have full column rank")
        if np.any(np.diag(self.b) != 0):
            raise ConfigError("diagonal of b must be zero")

    @property
    def p1(self):
        return self.delta.dim

    @property
    def p2(self):
        return self.eps.dim

    @property
    def p(self):
        return self.p1 + self.p2

    def psi_inv(self):
        k2 = self.zeta.dim
        psi = np.eye(k2) - self.b
        if k2 and np.linalg.cond(psi) > 1e12:
            raise SingularPsi("I - B of the true model is singular")
        return np.linalg.inv(psi) if k2 else psi

    @classmethod
    def from_dict(cls, doc, name=None):
        procs = doc.get("processes")
        if not isinstance(procs, dict):
            raise ConfigError("true model needs a 'processes' object")
        unknown = set(procs) - set(PROCESSES)
        if unknown:
            raise ConfigError(f"unknown processes {sorted(unknown)}")
        sdes = {k: SdeSpec.from_dict(procs[k]) if k in procs else _empty_sde() for k in PROCESSES}
        mats = {k: np.asarray(doc.get(k, []), dtype=float) for k in ("lambda1", "lambda2", "b", "gamma")}
        extras = {k: v for k, v in doc.items() if k not in ("processes", "lambda1", "lambda2", "b", "gamma", "name")}
        return cls(name=name or doc.get("name", ""), extras=extras, **sdes, **mats)

    def to_dict(self):
        return {
            "name": self.name,
            "processes": {k: getattr(self, k).to_dict() for k in PROCESSES if getattr(self, k).dim},
            "lambda1": self.lambda1.tolist(),
            "lambda2": self.lambda2.tolist(),
            "b": self.b.tolist(),
            "gamma": self.gamma.tolist(),
        }

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc, name=doc.get("name", path.stem))


def load_true_model(name_or_path):
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return TrueModelSpec.load(p)
    return TrueModelSpec.load(bundled_path(str(name_or_path)))


def true_sigma(tm):
    """Covariance ``Sigma_0`` of the observable diffusion part."""
    return covariance_from_blocks(
        tm.lambda1,
        tm.lambda2,
        tm.xi.volatility,
        tm.gamma,
        tm.psi_inv(),
        tm.delta.volatility,
        tm.eps.volatility,
        tm.zeta.volatility,
    )


def simulate_observations(tm, design, return_latent=False):
    """Simulate ``X`` at ``t_i = i h`` for ``i = 0..n``.

    The four latent blocks are simulated independently from their own
    substreams, combined through the loading matrices, and subsampled.
    """
    psi_inv = tm.psi_inv()
    s = design.euler_substeps
    latent = {}
    for name in PROCESSES:
        fine = simulate_latent(getattr(tm, name), design, substreams(design.seed, name))
        latent[name] = fine[::s]
    eta = (latent["xi"] @ tm.gamma.T + latent["zeta"]) @ psi_inv.T
    x1 = latent["xi"] @ tm.lambda1.T + latent["delta"]
    x2 = eta @ tm.lambda2.T + latent["eps"]
    times = np.arange(design.n + 1) * design.h
    times[-1] = design.T
    path = ObservationPath(times=times, x=np.hstack([x1, x2]), h=design.h)
    if return_latent:
        latent["eta"] = eta
        return path, latent
    return path
