"""Thresholded quasi-likelihood, its maximisation, QAIC and model selection.

Increments ``dX_i = X_{t_i} - X_{t_{i-1}}`` with ``|dX_i| > D h^rho`` are
treated as jumps and dropped.  For the kept increments

    H(theta) = -1/(2h) sum dX' Sigma(theta)^{-1} dX - (n_kept/2) log det Sigma(theta)

which depends on the data only through ``Q = sum dX dX'`` and ``n_kept``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize
from scipy.special import expit, logit

from .asymptotics import asymptotic_info, sigma_jacobian
from .errors import (
    AllStartsFailed,
    ConfigError,
    NoConvergedFits,
    NoKeptIncrements,
    NumericalError,
)
from .matrix import vech_indices, vech_weights
from .model import check_pd, sigma_batch

_GAIN_TOL = 1e-12
_START_BOX = 2.0
_SPLIT_TOL = 1e-3
_MAX_HOPS = 8


@dataclass(frozen=True)
class JumpFilterConfig:
    """Jump threshold ``D h^rho``.

    ``rho`` must lie in ``[3/8, 1/2)`` unless ``allow_low_rho`` is set, in
    which case ``[0, 1/2)`` is accepted.
    """

    d: float = 10.0
    rho: float = 0.4
    allow_low_rho: bool = False

    def __post_init__(self):
        if not self.d > 0:
            raise ConfigError("threshold scale D must be positive")
        lo = 0.0 if self.allow_low_rho else 3 / 8
        if not lo <= self.rho < 0.5:
            hint = "" if self.allow_low_rho else " (set allow_low_rho for [0, 3/8))"
            raise ConfigError(f"rho={self.rho} outside [{lo:g}, 1/2){hint}")

    def threshold(self, h):
        return self.d * h**self.rho


def _pairwise_gram(x):
    """``x' x`` with every entry summed by numpy's pairwise reduction."""
    xt = np.ascontiguousarray(x.T)
    p = xt.shape[0]
    q = np.empty((p, p))
    for i in range(p):
        q[i, i:] = np.sum(xt[i] * xt[i:], axis=1)
        q[i:, i] = q[i, i:]
    return q


@dataclass(frozen=True, eq=False)
class IncrementSet:
    increments: np.ndarray
    kept: np.ndarray
    h: float
    threshold: float
    gram: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.increments.shape[0]

    @property
    def n_kept(self):
        return int(self.kept.sum())

    @property
    def p(self):
        return self.increments.shape[1]


def make_increments(path, filt):
    """Differences of ``path`` and the mask of increments below the jump threshold.

    Parameters
    ----------
    path : ObservationPath
    filt : JumpFilterConfig
    """
    x = np.asarray(path.x, dtype=float)
    if x.shape[0] < 2:
        raise ConfigError("need at least one increment")
    inc = np.diff(x, axis=0)
    thr = filt.threshold(path.h)
    kept = np.sqrt(np.sum(inc * inc, axis=1)) <= thr
    inc.setflags(write=False)
    kept.setflags(write=False)
    gram = _pairwise_gram(inc[kept])
    gram.setflags(write=False)
    return IncrementSet(increments=inc, kept=kept, h=path.h, threshold=thr, gram=gram)


class _Contrast:
    """``-1/(2h) tr(Sigma^{-1} Q) - (m/2) log det Sigma`` and its gradient."""

    def __init__(self, spec, gram, count, h):
        self.spec = spec
        self.gram = np.asarray(gram, dtype=float)
        self.count = count
        self.h = h
        self._vech = vech_indices(spec.p)
        self._w = vech_weights(spec.p)

    def _factor(self, theta):
        sigma = sigma_batch(self.spec, theta)
        return check_pd(sigma)

    def value(self, theta):
        l = self._factor(theta)
        logdet = 2.0 * np.sum(np.log(np.diag(l)))
        tr = np.trace(cho_solve((l, True), self.gram))
        return -0.5 * tr / self.h - 0.5 * self.count * logdet

    def value_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        l = self._factor(theta)
        logdet = 2.0 * np.sum(np.log(np.diag(l)))
        p = l.shape[0]
        sinv = cho_solve((l, True), np.eye(p))
        sq = sinv @ self.gram
        val = -0.5 * np.trace(sq) / self.h - 0.5 * self.count * logdet
        g = 0.5 * (sq @ sinv / self.h - self.count * sinv)
        g = 0.5 * (g + g.T)
        jac = sigma_jacobian(self.spec, theta)
        rows, cols = self._vech
        grad = jac.T @ (self._w * g[rows, cols])
        return val, grad


def quasi_loglik(inc, spec, theta):
    """Quasi-log-likelihood ``H_n(theta)`` of the kept increments."""
    return _Contrast(spec, inc.gram, inc.n_kept, inc.h).value(theta)


def quasi_loglik_grad(inc, spec, theta):
    return _Contrast(spec, inc.gram, inc.n_kept, inc.h).value_and_grad(theta)[1]


# -- constrained optimisation ------------------------------------------------


class _IntervalMap:
    """Smooth bijection from R^q onto a product of open intervals."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        lf, hf = np.isfinite(self.lo), np.isfinite(self.hi)
        self.both = lf & hf
        self.lower = lf & ~hf
        self.upper = ~lf & hf
        self.width = np.where(self.both, self.hi - self.lo, 1.0)

    def to_theta(self, u):
        t = u.copy()
        b = self.both
        t[b] = self.lo[b] + self.width[b] * expit(u[b])
        t[self.lower] = self.lo[self.lower] + np.exp(u[self.lower])
        t[self.upper] = self.hi[self.upper] - np.exp(-u[self.upper])
        return t

    def derivative(self, u):
        d = np.ones_like(u)
        b = self.both
        s = expit(u[b])
        d[b] = self.width[b] * s * (1.0 - s)
        d[self.lower] = np.exp(u[self.lower])
        d[self.upper] = np.exp(-u[self.upper])
        return d

    def to_u(self, theta):
        u = np.asarray(theta, dtype=float).copy()
        b = self.both
        u[b] = logit((theta[b] - self.lo[b]) / self.width[b])
        u[self.lower] = np.log(theta[self.lower] - self.lo[self.lower])
        u[self.upper] = -np.log(self.hi[self.upper] - theta[self.upper])
        return u


def _branch(spec, theta):
    """Interval of each bound union containing ``theta``; ``None`` if outside."""
    lo, hi = [], []
    for t, union in zip(theta, spec.bounds):
        for a, b in union:
            if a < t < b:
                lo.append(a)
                hi.append(b)
                break
        else:
            return None
    return _IntervalMap(lo, hi)


def random_starts(spec, count, rng):
    """Starts drawn per branch, uniformly over the central half of each interval.

    Intervals are first intersected with ``[-_START_BOX, _START_BOX]`` so that
    wide bounds do not produce starts far from the unit scale of the data.
    """
    out = np.empty((count, spec.q))
    for k, union in enumerate(spec.bounds):
        for s in range(count):
            a, b = union[int(rng.integers(len(union)))]
            a_, b_ = max(a, -_START_BOX), min(b, _START_BOX)
            if a_ >= b_:
                a_, b_ = max(a, -1e3), min(b, 1e3)
            mid, half = 0.5 * (a_ + b_), 0.25 * (b_ - a_)
            out[s, k] = rng.uniform(mid - half, mid + half)
    return out


def _stuck_on_split(spec, theta, start):
    """Start on the far side of every split point that the estimate has collapsed onto.

    Returns ``None`` when no coordinate sits on a point shared by two intervals
    of its bound union.
    """
    new = np.array(theta, dtype=float)
    moved = False
    for k, union in enumerate(spec.bounds):
        if len(union) < 2:
            continue
        for (a, b), (c, d) in zip(union[:-1], union[1:]):
            if b != c or abs(theta[k] - b) > _SPLIT_TOL * max(1.0, abs(b)):
                continue
            mag = max(abs(start[k] - b), 0.1)
            new[k] = b - mag if start[k] > b else b + mag
            lo, hi = (a, b) if new[k] < b else (c, d)
            new[k] = min(max(new[k], lo + 1e-3 * (hi - lo)), hi - 1e-3 * (hi - lo))
            moved = True
    if not moved:
        return None
    return _interior(spec, new)


def _interior(spec, theta):
    """Nudge coordinates sitting on an interval end point strictly inside it."""
    out = np.array(theta, dtype=float)
    for k, union in enumerate(spec.bounds):
        best = None
        for a, b in union:
            if a <= out[k] <= b:
                best = (a, b)
                break
        if best is None:
            continue
        a, b = best
        w = (b - a) if np.isfinite(b - a) else max(1.0, abs(out[k]))
        eps = 1e-6 * w
        if np.isfinite(a):
            out[k] = max(out[k], a + eps)
        if np.isfinite(b):
            out[k] = min(out[k], b - eps)
    return out


@dataclass
class FitResult:
    theta_hat: np.ndarray
    h_value: float
    q: int
    converged: bool
    iterations: int
    grad_norm: float
    n_kept: Optional[int]
    starts: int
    model_id: str = ""
    message: str = ""

    @property
    def qaic(self):
        return -2.0 * self.h_value + 2.0 * self.q

    def to_dict(self):
        return {
            "model_id": self.model_id,
            "theta_hat": [float(t) for t in self.theta_hat],
            "h": float(self.h_value),
            "qaic": float(self.qaic),
            "q": self.q,
            "converged": bool(self.converged),
            "n_kept": self.n_kept,
        }


def qaic(fit):
    """``-2 H(theta_hat) + 2 q``."""
    return fit.qaic


def _inverse_curvature(info, jd, scale):
    """Inverse of the Fisher curvature in the unconstrained coordinates, eigenvalues floored."""
    hess = info * np.outer(jd, jd) / scale
    hess = 0.5 * (hess + hess.T)
    if not np.all(np.isfinite(hess)):
        return None
    vals, vecs = np.linalg.eigh(hess)
    top = vals[-1]
    if not top > 0:
        return None
    vals = np.maximum(vals, 1e-8 * top)
    inv = (vecs / vals) @ vecs.T
    return 0.5 * (inv + inv.T)


def _predicted_gain(contrast, spec, theta, grad):
    """Newton-step improvement ``g' (m I)^{-1} g / 2`` under the Fisher curvature."""
    try:
        info = contrast.count * asymptotic_info(spec, theta).info
        step = np.linalg.lstsq(info, grad, rcond=None)[0]
    except (NumericalError, np.linalg.LinAlgError):
        return np.inf
    return 0.5 * float(grad @ step)


def _run_start(contrast, spec, start, max_iter, grad_tol_rel, initial_curvature):
    tr = _branch(spec, start)
    if tr is None:
        raise ConfigError("start lies outside the parameter bounds (or on a branch boundary)")
    u0 = tr.to_u(start)
    h0 = contrast.value(start)
    scale = max(1.0, abs(h0))

    def objective(u):
        theta = tr.to_theta(u)
        try:
            val, grad = contrast.value_and_grad(theta)
        except NumericalError:
            return np.inf, np.zeros_like(u)
        return -val / scale, -(grad * tr.derivative(u)) / scale

    options = {"maxiter": max_iter, "gtol": grad_tol_rel}
    if initial_curvature is not None:
        inv0 = _inverse_curvature(initial_curvature, tr.derivative(u0), scale)
        if inv0 is not None:
            options["hess_inv0"] = inv0

    iterations = 0
    u = u0
    for attempt in range(4):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(objective, u, jac=True, method="BFGS", options=options)
        iterations += int(res.nit)
        u = res.x
        theta = tr.to_theta(u)
        val, grad = contrast.value_and_grad(theta)
        grad_u = grad * tr.derivative(u)
        grad_norm = float(np.max(np.abs(grad_u))) if grad_u.size else 0.0
        converged = grad_norm <= grad_tol_rel * max(1.0, abs(val))
        if not converged and initial_curvature is not None:
            # wide intervals magnify dH/du beyond what float precision of H resolves;
            # accept when the predicted remaining gain is below that floor
            converged = _predicted_gain(contrast, spec, theta, grad) <= _GAIN_TOL * max(1.0, abs(val))
        if converged or iterations >= max_iter:
            break
        # restart with a fresh curvature model from the current iterate
        options["maxiter"] = max_iter - iterations
        options.pop("hess_inv0", None)
        if initial_curvature is not None:
            inv0 = _inverse_curvature(initial_curvature, tr.derivative(u), scale)
            if inv0 is not None:
                options["hess_inv0"] = inv0
    return theta, val, converged, iterations, grad_norm, str(res.message)


def _maximize(contrast, spec, starts, max_iter, grad_tol, use_fisher, count, model_id, n_kept):
    if spec.q == 0:
        theta = np.zeros(0)
        val = contrast.value(theta)
        return FitResult(theta, val, 0, True, 0, 0.0, n_kept, 0, model_id, "no free parameters")
    best = None
    failures = []
    for start in starts:
        curvature = None
        if use_fisher:
            try:
                curvature = count * asymptotic_info(spec, start).info
            except (NumericalError, np.linalg.LinAlgError):
                curvature = None
        try:
            theta, val, conv, nit, gnorm, msg = _run_start(contrast, spec, start, max_iter, grad_tol, curvature)
        except NumericalError as exc:
            failures.append(str(exc))
            continue
        # a sign-split parameter started on the wrong side collapses onto the
        # split point; retry from its mirror image while that improves H
        for _ in range(_MAX_HOPS):
            hop = _stuck_on_split(spec, theta, start)
            if hop is None:
                break
            try:
                hop_curv = count * asymptotic_info(spec, hop).info if use_fisher else None
            except (NumericalError, np.linalg.LinAlgError):
                hop_curv = None
            try:
                res = _run_start(contrast, spec, hop, max_iter, grad_tol, hop_curv)
            except NumericalError:
                break
            if not res[1] > val + 1e-10 * max(1.0, abs(val)):
                break
            start = hop
            theta, val, conv, gnorm, msg = res[0], res[1], res[2], res[4], res[5]
            nit += res[3]
        cand = FitResult(theta, val, spec.q, conv, nit, gnorm, n_kept, len(starts), model_id, msg)
        if best is None or (cand.converged, cand.h_value) > (best.converged, best.h_value):
            best = cand
    if best is None:
        raise AllStartsFailed(
            f"every start ({len(starts)}) hit an inadmissible parameter: {failures[:1]}"
        )
    return best


def _start_list(spec, initial, starts, seed):
    if initial is not None:
        init = np.atleast_2d(np.asarray(initial, dtype=float))
        if init.shape[1] != spec.q:
            raise ConfigError(f"initial value has length {init.shape[1]}, model has q={spec.q}")
        return list(init)
    rng = np.random.default_rng(seed)
    return list(random_starts(spec, starts, rng))


def fit(
    inc,
    spec,
    starts=8,
    max_iter=500,
    grad_tol=1e-8,
    initial=None,
    seed=0,
    model_id=None,
    fisher_start=True,
):
    """Quasi-maximum-likelihood estimate for one candidate model.

    Parameters
    ----------
    inc : IncrementSet
    spec : ModelSpec
    starts : int
        Number of random starts when ``initial`` is not given.
    max_iter : int
    grad_tol : float
        Relative tolerance: converged when
        ``max |dH/du| <= grad_tol * max(1, |H|)`` in the unconstrained
        coordinates ``u``.
    initial : array_like, optional
        One start (shape ``(q,)``) or several (shape ``(k, q)``).
    seed : int
        Seed for the random starts.
    fisher_start : bool
        Seed BFGS's inverse-Hessian with ``(n_kept I(theta_start))^{-1}``.
    """
    if inc.n_kept == 0:
        raise NoKeptIncrements(
            f"no increment has norm <= threshold D*h^rho = {inc.threshold:.6g}; increase D"
        )
    contrast = _Contrast(spec, inc.gram, inc.n_kept, inc.h)
    start_list = _start_list(spec, initial, starts, seed)
    return _maximize(
        contrast, spec, start_list, max_iter, grad_tol, fisher_start, inc.n_kept,
        model_id if model_id is not None else spec.name, inc.n_kept,
    )


def population_fit(spec, sigma0, starts=8, max_iter=500, grad_tol=1e-8, initial=None, seed=0):
    """Maximiser of the population contrast ``-1/2 tr(Sigma^{-1} Sigma_0) - 1/2 log det Sigma``.

    Correctly specified models return their true parameter; misspecified
    ones return the pseudo-true value.
    """
    sigma0 = np.asarray(sigma0, dtype=float)
    check_pd(sigma0)
    contrast = _Contrast(spec, sigma0, 1, 1.0)
    start_list = _start_list(spec, initial, starts, seed)
    return _maximize(contrast, spec, start_list, max_iter, grad_tol, True, 1, spec.name, None)


@dataclass
class SelectionReport:
    fits: list
    selected_index: int
    excluded: list
    correctly_specified: Optional[Sequence[str]] = None

    @property
    def selected(self):
        return self.fits[self.selected_index]

    def to_dict(self):
        doc = {
            "models": [f.to_dict() for f in self.fits],
            "selected": self.selected.model_id,
            "excluded": [self.fits[i].model_id for i in self.excluded],
        }
        if self.correctly_specified is not None:
            doc["correctly_specified"] = list(self.correctly_specified)
        return doc


def select(fits, correctly_specified=None):
    """Pick the converged fit with the smallest QAIC; ties go to the earliest model."""
    excluded = [i for i, f in enumerate(fits) if not f.converged]
    if excluded:
        warnings.warn(
            "excluding non-converged fits: " + ", ".join(fits[i].model_id or str(i) for i in excluded),
            stacklevel=2,
        )
    best = None
    for i, f in enumerate(fits):
        if i in excluded:
            continue
        if best is None or f.qaic < fits[best].qaic:
            best = i
    if best is None:
        raise NoConvergedFits("no candidate model converged")
    return SelectionReport(list(fits), best, excluded, correctly_specified)
