"""Monte Carlo campaigns: simulate, fit every candidate, select, aggregate.

Replicate ``r`` of a campaign with master seed ``seed_base`` simulates its
path with seed :func:`derive_seed` ``(seed_base, r)``.  The paired path used
by the QAIC bias experiment comes from ``derive_seed(seed_base, r, 1)``.
Results never depend on the number of worker processes.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .asymptotics import asymptotic_info
from .errors import ConfigError, SemError
from .model import ModelSpec, bundled_path, load_model
from .qmle import JumpFilterConfig, fit, make_increments, population_fit, quasi_loglik, select
from .simulate import SamplingDesign, TrueModelSpec, load_true_model, simulate_observations, true_sigma

log = logging.getLogger(__name__)


def derive_seed(seed_base, rep, stream=0):
    """64-bit seed of replicate ``rep``: first word of ``SeedSequence([seed_base, rep, stream])``."""
    ss = np.random.SeedSequence([int(seed_base), int(rep), int(stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Candidate:
    id: str
    spec: ModelSpec
    truth: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class CampaignConfig:
    true_model: TrueModelSpec
    candidates: tuple
    design: SamplingDesign
    filter: JumpFilterConfig
    reps: int
    seed_base: int = 0
    initial_at_truth: bool = False
    threads: int = 1
    correctly_specified: Optional[tuple] = None
    fit_options: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        ids = [c.id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ConfigError("candidate ids must be unique")
        if not ids:
            raise ConfigError("at least one candidate model is required")

    @property
    def model_ids(self):
        return [c.id for c in self.candidates]

    def candidate(self, model_id):
        for c in self.candidates:
            if c.id == model_id:
                return c
        raise ConfigError(f"no candidate with id {model_id!r}")

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return CampaignConfig(**fields)

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        base = Path(base_dir) if base_dir is not None else None

        def resolve(ref, loader, kind):
            if isinstance(ref, dict):
                return kind.from_dict(ref)
            if not isinstance(ref, str):
                raise ConfigError(f"expected a path, bundled name or object, got {ref!r}")
            p = Path(ref)
            if base is not None and not p.is_absolute() and (base / p).exists():
                return kind.load(base / p)
            return loader(ref)

        try:
            tm = resolve(doc["true_model"], load_true_model, TrueModelSpec)
            cands = []
            for c in doc["candidates"]:
                spec = resolve(c["model"], load_model, ModelSpec)
                truth = c.get("truth")
                truth = np.asarray(truth, dtype=float) if truth is not None else spec.truth
                cands.append(Candidate(str(c.get("id", spec.name)), spec, truth))
            d = doc.get("design", {})
            design = SamplingDesign(
                n=int(d["n"]), T=float(d.get("T", 1.0)), euler_substeps=int(d.get("euler_substeps", 10))
            )
            fl = doc.get("filter", {})
            filt = JumpFilterConfig(
                d=float(fl["D"]), rho=float(fl["rho"]), allow_low_rho=bool(fl.get("allow_low_rho", False))
            )
            cs = doc.get("correctly_specified")
            return cls(
                true_model=tm,
                candidates=tuple(cands),
                design=design,
                filter=filt,
                reps=int(doc["reps"]),
                seed_base=int(doc.get("seed_base", 0)),
                initial_at_truth=bool(doc.get("initial_at_truth", False)),
                threads=int(doc.get("threads", 1)),
                correctly_specified=tuple(cs) if cs is not None else None,
                fit_options=dict(doc.get("fit", {})),
                source=doc,
            )
        except KeyError as exc:
            raise ConfigError(f"campaign: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"campaign: {exc}") from None

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            path = bundled_path(str(path))
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc, base_dir=path.parent)

    def echo(self):
        """Plain-data description of the campaign for reports."""
        return {
            "true_model": self.true_model.name,
            "candidates": [
                {"id": c.id, "q": c.spec.q, "truth": None if c.truth is None else c.truth.tolist()}
                for c in self.candidates
            ],
            "design": {"n": self.design.n, "T": self.design.T, "euler_substeps": self.design.euler_substeps},
            "filter": {"D": self.filter.d, "rho": self.filter.rho},
            "reps": self.reps,
            "seed_base": self.seed_base,
            "initial_at_truth": self.initial_at_truth,
            "correctly_specified": None if self.correctly_specified is None else list(self.correctly_specified),
            "fit": self.fit_options,
        }


def starting_values(cfg):
    """Initial values per candidate when ``initial_at_truth`` is set.

    Candidates without a true parameter (misspecified models) start at their
    pseudo-true value, the maximiser of the population contrast at ``Sigma_0``.
    """
    if not cfg.initial_at_truth:
        return {c.id: None for c in cfg.candidates}
    sigma0 = true_sigma(cfg.true_model)
    out = {}
    for c in cfg.candidates:
        if c.truth is not None:
            out[c.id] = np.asarray(c.truth, dtype=float)
            continue
        hint = c.spec.extras.get("start")
        res = population_fit(c.spec, sigma0, initial=hint, seed=cfg.seed_base)
        out[c.id] = res.theta_hat
    return out


@dataclass
class ReplicateRow:
    rep: int
    seed: int
    fits: dict
    selected: Optional[str]
    errors: dict = field(default_factory=dict)


def _fit_kwargs(cfg, rep):
    opts = dict(cfg.fit_options)
    opts.setdefault("seed", derive_seed(cfg.seed_base, rep, 2))
    return {k: opts[k] for k in ("starts", "max_iter", "grad_tol", "seed") if k in opts}


def _replicate(cfg, starts, rep):
    seed = derive_seed(cfg.seed_base, rep)
    fits, errors = {}, {}
    try:
        path = simulate_observations(cfg.true_model, SamplingDesign(cfg.design.n, cfg.design.T, cfg.design.euler_substeps, seed))
        inc = make_increments(path, cfg.filter)
    except SemError as exc:
        return ReplicateRow(rep, seed, {c.id: None for c in cfg.candidates}, None, {"simulate": str(exc)})
    kwargs = _fit_kwargs(cfg, rep)
    for c in cfg.candidates:
        try:
            fits[c.id] = fit(inc, c.spec, initial=starts[c.id], model_id=c.id, **kwargs)
        except SemError as exc:
            fits[c.id] = None
            errors[c.id] = f"{type(exc).__name__}: {exc}"
    selected = None
    usable = [f for f in fits.values() if f is not None]
    if any(f.converged for f in usable):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            selected = select(usable).selected.model_id
    return ReplicateRow(rep, seed, fits, selected, errors)


_WORKER = {}


def _init_worker(cfg, starts):
    _WORKER["cfg"] = cfg
    _WORKER["starts"] = starts


def _worker_replicate(rep):
    return _replicate(_WORKER["cfg"], _WORKER["starts"], rep)


def _map_replicates(cfg, starts, func_name, reps):
    if cfg.threads <= 1:
        _init_worker(cfg, starts)
        try:
            return [globals()[func_name](r) for r in reps]
        finally:
            _WORKER.clear()
    chunk = max(1, len(reps) // (4 * cfg.threads))
    with ProcessPoolExecutor(cfg.threads, initializer=_init_worker, initargs=(cfg, starts)) as pool:
        return list(pool.map(globals()[func_name], reps, chunksize=chunk))


def summarize(rows, model_ids):
    """Per-model mean and SD (``ddof=1``) of ``theta_hat`` over converged rows, and selection counts."""
    summary = {}
    for mid in model_ids:
        thetas = [r.fits[mid].theta_hat for r in rows if r.fits.get(mid) is not None and r.fits[mid].converged]
        if thetas:
            arr = np.vstack(thetas)
            mean = arr.mean(axis=0)
            sd = arr.std(axis=0, ddof=1) if arr.shape[0] > 1 else np.full(arr.shape[1], np.nan)
        else:
            mean = sd = np.zeros(0)
        summary[mid] = {"mean": mean, "sd": sd, "count": len(thetas)}
    counts = {mid: 0 for mid in model_ids}
    for r in rows:
        if r.selected is not None:
            counts[r.selected] += 1
    return summary, counts


def _f17(x):
    return format(float(x), ".17g")


def _json17(obj, indent=0):
    pad, inner = " " * indent, " " * (indent + 2)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_json17(v, indent + 2)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        vals = [_json17(v, indent + 2) for v in obj]
        return "[" + ", ".join(vals) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _f17(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


def dumps17(obj):
    """JSON text with every float written to 17 significant digits."""
    return _json17(obj) + "\n"


@dataclass
class McReport:
    rows: list
    model_ids: list
    estimator_summary: dict
    selection_counts: dict
    config: dict = field(default_factory=dict)

    @property
    def n_selected(self):
        return sum(self.selection_counts.values())

    def selection_fraction(self, model_id):
        return self.selection_counts[model_id] / max(1, self.n_selected)

    def thetas(self, model_id):
        return np.vstack(
            [r.fits[model_id].theta_hat for r in self.rows if r.fits.get(model_id) is not None and r.fits[model_id].converged]
        )

    def rows_csv(self):
        qmax = max(
            [f.q for r in self.rows for f in r.fits.values() if f is not None] or [0]
        )
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rep", "seed", "model_id"] + [f"theta_hat_{j + 1}" for j in range(qmax)] + ["h", "qaic", "converged", "selected"])
        for r in self.rows:
            for mid in self.model_ids:
                f = r.fits.get(mid)
                sel = int(r.selected == mid)
                if f is None:
                    w.writerow([r.rep, r.seed, mid] + [""] * qmax + ["", "", "false", sel])
                    continue
                theta = [_f17(t) for t in f.theta_hat] + [""] * (qmax - f.q)
                w.writerow([r.rep, r.seed, mid] + theta + [_f17(f.h_value), _f17(f.qaic), str(bool(f.converged)).lower(), sel])
        return buf.getvalue()

    def summary_dict(self):
        return {
            "estimator_summary": {
                mid: {"mean": s["mean"].tolist(), "sd": s["sd"].tolist(), "count": s["count"]}
                for mid, s in self.estimator_summary.items()
            },
            "selection_counts": self.selection_counts,
            "replicates": len(self.rows),
            "replicates_without_converged_fit": len(self.rows) - self.n_selected,
            "failed_fits": {
                mid: sum(1 for r in self.rows if r.fits.get(mid) is None or not r.fits[mid].converged)
                for mid in self.model_ids
            },
            "config": self.config,
        }

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rows.csv").write_text(self.rows_csv())
        (out / "summary.json").write_text(dumps17(self.summary_dict()))

    def estimator_table(self, model_id, per_line=6):
        """``mean (sd)`` grid of one model's estimates."""
        s = self.estimator_summary[model_id]
        cells = [f"{m:.3f} ({d:.3f})" for m, d in zip(s["mean"], s["sd"])]
        lines = []
        for i in range(0, len(cells), per_line):
            head = "".join(f"{'theta' + str(j + 1):>16}" for j in range(i, min(i + per_line, len(cells))))
            lines.append(head)
            lines.append("".join(f"{c:>16}" for c in cells[i : i + per_line]))
        return "\n".join(lines)

    def selection_table(self):
        width = max(len(m) for m in self.model_ids)
        return "\n".join(f"{mid:<{width}}  {self.selection_counts[mid]:>8d}" for mid in self.model_ids)


def run_campaign(cfg):
    """Simulate ``cfg.reps`` paths, fit every candidate on each, and select by QAIC."""
    t0 = time.perf_counter()
    starts = starting_values(cfg)
    rows = _map_replicates(cfg, starts, "_worker_replicate", list(range(cfg.reps)))
    summary, counts = summarize(rows, cfg.model_ids)
    for r in rows:
        if r.errors:
            log.warning("replicate %d: %s", r.rep, r.errors)
    log.info("campaign finished: %d replicates in %.1fs", cfg.reps, time.perf_counter() - t0)
    return McReport(rows, cfg.model_ids, summary, counts, cfg.echo())


# -- experiments ---------------------------------------------------------------


@dataclass
class BiasResult:
    bias_estimate: float
    mc_stderr: float
    values: np.ndarray
    q: int

    def to_dict(self):
        return {
            "bias_estimate": self.bias_estimate,
            "mc_stderr": self.mc_stderr,
            "q": self.q,
            "reps": int(self.values.size),
        }


def _bias_replicate(rep):
    cfg, spec, start = _WORKER["cfg"], _WORKER["spec"], _WORKER["start"]
    d = cfg.design
    px = simulate_observations(cfg.true_model, SamplingDesign(d.n, d.T, d.euler_substeps, derive_seed(cfg.seed_base, rep, 0)))
    pz = simulate_observations(cfg.true_model, SamplingDesign(d.n, d.T, d.euler_substeps, derive_seed(cfg.seed_base, rep, 1)))
    ix, iz = make_increments(px, cfg.filter), make_increments(pz, cfg.filter)
    try:
        res = fit(ix, spec, initial=start, **_fit_kwargs(cfg, rep))
    except SemError:
        return np.nan
    if not res.converged:
        return np.nan
    return res.h_value - quasi_loglik(iz, spec, res.theta_hat)


def _run_experiment(cfg, spec, start, func, reps):
    if cfg.threads <= 1:
        _WORKER.update(cfg=cfg, spec=spec, start=start)
        try:
            return [func(r) for r in reps]
        finally:
            _WORKER.clear()
    with ProcessPoolExecutor(cfg.threads, initializer=_init_experiment, initargs=(cfg, spec, start)) as pool:
        return list(pool.map(func, reps, chunksize=max(1, len(reps) // (4 * cfg.threads))))


def _init_experiment(cfg, spec, start):
    _WORKER.update(cfg=cfg, spec=spec, start=start)


def _experiment_model(cfg, model):
    if isinstance(model, str):
        cand = cfg.candidate(model)
    elif isinstance(model, Candidate):
        cand = model
    else:
        cand = Candidate(model.name, model, model.truth)
    start = cand.truth if cfg.initial_at_truth else None
    return cand, start


def qaic_bias_experiment(cfg, model, reps=None):
    """Monte Carlo estimate of ``E[H(X, theta_hat(X)) - H(Z, theta_hat(X))]``.

    ``X`` and ``Z`` are independent paths of the same true model; for a
    correctly specified model the expectation approaches the parameter count.
    Replicates whose fit does not converge are dropped.
    """
    cand, start = _experiment_model(cfg, model)
    reps = cfg.reps if reps is None else reps
    vals = np.asarray(_run_experiment(cfg, cand.spec, start, _bias_replicate, list(range(reps))), dtype=float)
    good = vals[np.isfinite(vals)]
    if good.size < len(vals):
        log.warning("bias experiment: %d of %d replicates dropped", len(vals) - good.size, len(vals))
    se = good.std(ddof=1) / np.sqrt(good.size) if good.size > 1 else np.nan
    return BiasResult(float(good.mean()), float(se), good, cand.spec.q)


def _normality_replicate(rep):
    cfg, spec, start = _WORKER["cfg"], _WORKER["spec"], _WORKER["start"]
    d = cfg.design
    path = simulate_observations(cfg.true_model, SamplingDesign(d.n, d.T, d.euler_substeps, derive_seed(cfg.seed_base, rep, 0)))
    try:
        res = fit(make_increments(path, cfg.filter), spec, initial=start, **_fit_kwargs(cfg, rep))
    except SemError:
        return np.full(spec.q, np.nan)
    return res.theta_hat if res.converged else np.full(spec.q, np.nan)


@dataclass
class NormalityResult:
    empirical_cov: np.ndarray
    target_cov: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    rel_deviation: float
    max_rel_deviation: float
    scaled: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "empirical_cov": self.empirical_cov.tolist(),
            "target_cov": self.target_cov.tolist(),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "rel_deviation": self.rel_deviation,
            "max_rel_deviation": self.max_rel_deviation,
            "reps": int(self.scaled.shape[0]),
        }


def normality_experiment(cfg, model, reps=None):
    """Compare the spread of ``sqrt(n) (theta_hat - theta_0)`` with ``I(theta_0)^{-1}``.

    ``rel_deviation`` is the Frobenius-norm relative error of the sample
    covariance; ``max_rel_deviation`` is the largest relative error on its
    diagonal.
    """
    cand, start = _experiment_model(cfg, model)
    if cand.truth is None:
        raise ConfigError(f"model {cand.id!r} has no true parameter")
    theta0 = np.asarray(cand.truth, dtype=float)
    reps = cfg.reps if reps is None else reps
    thetas = np.vstack(_run_experiment(cfg, cand.spec, start, _normality_replicate, list(range(reps))))
    thetas = thetas[np.all(np.isfinite(thetas), axis=1)]
    u = np.sqrt(cfg.design.n) * (thetas - theta0)
    emp = np.atleast_2d(np.cov(u, rowvar=False))
    target = asymptotic_info(cand.spec, theta0).covariance()
    rel = float(np.linalg.norm(emp - target) / np.linalg.norm(target))
    diag_rel = float(np.max(np.abs(np.diag(emp) - np.diag(target)) / np.diag(target)))
    return NormalityResult(emp, target, u.mean(axis=0), u.std(axis=0, ddof=1), rel, diag_rel, u)
