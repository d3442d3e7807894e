"""Command-line entry point.

Every subcommand is a pure function of its input files and flags.  Logs go
to standard error, artifacts to ``--out``.  Exit status is 0 on success, 2
on a validation error and 3 on a numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .asymptotics import check_identifiability
from .errors import (
    ConfigError,
    NoConvergedFits,
    NoKeptIncrements,
    NotPositiveDefinite,
    NumericalError,
    SemError,
    SingularPsi,
)
from .harness import CampaignConfig, dumps17, normality_experiment, qaic_bias_experiment, run_campaign
from .model import load_model
from .qmle import JumpFilterConfig, fit, make_increments, select
from .simulate import ObservationPath, SamplingDesign, load_true_model, simulate_observations

log = logging.getLogger("jumpsem")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_HINTS = {
    NoKeptIncrements: "raise D or lower rho so that some increments pass the filter",
    SingularPsi: "check the B matrix: I - B must be invertible",
    NotPositiveDefinite: "check the bounds of variance parameters or the starting value",
    NoConvergedFits: "try more random starts (--starts) or --init truth",
}


def _filter_arg(text):
    try:
        d, rho = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected D,RHO (two numbers), got {text!r}") from None
    return d, rho


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _make_filter(pair, allow_low_rho):
    d, rho = pair
    return JumpFilterConfig(d=d, rho=rho, allow_low_rho=allow_low_rho)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(out, name, doc):
    (out / name).write_text(dumps17(doc))


def _read_theta(path, q):
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{p}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(doc, dict):
        doc = doc.get("theta", doc.get("theta_hat"))
    theta = np.asarray(doc, dtype=float)
    if theta.shape != (q,):
        raise ConfigError(f"{p}: theta has shape {theta.shape}, model needs ({q},)")
    return theta


def _load_path(path):
    if not Path(path).exists():
        raise ConfigError(f"{path}: no such file")
    return ObservationPath.from_csv(path)


def _initial(spec, mode):
    if mode == "random":
        return None
    if spec.truth is not None:
        return spec.truth
    start = spec.extras.get("start")
    if start is None:
        raise ConfigError(f"model {spec.name!r} stores no true parameter or start; use --init random")
    log.info("model %s has no true parameter; starting at its stored start value", spec.name)
    return np.asarray(start, dtype=float)


def _fit_table(fits, selected=None):
    width = max(8, max(len(f.model_id) for f in fits))
    lines = [f"{'model':<{width}}  {'q':>3}  {'H':>14}  {'QAIC':>14}  converged"]
    for f in fits:
        mark = "  *" if f.model_id == selected else ""
        lines.append(
            f"{f.model_id:<{width}}  {f.q:>3d}  {f.h_value:>14.4f}  {f.qaic:>14.4f}  {str(f.converged).lower()}{mark}"
        )
    return "\n".join(lines)


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(args):
    tm = load_true_model(args.true_model)
    design = SamplingDesign(n=args.n, T=args.t, euler_substeps=args.euler_substeps, seed=args.seed)
    path = simulate_observations(tm, design)
    out = _out_dir(args.out)
    path.to_csv(out / "path.csv")
    _write_json(
        out,
        "design.json",
        {
            "true_model": tm.name,
            "n": design.n,
            "T": design.T,
            "euler_substeps": design.euler_substeps,
            "seed": design.seed,
            "p": tm.p,
        },
    )
    log.info("wrote %d observations of %d series to %s", design.n + 1, tm.p, out / "path.csv")
    print(f"{out / 'path.csv'}: {design.n + 1} rows, {tm.p + 1} columns")
    return EXIT_OK


def _fit_all(args, specs):
    path = _load_path(args.data)
    inc = make_increments(path, _make_filter(args.filter, args.allow_low_rho))
    log.info("kept %d of %d increments (threshold %.6g)", inc.n_kept, inc.n, inc.threshold)
    fits = []
    for ref, spec in specs:
        if spec.p != path.p:
            raise ConfigError(f"model {ref!r} has p={spec.p}, data has {path.p} columns")
        fits.append(
            fit(inc, spec, starts=args.starts, initial=_initial(spec, args.init), seed=args.seed, model_id=spec.name)
        )
    return fits


def cmd_fit(args):
    spec = load_model(args.model)
    (res,) = _fit_all(args, [(args.model, spec)])
    print(_fit_table([res]))
    if not res.converged:
        log.warning("fit did not converge: %s", res.message)
    if args.out:
        _write_json(_out_dir(args.out), "fit.json", res.to_dict())
    return EXIT_OK


def cmd_select(args):
    specs = [(m, load_model(m)) for m in args.models]
    names = [s.name for _, s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("candidate models must have distinct names")
    fits = _fit_all(args, specs)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = select(fits)
    for w in caught:
        log.warning("%s", w.message)
    print(_fit_table(fits, report.selected.model_id))
    print(f"selected: {report.selected.model_id}")
    if args.out:
        _write_json(_out_dir(args.out), "selection.json", report.to_dict())
    return EXIT_OK


def _campaign(args):
    cfg = CampaignConfig.load(args.campaign)
    changes = {}
    if args.n is not None:
        d = cfg.design
        changes["design"] = SamplingDesign(args.n, d.T, d.euler_substeps, d.seed)
    if args.reps is not None:
        changes["reps"] = args.reps
    if args.seed is not None:
        changes["seed_base"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.filter is not None:
        changes["filter"] = _make_filter(args.filter, args.allow_low_rho)
    return cfg.replace(**changes) if changes else cfg


def cmd_mc(args):
    cfg = _campaign(args)
    log.info("campaign: %d replicates, n=%d, models %s", cfg.reps, cfg.design.n, ", ".join(cfg.model_ids))
    report = run_campaign(cfg)
    for mid in cfg.model_ids:
        print(f"[{mid}] mean (sd) over {report.estimator_summary[mid]['count']} converged fits")
        print(report.estimator_table(mid))
    print("selection counts")
    print(report.selection_table())
    if args.out:
        report.write(_out_dir(args.out))
    return EXIT_OK


def cmd_bias(args):
    cfg = _campaign(args)
    res = qaic_bias_experiment(cfg, args.model)
    print(f"{args.model}: bias {res.bias_estimate:.4f} (MC s.e. {res.mc_stderr:.4f}) vs q = {res.q}")
    if args.out:
        _write_json(_out_dir(args.out), "bias.json", res.to_dict())
    return EXIT_OK


def cmd_normality(args):
    res = normality_experiment(_campaign(args), args.model)
    print(f"{args.model}: diagonal of the empirical covariance of sqrt(n)(theta_hat - theta_0)")
    for j, (e, t) in enumerate(zip(np.diag(res.empirical_cov), np.diag(res.target_cov))):
        print(f"  theta{j + 1:<3d} empirical {e:12.5g}  limit {t:12.5g}  rel. dev. {abs(e - t) / t:8.4f}")
    print(f"max rel. deviation {res.max_rel_deviation:.4f}, Frobenius rel. deviation {res.rel_deviation:.4f}")
    if args.out:
        _write_json(_out_dir(args.out), "normality.json", res.to_dict())
    return EXIT_OK


def cmd_check_ident(args):
    spec = load_model(args.model)
    if args.theta is not None:
        theta = _read_theta(args.theta, spec.q)
    elif spec.truth is not None:
        theta = spec.truth
    else:
        raise ConfigError(f"model {spec.name!r} stores no true parameter; pass --theta")
    res = check_identifiability(spec, theta)
    verdict = "identified" if res["is_identified"] else "not identified"
    print(f"rank {res['rank']} / q {res['q']}: {verdict}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _add_filter(p, default):
    p.add_argument(
        "--filter", type=_filter_arg, default=default, metavar="D,RHO",
        help="jump filter: keep increments with norm <= D*h**RHO" + (" (default 10,0.4)" if default else ""),
    )
    p.add_argument("--allow-low-rho", action="store_true", help="permit RHO outside [3/8, 1/2)")


def _add_fit_flags(p):
    p.add_argument("--data", required=True, help="observation CSV written by 'simulate'")
    _add_filter(p, (10.0, 0.4))
    p.add_argument("--init", choices=("truth", "random"), default="random", help="start at the stored truth (or stored start value) or at random points (default random)")
    p.add_argument("--starts", type=_positive_int, default=8, help="number of random starts (default 8)")
    p.add_argument("--seed", type=int, default=0, help="seed of the random starts (default 0)")
    p.add_argument("--out", help="directory for the JSON result")


def _add_campaign_flags(p, with_model):
    p.add_argument("--campaign", required=True, help="campaign JSON file or bundled name")
    if with_model:
        p.add_argument("--model", required=True, help="candidate id inside the campaign")
    p.add_argument("--n", type=_positive_int, help="override the number of observations")
    p.add_argument("--reps", type=_positive_int, help="override the number of replicates")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--threads", type=_positive_int, help="number of worker processes")
    _add_filter(p, None)
    p.add_argument("--out", help="directory for the artifacts")


def build_parser():
    parser = argparse.ArgumentParser(prog="jumpsem", description="SEM for jump-diffusion processes observed at high frequency.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on standard error")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="simulate an observation path")
    p.add_argument("--true-model", default="true_model", help="true-model JSON file or bundled name (default true_model)")
    p.add_argument("--n", type=_positive_int, required=True, help="number of observation intervals")
    p.add_argument("--t", type=float, default=1.0, help="time horizon T (default 1)")
    p.add_argument("--euler-substeps", type=_positive_int, default=10, help="Euler steps per observation interval (default 10)")
    p.add_argument("--seed", type=int, default=0, help="simulation seed (default 0)")
    p.add_argument("--out", required=True, help="directory for path.csv and design.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one candidate model")
    p.add_argument("--model", required=True, help="model JSON file or bundled name")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="fit several models and select by QAIC")
    p.add_argument("--models", nargs="+", required=True, help="model JSON files or bundled names")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("mc", help="run a Monte Carlo campaign")
    _add_campaign_flags(p, with_model=False)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("bias", help="Monte Carlo check of the QAIC bias correction")
    _add_campaign_flags(p, with_model=True)
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("normality", help="compare the estimator spread with the limit covariance")
    _add_campaign_flags(p, with_model=True)
    p.set_defaults(func=cmd_normality)

    p = sub.add_parser("check-ident", help="numerical local identifiability check")
    p.add_argument("--model", required=True, help="model JSON file or bundled name")
    p.add_argument("--theta", help="JSON file with the parameter vector (default: the model's stored truth)")
    p.set_defaults(func=cmd_check_ident)
    return parser


def _hint(exc):
    for cls, text in _HINTS.items():
        if isinstance(exc, cls):
            return text
    return None


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        hint = _hint(exc)
        print(f"numerical failure: {exc}" + (f"\nhint: {hint}" if hint else ""), file=sys.stderr)
        return EXIT_NUMERIC
    except SemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
