"""Acceptance criteria, each reported as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``; the lines are also
collected in the terminal summary.  The Monte Carlo criteria take several
minutes in total on one core.
"""
import sys
import warnings

import numpy as np
import pytest

from jumpsem import (
    CampaignConfig,
    JumpFilterConfig,
    SamplingDesign,
    assemble_sigma,
    check_identifiability,
    duplication_matrix,
    duplication_pinv,
    fit,
    load_model,
    load_true_model,
    make_increments,
    normality_experiment,
    qaic_bias_experiment,
    quasi_loglik,
    quasi_loglik_grad,
    run_campaign,
    simulate_observations,
    true_sigma,
    unvech,
    vec,
    vech,
    vech_size,
    y_function,
)
from jumpsem.asymptotics import weight_matrix

from conftest import record
from oracles import brute_force_duplication, brute_force_w, naive_quasi_loglik, scalar_qmle
from reference_values import MODEL1_MEAN_N1E4, MODEL1_SD_N1E4

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def campaign_n1e4():
    """One 500-replicate campaign at n = 10^4 shared by criteria 3, 4 and 5."""
    return run_campaign(CampaignConfig.load("campaign_n10000"))


@pytest.fixture(scope="module")
def campaign_n1e3():
    """200 replicates of Model 1 at n = 10^3; criterion 4 reads the first 100."""
    cfg = CampaignConfig.load("campaign_n1000")
    return run_campaign(cfg.replace(reps=200, candidates=(cfg.candidate("model1"),)))


def _thetas(report, model_id, reps):
    rows = [r for r in report.rows[:reps] if r.fits.get(model_id) is not None and r.fits[model_id].converged]
    return np.vstack([r.fits[model_id].theta_hat for r in rows])


def test_criterion_1_covariance(model1, true_model):
    err = float(np.max(np.abs(assemble_sigma(model1, model1.truth) - true_sigma(true_model))))
    ok = err <= 1e-12
    record("1", ok, f"max |Sigma_1(theta_1,0) - Sigma_0| = {err:.2e} (tol 1e-12)")
    assert ok


def test_criterion_2_ranks(model1, model2):
    r1 = check_identifiability(model1, model1.truth)["rank"]
    r2 = check_identifiability(model2, model2.truth)["rank"]
    ok = r1 == 26 and r2 == 27
    record("2", ok, f"rank Delta: model1 {r1} (want 26), model2 {r2} (want 27)")
    assert ok


def test_criterion_3_consistency(campaign_n1e4):
    th = _thetas(campaign_n1e4, "model1", 200)
    mean = th.mean(axis=0)
    ref, sd = np.array(MODEL1_MEAN_N1E4), np.array(MODEL1_SD_N1E4)
    inside = np.abs(mean - ref) <= 3 * sd / np.sqrt(200)
    worst = int(np.argmax(np.abs(mean - ref) / sd))
    ok = th.shape[0] == 200 and inside.sum() >= 24
    record(
        "3",
        ok,
        f"{int(inside.sum())}/26 component means within 3 SD/sqrt(200) of the reference "
        f"({th.shape[0]} converged fits; worst theta{worst + 1}: {mean[worst]:.4f} vs {ref[worst]:.3f})",
    )
    assert ok


def test_criterion_4_sd_shrinkage(campaign_n1e4, campaign_n1e3):
    sd4 = _thetas(campaign_n1e4, "model1", 100)[:, 0].std(ddof=1)
    sd3 = _thetas(campaign_n1e3, "model1", 100)[:, 0].std(ddof=1)
    ratio = sd3 / sd4
    ok = 2.5 <= ratio <= 4.0
    record("4", ok, f"SD(theta1): n=1e3 {sd3:.4f}, n=1e4 {sd4:.4f}, ratio {ratio:.2f} (band [2.5, 4])")
    assert ok


def test_criterion_5_selection(campaign_n1e4):
    counts = campaign_n1e4.selection_counts
    frac = counts["model1"] / 500
    ok = counts["model3"] == 0 and 0.783 <= frac <= 0.883 and campaign_n1e4.n_selected == 500
    record(
        "5",
        ok,
        f"selections over 500: model1 {counts['model1']} ({frac:.3f}, band [0.783, 0.883]), "
        f"model2 {counts['model2']}, model3 {counts['model3']} (want 0)",
    )
    assert ok


def test_criterion_6a_bias_toy():
    res = qaic_bias_experiment(CampaignConfig.load("campaign_toy"), "toy", reps=2000)
    ok = res.values.size == 2000 and abs(res.bias_estimate - 2) <= 3 * res.mc_stderr
    record("6a", ok, f"toy model: bias {res.bias_estimate:.3f} +- {res.mc_stderr:.3f} (q = 2, 2000 pairs)")
    assert ok


def test_criterion_6b_bias_model1():
    res = qaic_bias_experiment(CampaignConfig.load("campaign_n10000"), "model1", reps=500)
    ok = res.values.size == 500 and abs(res.bias_estimate - 26) <= 3 * res.mc_stderr
    record("6b", ok, f"model1: bias {res.bias_estimate:.3f} +- {res.mc_stderr:.3f} (q = 26, 500 pairs)")
    assert ok


def test_criterion_7_normality():
    res = normality_experiment(CampaignConfig.load("campaign_scalar"), "scalar", reps=2000)
    emp, target = res.empirical_cov[0, 0], res.target_cov[0, 0]
    rel = abs(emp - target) / target
    ok = res.scaled.shape[0] == 2000 and np.isclose(target, 2 * 0.64**2) and rel <= 0.15
    record("7", ok, f"Var sqrt(n)(theta_hat - theta_0) = {emp:.4f} vs 2 theta_0^2 = {target:.4f} (rel {rel:.3f}, tol 0.15)")
    assert ok


def _oracle_a():
    rng = np.random.default_rng(1)
    worst = 0.0
    for p in (1, 2, 3, 4, 12):
        a = rng.standard_normal((p, p))
        s = a @ a.T + p * np.eye(p)
        ref = brute_force_w(s)
        worst = max(worst, float(np.max(np.abs(weight_matrix(s) - ref)) / np.max(np.abs(ref))))
    return worst <= 1e-10, f"W rel err {worst:.1e}"


def _paths():
    out = {}
    for tm in ("true_model", "toy_true_model", "scalar_true_model"):
        path = simulate_observations(load_true_model(tm), SamplingDesign(n=2000, seed=5))
        out[tm] = make_increments(path, JumpFilterConfig())
    return out


BUNDLED = {
    "model1": "true_model",
    "model2": "true_model",
    "model3": "true_model",
    "toy_model": "toy_true_model",
    "scalar_model": "scalar_true_model",
}


def _interior(spec, rng):
    t = np.empty(spec.q)
    for k, union in enumerate(spec.bounds):
        a, b = union[rng.integers(len(union))]
        a, b = max(a, -1.5), min(b, 1.5)
        t[k] = rng.uniform(a + 0.2 * (b - a), b - 0.2 * (b - a))
    return t


def _oracle_b(incs):
    worst = 0.0
    rng = np.random.default_rng(2)
    for name, tm in BUNDLED.items():
        spec, inc = load_model(name), incs[tm]
        for _ in range(20):
            th = _interior(spec, rng)
            g = quasi_loglik_grad(inc, spec, th)
            fd = np.empty(spec.q)
            for k in range(spec.q):
                e = np.zeros(spec.q)
                e[k] = 1e-5 * max(1.0, abs(th[k]))
                fd[k] = (quasi_loglik(inc, spec, th + e) - quasi_loglik(inc, spec, th - e)) / (2 * e[k])
            worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    return worst <= 1e-5, f"grad rel err {worst:.1e}"


def _oracle_c(incs):
    worst = 0.0
    for name, tm in BUNDLED.items():
        spec, inc = load_model(name), incs[tm]
        th = spec.truth if spec.truth is not None else np.asarray(spec.extras["start"])
        ref = naive_quasi_loglik(inc.increments, inc.kept, inc.h, assemble_sigma(spec, th))
        worst = max(worst, abs(quasi_loglik(inc, spec, th) - ref) / abs(ref))
    return worst <= 1e-12, f"H rel err {worst:.1e}"


def _oracle_d():
    rng = np.random.default_rng(3)
    ok = True
    for p in (1, 2, 3, 5, 12):
        d, dp = duplication_matrix(p), duplication_pinv(p)
        v = rng.standard_normal(vech_size(p))
        m = unvech(v)
        ok &= np.array_equal(d, brute_force_duplication(p))
        ok &= np.array_equal(d @ v, vec(m)) and np.array_equal(vech(m), v)
        ok &= np.array_equal(dp @ d, np.eye(vech_size(p))) and np.array_equal(dp @ vec(m), v)
    return bool(ok), "vech/D exact" if ok else "vech/D identity broken"


def _oracle_e(incs):
    spec, inc = load_model("scalar_model"), incs["scalar_true_model"]
    star = scalar_qmle(inc.increments, inc.threshold, inc.h)
    res = fit(inc, spec, initial=[1.0])
    err = abs(res.theta_hat[0] - star)
    return res.converged and err <= 1e-6, f"1-D QMLE err {err:.1e}"


def _oracle_f():
    spec = load_model("model1")
    rng = np.random.default_rng(4)
    y0 = y_function(spec, spec.truth, spec.truth)
    neg = 0
    for _ in range(100):
        th = spec.truth + rng.uniform(0.001, 0.1) * rng.standard_normal(spec.q)
        th[11:] = np.maximum(th[11:], 0.05)
        neg += y_function(spec, th, spec.truth) < 0
    return abs(y0) <= 1e-12 and neg == 100, f"Y(theta0)={y0:.1e}, Y<0 at {neg}/100"


def test_criterion_8_oracles():
    incs = _paths()
    parts = {
        "a": _oracle_a(),
        "b": _oracle_b(incs),
        "c": _oracle_c(incs),
        "d": _oracle_d(),
        "e": _oracle_e(incs),
        "f": _oracle_f(),
    }
    ok = all(p[0] for p in parts.values())
    record("8", ok, "; ".join(f"({k}) {'ok' if v[0] else 'FAIL'} {v[1]}" for k, v in parts.items()))
    assert ok


def test_criterion_9_determinism():
    cfg = CampaignConfig.load("campaign_n1000").replace(reps=6)
    outputs = []
    for threads in (1, 1, 2, 2):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            outputs.append(run_campaign(cfg.replace(threads=threads)).rows_csv().encode())
    ok = all(o == outputs[0] for o in outputs)
    record("9", ok, f"rows.csv byte-identical across 4 runs (threads 1,1,2,2): {ok}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))


# Further table values, checked with the same campaigns but not part of the
# numbered criteria.


def test_table1_small_sample_bias(campaign_n1e3):
    t = _thetas(campaign_n1e3, "model1", 200)
    assert abs(t[:, 11].mean() - 0.679) <= 3 * 0.069 / np.sqrt(200)


def test_table2_spurious_path(campaign_n1e4):
    t = _thetas(campaign_n1e4, "model2", 200)
    assert abs(t[:, 6].mean()) <= 3 * 0.008 / np.sqrt(200)
    assert 0.5 * 0.008 <= t[:, 6].std(ddof=1) <= 2 * 0.008


def test_normality_model1():
    res = normality_experiment(CampaignConfig.load("campaign_n10000"), "model1", reps=1000)
    print(f"model1 normality: Frobenius rel deviation {res.rel_deviation:.3f} (tol 0.25)")
    assert res.rel_deviation <= 0.25


def test_normality_scalar_mean():
    res = normality_experiment(CampaignConfig.load("campaign_scalar"), "scalar", reps=2000)
    assert abs(res.mean[0]) <= 3 * res.sd[0] / np.sqrt(2000)


def test_zero_parameter_bias_is_centred():
    res = qaic_bias_experiment(CampaignConfig.load("campaign_toy"), "toy_fixed", reps=500)
    assert res.q == 0 and abs(res.bias_estimate) <= 3 * res.mc_stderr
