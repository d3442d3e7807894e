import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpsem import (
    asymptotic_info,
    check_identifiability,
    load_model,
    numerical_rank,
    population_h,
    sigma_batch,
    sigma_jacobian,
    unvech,
    y_function,
)

from oracles import complex_step_jacobian, gaussian_fisher


@pytest.mark.parametrize("name", ["model1", "model2", "toy_model", "scalar_model"])
def test_jacobian_matches_complex_step(name):
    spec = load_model(name)
    jac = sigma_jacobian(spec, spec.truth)
    ref = complex_step_jacobian(spec, spec.truth)
    assert np.max(np.abs(jac - ref)) <= 1e-8 * max(1.0, np.max(np.abs(ref)))


def test_jacobian_of_misspecified_model_at_start(model3):
    theta = np.asarray(model3.extras["start"], dtype=float)
    jac = sigma_jacobian(model3, theta)
    assert np.allclose(jac, complex_step_jacobian(model3, theta), atol=1e-8)


def test_ranks_of_correct_models(model1, model2):
    assert check_identifiability(model1, model1.truth) == {"rank": 26, "q": 26, "is_identified": True}
    assert check_identifiability(model2, model2.truth) == {"rank": 27, "q": 27, "is_identified": True}


def test_unidentified_model_is_detected():
    # two loadings entering only through their product cannot both be identified
    from jumpsem import ModelSpec

    doc = {
        "dims": {"p1": 2, "p2": 0, "k1": 1, "k2": 0},
        "lambda1": [["t0"], ["t1"]],
        "sigma_xixi": [["t2"]],
        "sigma_deltadelta": [[0.3, 0], [0, 0.3]],
        "bounds": [[[0.01, 10]], [[0.01, 10]], [[0.01, 10]]],
    }
    spec = ModelSpec.from_dict(doc)
    res = check_identifiability(spec, np.array([1.0, 0.5, 2.0]))
    assert res["rank"] == 2 and not res["is_identified"]


def test_numerical_rank_tolerance():
    m = np.diag([1.0, 1e-3, 1e-17])
    assert numerical_rank(m) == 2
    assert numerical_rank(np.zeros((3, 0))) == 0


@pytest.mark.parametrize("name", ["model1", "model2", "toy_model"])
def test_information_equals_gaussian_fisher(name):
    spec = load_model(name)
    info = asymptotic_info(spec, spec.truth)
    ref = gaussian_fisher(sigma_batch(spec, spec.truth), [unvech(c) for c in complex_step_jacobian(spec, spec.truth).T])
    assert np.allclose(info.info, ref, rtol=1e-7, atol=1e-9 * np.max(np.abs(ref)))
    assert info.rank == spec.q
    assert np.linalg.eigvalsh(info.info)[0] > 0


def test_scalar_limit_variance():
    spec = load_model("scalar_model")
    cov = asymptotic_info(spec, spec.truth).covariance()
    assert cov.shape == (1, 1)
    assert np.isclose(cov[0, 0], 2 * spec.truth[0] ** 2, rtol=1e-8)


def test_y_vanishes_at_truth(model1):
    assert abs(y_function(model1, model1.truth, model1.truth)) <= 1e-12


def test_y_is_difference_of_population_h(model1, sigma0, rng):
    theta = model1.truth + 0.01 * rng.standard_normal(model1.q)
    assert np.isclose(
        y_function(model1, theta, model1.truth),
        population_h(model1, theta, sigma0) - population_h(model1, model1.truth, sigma0),
        rtol=1e-9,
        atol=1e-12,
    )


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 0.2))
def test_y_negative_away_from_truth(seed, scale):
    spec = load_model("model1")
    rng = np.random.default_rng(seed)
    theta = spec.truth + scale * rng.standard_normal(spec.q)
    theta[11:] = np.maximum(theta[11:], 0.05)
    assert y_function(spec, theta, spec.truth) < 0
