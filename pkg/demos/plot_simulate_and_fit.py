"""
Simulating a path and fitting one model
=======================================

The latent jump diffusions are simulated by Euler-Maruyama on a fine grid
and observed every ``h = T / n``.  Increments larger than ``D h^rho`` are
dropped before the quasi-likelihood is maximised.
"""

import numpy as np

from jumpsem import JumpFilterConfig, SamplingDesign, fit, load_model, load_true_model, make_increments
from jumpsem import simulate_observations

tm = load_true_model("true_model")
path = simulate_observations(tm, SamplingDesign(n=10_000, T=1.0, seed=7))
print("observations:", path.x.shape)

inc = make_increments(path, JumpFilterConfig(d=10.0, rho=0.4))
print(f"threshold {inc.threshold:.4f}: kept {inc.n_kept} of {inc.n} increments")

model1 = load_model("model1")
res = fit(inc, model1, initial=model1.truth)
print("converged:", res.converged, " iterations:", res.iterations)
print("estimate - truth:", np.round(res.theta_hat - model1.truth, 3))

# random starts reach the same optimum without knowing the truth
res_random = fit(inc, model1, starts=8, seed=1)
print(f"H from truth start {res.h_value:.3f}, from random starts {res_random.h_value:.3f}")
