"""
The bias correction behind QAIC
===============================

For a correctly specified model the in-sample quasi-likelihood overstates
its value on an independent copy ``Z`` by about ``q``.  The toy model has
two free parameters, so the Monte Carlo mean should sit near 2.
"""

from jumpsem import CampaignConfig, normality_experiment, qaic_bias_experiment

cfg = CampaignConfig.load("campaign_toy")
res = qaic_bias_experiment(cfg, "toy", reps=200)
print(f"bias {res.bias_estimate:.2f} +- {res.mc_stderr:.2f}, q = {res.q}")

# spread of the one-dimensional estimator against its limit 2 theta_0^2
norm = normality_experiment(CampaignConfig.load("campaign_scalar"), "scalar", reps=300)
print("empirical", norm.empirical_cov.ravel(), "limit", norm.target_cov.ravel())
