"""
Selecting a model by QAIC
=========================

The three bundled candidates are fitted to one path.  Model 1 is correct,
Model 2 adds one redundant coefficient, Model 3 has a single endogenous
factor in place of two and cannot reproduce the true covariance.
"""

from jumpsem import JumpFilterConfig, SamplingDesign, fit, load_model, load_true_model, make_increments
from jumpsem import select, simulate_observations

path = simulate_observations(load_true_model("true_model"), SamplingDesign(n=10_000, seed=11))
inc = make_increments(path, JumpFilterConfig())

fits = [fit(inc, load_model(name), starts=8, seed=0, model_id=name) for name in ("model1", "model2", "model3")]
for f in fits:
    print(f"{f.model_id}: q={f.q:2d}  H={f.h_value:12.3f}  QAIC={f.qaic:12.3f}")

report = select(fits)
print("selected:", report.selected.model_id)
