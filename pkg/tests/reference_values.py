"""Reference Monte Carlo summaries for Model 1 (mean and SD of each estimate).

10,000 replications, T = 1, D = 10, rho = 0.4, started at the true value.
"""

MODEL1_MEAN_N1E4 = [
    0.500, 0.800, 0.300, 1.300, 0.800, 0.500, 0.900, 0.700, 1.100, -0.600, 0.900, 0.644, 0.362,
    1.443, 0.642, 0.493, 1.692, 0.252, 0.495, 0.362, 0.812, 0.644, 1.442, 1.214, 1.961, 0.361,
]
MODEL1_SD_N1E4 = [
    0.018, 0.016, 0.011, 0.013, 0.009, 0.006, 0.015, 0.017, 0.019, 0.023, 0.019, 0.017, 0.013,
    0.022, 0.014, 0.011, 0.027, 0.016, 0.013, 0.009, 0.018, 0.015, 0.023, 0.024, 0.046, 0.014,
]
# SD of the first component at n = 10^3 and 10^4
MODEL1_SD1 = {1000: 0.060, 10000: 0.018}
# selection counts out of 10,000 at n = 10^4
SELECTION_N1E4 = {"model1": 8331, "model2": 1669, "model3": 0}
