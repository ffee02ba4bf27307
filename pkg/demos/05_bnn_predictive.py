"""A one-hidden-layer network with ten units on nine points.

Raw weights are not identified (units can be permuted), so the comparison
with MCMC is made on the predictive mean over a grid of inputs.

Run:  python demos/05_bnn_predictive.py [--quick]
"""

import argparse

import numpy as np

from bernflow import harness, models, vi

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()
epochs, iters = (1000, 2000) if args.quick else (20_000, 20_000)

model = models.bnn_regression_model()
grid = harness._bnn_grid(model)
mc = harness.mcmc_experiment("bnn_regression", 4, iters, seed=0, write=False)
print(f"MCMC predictive R-hat (max over grid): {mc.diagnostics.rhat.max():.4f}")
f_mc = harness.bnn_predictive(mc.draws, grid)
y_mc = f_mc + 0.2 * np.random.default_rng(0).standard_normal(f_mc.shape)
lo, hi = np.quantile(y_mc, [0.05, 0.95], axis=0)

fit = vi.train(model, None, "bfvi", vi.TrainConfig(M=50, S=600, epochs=epochs, seed=1))
draws = vi.sample_posterior(fit.family, 5000, np.random.default_rng(1)).theta
mean = harness.bnn_predictive(draws, grid).mean(axis=0)
inside = (mean >= lo) & (mean <= hi)
print(f"BF-VI mean inside the MCMC 5-95% band at {inside.sum()}/{len(grid)} grid points\n")
print("     x   band lo  bf mean  band hi")
for i in range(0, len(grid), 5):
    print(f"{grid[i]:6.2f} {lo[i]:8.3f} {mean[i]:8.3f} {hi[i]:8.3f}")
