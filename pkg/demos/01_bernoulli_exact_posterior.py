"""Two coin flips, both heads: how close does a Bernstein flow get to Beta(3.1, 1.1)?

Run:  python demos/01_bernoulli_exact_posterior.py [--quick]
"""

import argparse

import numpy as np

from bernflow import diagnostics as dg
from bernflow import models, vi
from bernflow.reference import BetaPosterior

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()
epochs = 200 if args.quick else 1000

model = models.bernoulli_beta_model()
exact = BetaPosterior(*model.extras["posterior"])
print(f"exact posterior: Beta({exact.alpha}, {exact.beta}), mean {exact.mean:.4f}")

# The flow lives on the logit scale; constrain() maps draws back to pi.
for M in (1, 3, 10):
    fit = vi.train(model, None, "bfvi", vi.TrainConfig(M=M, S=1000, epochs=epochs, seed=1))
    kl = dg.kl_vs_analytic(fit.family, model.analytic_log_posterior, 10_000, np.random.default_rng(0))
    pi = model.constrain(vi.sample_posterior(fit.family, 20_000, np.random.default_rng(1)).theta)[:, 0]
    print(f"M={M:2d}  KL={kl.value:.4f} +- {kl.se:.4f}  mean={pi.mean():.4f}  "
          f"({fit.wall_time:.1f}s)")

# Density on a few points: flow histogram against the closed form.
edges = np.linspace(0, 1, 11)
hist, _ = np.histogram(pi, edges, density=True)
mid = 0.5 * (edges[1:] + edges[:-1])
print("\n   pi   flow   exact")
for m, h in zip(mid, hist):
    print(f"{m:5.2f} {h:6.3f} {exact.pdf(m):6.3f}")
