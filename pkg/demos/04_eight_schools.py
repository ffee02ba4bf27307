"""Eight schools, centered and non-centered.

The centered form has a funnel between tau and the school effects; the
non-centered form removes it.  The k-hat of each fit shows how much the
parameterization matters for each variational family.

Run:  python demos/04_eight_schools.py [--quick]
"""

import argparse

import numpy as np

from bernflow import diagnostics as dg
from bernflow import models, vi

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()
epochs = 2000 if args.quick else 15_000

print("param  method    k_hat  verdict   tau mean")
for par in ("CP", "NCP"):
    model = models.eight_schools_model(par)
    for method in ("bfvi", "mfgauss"):
        fit = vi.train(model, None, method, vi.TrainConfig(M=50, S=10, epochs=epochs, seed=1))
        rng = np.random.default_rng(7)
        rep = dg.psis_khat(fit.family, model, None, 5000, rng)
        tau = model.constrain(vi.sample_posterior(fit.family, 5000, rng).theta)[:, 1]
        print(f"{par:5s}  {method:8s} {rep.k_hat:6.3f}  {rep.verdict:8s} {tau.mean():6.2f}")
