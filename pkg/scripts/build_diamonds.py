"""Rebuild src/bernflow/data/diamonds.csv from the ggplot2 diamonds table.

Usage: python scripts/build_diamonds.py path/to/ggplot2/diamonds.csv

Response is log(price).  Predictors: carat, log(carat), depth, table, x, y, z
and orthogonal-polynomial contrasts for the ordered factors cut (4),
color (6) and clarity (7): 24 columns.  5000 rows are drawn without
replacement with numpy seed 20220201.
"""

import csv
import sys
from pathlib import Path

import numpy as np

LEVELS = {
    "cut": ["Fair", "Good", "Very Good", "Premium", "Ideal"],
    "color": ["D", "E", "F", "G", "H", "I", "J"],
    "clarity": ["I1", "SI2", "SI1", "VS2", "VS1", "VVS2", "VVS1", "IF"],
}
SUFFIX = ["L", "Q", "C"] + [f"^{k}" for k in range(4, 8)]


def contr_poly(n):
    """Orthonormal polynomial contrasts, the same basis as R's contr.poly."""
    x = np.arange(1, n + 1) - (n + 1) / 2
    q, r = np.linalg.qr(np.vander(x, n, increasing=True))
    z = q * np.diag(r)
    z /= np.linalg.norm(z, axis=0)
    return z[:, 1:]


def main(src, dst, n=5000, seed=20220201):
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(fh))
    idx = np.sort(np.random.default_rng(seed).choice(len(rows), n, replace=False))
    header = ["Y", "carat", "log_carat", "depth", "table", "x", "y", "z"]
    for f, lev in LEVELS.items():
        header += [f"{f}.{SUFFIX[k]}" for k in range(len(lev) - 1)]
    contrasts = {f: contr_poly(len(lev)) for f, lev in LEVELS.items()}
    with open(dst, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in idx:
            r = rows[i]
            carat = float(r["carat"])
            vals = [np.log(float(r["price"])), carat, np.log(carat)]
            vals += [float(r[c]) for c in ("depth", "table", "x", "y", "z")]
            for f, lev in LEVELS.items():
                vals += list(contrasts[f][lev.index(r[f])])
            w.writerow([repr(float(v)) for v in vals])


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "bernflow" / "data" / "diamonds.csv"
    main(sys.argv[1], out)
