"""Command line entry point: ``bernflow fit | sweep-m | mcmc | compare``.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 MCMC convergence gate failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness as hz
from .datasets import DataError
from .vi import TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_GATE = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise hz.ConfigError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bernflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fit", help="train one variational approximation")
    f.add_argument("--config", help="JSON or key=value file with any of the flags below")
    f.add_argument("--experiment")
    f.add_argument("--method", choices=["bfvi", "mfgauss"])
    f.add_argument("--M", type=int)
    f.add_argument("--S", type=int)
    f.add_argument("--epochs", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--batch-size", type=int, dest="batch_size")
    f.add_argument("--S-diag", type=int, dest="S_diag")
    f.add_argument("--data", help="dataset file overriding the bundled one")
    f.add_argument("--out", help=f"output root (default ${hz.OUT_ENV} or ./runs)")

    s = sub.add_parser("sweep-m", help="KL versus Bernstein order M")
    s.add_argument("--experiment", required=True)
    s.add_argument("--m-list", type=_int_list, default=[1, 2, 5, 10, 20, 30, 50])
    s.add_argument("--replicates", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--S", type=int)
    s.add_argument("--out", required=True, help="CSV file to write")

    m = sub.add_parser("mcmc", help="reference chains with an R-hat gate")
    m.add_argument("--experiment", required=True)
    m.add_argument("--chains", type=int, default=4)
    m.add_argument("--iters", type=int, default=20000, help="kept draws per chain")
    m.add_argument("--warmup", type=int)
    m.add_argument("--thin", type=int)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--data")
    m.add_argument("--out")

    c = sub.add_parser("compare", help="compare fitted runs against a reference")
    c.add_argument("--experiment", required=True)
    c.add_argument("--runs", required=True, help="comma-separated run directories")
    c.add_argument("--against", required=True, help="mcmc run directory or 'analytic'")
    c.add_argument("--out", required=True, help="directory for comparison.json and pairs.csv")
    return p


def _fit(args) -> int:
    opts = hz.read_config_file(args.config) if args.config else {}
    for key in ("experiment", "method", "M", "S", "epochs", "lr", "seed", "batch_size",
                "S_diag", "data", "out"):
        val = getattr(args, key)
        if val is not None:
            opts[key] = val
    if "experiment" not in opts or opts["experiment"] is None:
        raise hz.ConfigError(f"--experiment is required; valid: {', '.join(hz.REGISTRY)}")
    config = hz.ExperimentConfig(**opts)
    try:
        outcome = hz.fit_experiment(config)
    except TrainingError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    rec = outcome.record
    print(json.dumps({"run_dir": str(outcome.run_dir), "psis": rec.psis, "kl": rec.kl}, indent=2))
    return EXIT_OK


def _sweep(args) -> int:
    rows = hz.sweep_m(args.experiment, args.m_list, args.replicates, args.seed, args.epochs,
                      args.S, out=args.out)
    summary = hz.sweep_summary(rows)
    for M, st in summary.items():
        print(f"M={M:3d}  median KL={st['median']:.5f}  IQR=[{st['q25']:.5f}, {st['q75']:.5f}]")
    return EXIT_OK


def _mcmc(args) -> int:
    res = hz.mcmc_experiment(args.experiment, args.chains, args.iters, args.seed, args.warmup,
                             args.thin, args.data, args.out)
    s = res.record.summary
    print(json.dumps({"run_dir": str(res.run_dir), "max_rhat": max(s["rhat"]),
                      "min_ess": min(s["ess"]), "ground_truth_ready": s["ground_truth_ready"]}))
    if res.record.failed:
        print("R-hat gate failed; chains are not ground-truth ready", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def _compare(args) -> int:
    runs = [r for r in args.runs.split(",") if r]
    report = hz.compare_runs(args.experiment, runs, args.against, args.out)
    for label, r in report["runs"].items():
        print(f"{label}: k_hat={r['k_hat']} verdict={r['verdict']}")
    print(f"wrote {Path(args.out) / 'comparison.json'}")
    return EXIT_OK


COMMANDS = {"fit": _fit, "sweep-m": _sweep, "mcmc": _mcmc, "compare": _compare}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (hz.ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
