"""Experiment registry, run persistence, M-sweeps, MCMC ground truth and comparisons.

Everything here is plain Python callable from tests or notebooks; the CLI in
:mod:`bernflow.cli` only parses arguments and maps exceptions to exit codes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from . import diagnostics as dg
from . import models as mdl
from . import reference as ref
from . import vi
from .datasets import DataError, Dataset, bundled_path, file_sha256, ingest

OUT_ENV = "BERNFLOW_OUT"
METHODS = ("bfvi", "mfgauss", "mcmc")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class GateError(RuntimeError):
    """MCMC convergence gate failed (CLI exit code 4)."""


# ---------------------------------------------------------------------------
# registry

@dataclass(frozen=True)
class Experiment:
    name: str
    dataset: str
    build: Callable[[Dataset], mdl.ProbabilisticModel]
    M: int
    S: int
    epochs: int
    batch_size: int | None = None
    evidence: str | None = None          # "analytic" | "quadrature" | None
    interval: tuple[float, float] | None = None
    mcmc_warmup: int = 5000
    mcmc_thin: int = 1
    # MCMC runs on this model instead (e.g. NCP for the CP target) and maps back
    mcmc_build: Callable[[Dataset], mdl.ProbabilisticModel] | None = None
    mcmc_map: Callable[[np.ndarray], np.ndarray] | None = None
    # identified quantity for the R-hat gate when raw parameters are not
    mcmc_quantity: Callable[[np.ndarray], np.ndarray] | None = None


def _bnn_grid(model) -> np.ndarray:
    x = model.dataset["x"]
    return np.linspace(x.min() - 1.0, x.max() + 1.0, 50)


def bnn_predictive(draws, grid=None):
    grid = _bnn_grid(mdl.bnn_regression_model()) if grid is None else grid
    return np.asarray(mdl.bnn_mean(np.asarray(draws, dtype=float), grid))


REGISTRY: dict[str, Experiment] = {
    "bernoulli": Experiment("bernoulli", "bernoulli", lambda d: mdl.bernoulli_beta_model(d["y"]),
                            M=10, S=1000, epochs=1000, evidence="analytic", interval=(-30.0, 40.0)),
    "cauchy": Experiment("cauchy", "cauchy", lambda d: mdl.cauchy_model(d["y"]),
                         M=50, S=10000, epochs=1000, evidence="quadrature", interval=(-15.0, 15.0)),
    "toy_linreg": Experiment("toy_linreg", "toy_linreg", mdl.toy_linreg_model,
                             M=10, S=600, epochs=15000, mcmc_warmup=10000, mcmc_thin=10),
    "eight_schools_cp": Experiment(
        "eight_schools_cp", "eight_schools", lambda d: mdl.eight_schools_model("CP", d),
        M=50, S=10, epochs=15000, mcmc_warmup=20000, mcmc_thin=10,
        mcmc_build=lambda d: mdl.eight_schools_model("NCP", d), mcmc_map=mdl.ncp_to_cp),
    "eight_schools_ncp": Experiment(
        "eight_schools_ncp", "eight_schools", lambda d: mdl.eight_schools_model("NCP", d),
        M=50, S=10, epochs=15000, mcmc_warmup=20000, mcmc_thin=10),
    "bnn_regression": Experiment("bnn_regression", "bnn_regression", mdl.bnn_regression_model,
                                 M=50, S=600, epochs=20000, mcmc_warmup=20000, mcmc_thin=10,
                                 mcmc_quantity=bnn_predictive),
    "diamonds": Experiment("diamonds", "diamonds", mdl.diamonds_model,
                           M=50, S=10, epochs=30000, batch_size=512, mcmc_warmup=20000, mcmc_thin=10),
}


def get_experiment(name: str) -> Experiment:
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; valid: {', '.join(REGISTRY)}")
    return REGISTRY[name]


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    experiment: str
    method: str = "bfvi"
    M: int | None = None
    S: int | None = None
    epochs: int | None = None
    lr: float = 1e-3
    seed: int = 0
    batch_size: int | None = None
    data: str | None = None
    out: str | None = None
    S_diag: int = 5000
    n_samples: int = 5000

    def __post_init__(self):
        exp = get_experiment(self.experiment)
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        self.M = exp.M if self.M is None else int(self.M)
        self.S = exp.S if self.S is None else int(self.S)
        self.epochs = exp.epochs if self.epochs is None else int(self.epochs)
        self.batch_size = exp.batch_size if self.batch_size is None else int(self.batch_size)
        self.seed = int(self.seed)
        if self.M < 1 or self.S < 1 or self.epochs < 1:
            raise ConfigError("M, S and epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.S_diag < 100:
            raise ConfigError("S_diag must be >= 100")
        if self.data is not None and not Path(self.data).exists():
            raise ConfigError(f"data file {self.data!r} does not exist")

    @property
    def definition(self) -> Experiment:
        return REGISTRY[self.experiment]

    def train_config(self) -> vi.TrainConfig:
        return vi.TrainConfig(M=self.M, S=self.S, epochs=self.epochs, lr=self.lr, seed=self.seed,
                              batch_size=self.batch_size)

    def data_path(self) -> Path:
        return Path(self.data) if self.data else bundled_path(self.definition.dataset)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(key: str, value):
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    if value is None or value == "":
        return None
    t = str(types[key])
    try:
        if "int" in t:
            return int(value)
        if "float" in t:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None
    return str(value)


def read_config_file(path) -> dict:
    """JSON object or key=value lines ('#' comments) with ExperimentConfig keys."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            raw[k.strip().replace("-", "_")] = v.strip()
    return {k: _coerce(k, v) for k, v in raw.items()}


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


# ---------------------------------------------------------------------------
# persistence helpers

def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(v)
                              for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    atomic_write_text(path, _csv_text(header, rows))


def read_samples_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    return header, np.asarray(rows, dtype=float).reshape(-1, len(header))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def input_hash(config: ExperimentConfig) -> str:
    """sha256 over the numeric config (output location excluded) and data bytes."""
    cfg = config.to_dict()
    cfg.pop("out", None)
    cfg.pop("data", None)
    h = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode())
    h.update(file_sha256(config.data_path()).encode())
    return h.hexdigest()


@dataclass
class RunRecord:
    config: dict
    input_hash: str
    kind: str                         # "fit" | "mcmc"
    summary: dict = field(default_factory=dict)
    psis: dict | None = None
    kl: dict | None = None
    started: str = ""
    finished: str = ""
    failed: bool = False
    files: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return dump_json(dataclasses.asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, run_dir) -> "RunRecord":
        return cls.from_json((Path(run_dir) / "report.json").read_text(encoding="utf-8"))

    def numeric_payload(self) -> dict:
        """Everything that must be reproducible (timings and paths stripped)."""
        d = json.loads(self.to_json())
        for k in ("started", "finished", "files"):
            d.pop(k)
        d["config"].pop("out", None)
        d["summary"].pop("wall_time", None)
        return d


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime())


def run_dir_for(config: ExperimentConfig, digest: str) -> Path:
    root = Path(config.out) if config.out else default_out_root()
    return root / f"{config.experiment}-{config.method}-s{config.seed}-{digest[:10]}"


def load_data(config: ExperimentConfig) -> Dataset:
    try:
        return ingest(config.data_path(), config.definition.dataset)
    except DataError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# fit

@dataclass
class FitOutcome:
    record: RunRecord
    run_dir: Path
    fit: vi.FitResult
    model: mdl.ProbabilisticModel


def log_evidence(exp: Experiment, model) -> float | None:
    if exp.evidence == "analytic":
        return float(model.analytic_log_evidence)
    if exp.evidence == "quadrature":
        return dg.log_evidence_quadrature_1d(model, *exp.interval)
    return None


def kl_estimates(exp: Experiment, family, model, S: int, rng) -> dict:
    out = {}
    if model.analytic_log_posterior is not None:
        v, se = dg.kl_vs_analytic(family, model.analytic_log_posterior, S, rng)
        out["kl_vs_analytic"], out["kl_vs_analytic_se"] = v, se
    log_z = log_evidence(exp, model)
    if log_z is not None:
        v, se = dg.kl_via_evidence(family, model, None, log_z, S, rng)
        out["kl_via_evidence"], out["kl_via_evidence_se"] = v, se
        out["log_evidence"] = log_z
    return out


def fit_experiment(config: ExperimentConfig, write: bool = True) -> FitOutcome:
    """Train one variational fit and (optionally) persist samples, trace and report.

    Divergence re-raises the TrainingError after the failed record is written.
    """
    if config.method == "mcmc":
        raise ConfigError("use the mcmc command for method 'mcmc'")
    exp = config.definition
    data = load_data(config)
    model = exp.build(data)
    digest = input_hash(config)
    run_dir = run_dir_for(config, digest)
    started = _now()
    _, _, sample_rng, diag_rng = vi.rng_streams(config.seed, 4)
    record = RunRecord(config.to_dict(), digest, "fit", started=started)

    try:
        fit = vi.train(model, data, config.method, config.train_config())
    except vi.TrainingError as err:
        record.failed = True
        record.finished = _now()
        record.summary = {"failed_step": err.step, "message": str(err),
                          "param_names": model.param_names, "constraints": model.constraints}
        if write:
            res = getattr(err, "result", None)
            if res is not None:
                write_csv(run_dir / "trace.csv", ["epoch", "elbo"],
                          [(i, e) for i, e in enumerate(res.elbo_trace)])
                record.files["trace"] = "trace.csv"
            atomic_write_text(run_dir / "report.json", record.to_json())
        raise

    fam = fit.family
    bank = vi.sample_posterior(fam, config.n_samples, sample_rng)
    constrained = model.constrain(bank.theta)
    psis = dg.psis_khat(fam, model, None, config.S_diag, diag_rng)
    kl = kl_estimates(exp, fam, model, max(config.S_diag, 10000), diag_rng)
    tail = fit.elbo_trace[-max(1, len(fit.elbo_trace) // 10):]
    record.summary = {
        "family": fam.describe(),
        "param_names": model.param_names,
        "constraints": model.constraints,
        "final_elbo_mean": float(np.mean(tail)),
        "clipped_steps": len(fit.clipped_steps),
        "wall_time": fit.wall_time,
        "lambda": fam.params.values.tolist(),
        "posterior_mean": constrained.mean(axis=0).tolist(),
        "posterior_sd": constrained.std(axis=0, ddof=1).tolist(),
    }
    record.psis = psis.as_dict()
    record.kl = kl or None
    record.finished = _now()
    if write:
        write_csv(run_dir / "samples.csv", model.param_names, constrained)
        write_csv(run_dir / "trace.csv", ["epoch", "elbo"], [(i, e) for i, e in enumerate(fit.elbo_trace)])
        record.files = {"samples": "samples.csv", "trace": "trace.csv"}
        atomic_write_text(run_dir / "report.json", record.to_json())
    return FitOutcome(record, run_dir, fit, model)


# ---------------------------------------------------------------------------
# M sweep

SWEEPABLE = ("bernoulli", "cauchy")


def sweep_m(experiment: str, m_list, replicates: int, seed: int = 0, epochs: int | None = None,
            S: int | None = None, S_diag: int = 10000, out: str | None = None) -> list[dict]:
    """KL(q || posterior) for every M and replicate; seeds are seed + replicate."""
    exp = get_experiment(experiment)
    if experiment not in SWEEPABLE:
        raise ConfigError(f"sweep-m needs an experiment with a known evidence: {', '.join(SWEEPABLE)}")
    if replicates < 1 or not m_list:
        raise ConfigError("need at least one M and one replicate")
    data = ingest(bundled_path(exp.dataset), exp.dataset)
    model = exp.build(data)
    log_z = log_evidence(exp, model)
    rows = []
    for M in m_list:
        for r in range(replicates):
            s = seed + r
            cfg = vi.TrainConfig(M=int(M), S=exp.S if S is None else S,
                                 epochs=exp.epochs if epochs is None else epochs, seed=s)
            fit = vi.train(model, data, "bfvi", cfg)
            rng = vi.rng_streams(s, 4)[3]
            if model.analytic_log_posterior is not None:
                kl, se = dg.kl_vs_analytic(fit.family, model.analytic_log_posterior, S_diag, rng)
            else:
                kl, se = dg.kl_via_evidence(fit.family, model, data, log_z, S_diag, rng)
            rows.append({"M": int(M), "replicate": r, "seed": s, "KL": kl, "KL_se": se})
    if out is not None:
        out = Path(out)
        write_csv(out, ["M", "replicate", "seed", "KL"],
                  [(row["M"], row["replicate"], row["seed"], row["KL"]) for row in rows])
    return rows


def sweep_summary(rows) -> dict:
    by_m: dict[int, list[float]] = {}
    for row in rows:
        by_m.setdefault(row["M"], []).append(row["KL"])
    return {M: {"median": float(np.median(v)), "q25": float(np.quantile(v, 0.25)),
                "q75": float(np.quantile(v, 0.75)), "n": len(v)} for M, v in sorted(by_m.items())}


def loglog_slope(ms, values) -> float:
    return float(np.polyfit(np.log(np.asarray(ms, float)), np.log(np.asarray(values, float)), 1)[0])


# ---------------------------------------------------------------------------
# MCMC ground truth

@dataclass
class McmcOutcome:
    chains: list
    diagnostics: ref.ChainDiagnostics
    draws: np.ndarray          # pooled, unconstrained, target parameterization
    constrained: np.ndarray
    record: RunRecord
    run_dir: Path

    @property
    def ok(self) -> bool:
        return not self.record.failed


def mcmc_experiment(experiment: str, chains: int = 4, iters: int = 20000, seed: int = 0,
                    warmup: int | None = None, thin: int | None = None, data: str | None = None,
                    out: str | None = None, write: bool = True, threshold: float = 1.01) -> McmcOutcome:
    """Run reference chains and gate them on split R-hat.

    The record is persisted either way; ``record.failed`` marks a failed
    gate (the CLI turns that into exit code 4).
    """
    if chains < 2:
        raise ConfigError("at least 2 chains are required for R-hat")
    if iters < 10:
        raise ConfigError("iters must be >= 10")
    config = ExperimentConfig(experiment, "mcmc", seed=seed, data=data, out=out)
    exp = config.definition
    ds = load_data(config)
    target = exp.build(ds)
    sampler_model = exp.mcmc_build(ds) if exp.mcmc_build else target
    warmup = exp.mcmc_warmup if warmup is None else warmup
    thin = exp.mcmc_thin if thin is None else thin
    started = _now()
    t0 = time.perf_counter()
    ch = ref.rwm_chains(sampler_model, ds, chains, warmup, iters, seed, thin)
    mapped = [exp.mcmc_map(c.draws) if exp.mcmc_map else c.draws for c in ch]
    diag = ref.chain_diagnostics(mapped, exp.mcmc_quantity)
    pooled = np.concatenate(mapped, axis=0)
    constrained = target.constrain(pooled)
    ok = diag.ok(threshold)
    digest = hashlib.sha256(json.dumps([experiment, chains, iters, seed, warmup, thin]).encode())
    digest.update(file_sha256(config.data_path()).encode())
    record = RunRecord(
        {"experiment": experiment, "method": "mcmc", "chains": chains, "iters": iters, "seed": seed,
         "warmup": warmup, "thin": thin, "data": data, "out": out},
        digest.hexdigest(), "mcmc",
        summary={"param_names": target.param_names, "constraints": target.constraints,
                 "rhat": diag.rhat.tolist(), "ess": diag.ess.tolist(),
                 "rhat_on": "derived" if exp.mcmc_quantity else "parameters",
                 "acceptance": [c.acceptance_rate for c in ch],
                 "ground_truth_ready": ok, "wall_time": time.perf_counter() - t0,
                 "posterior_mean": constrained.mean(axis=0).tolist(),
                 "posterior_sd": constrained.std(axis=0, ddof=1).tolist()},
        started=started, finished=_now(), failed=not ok)
    root = Path(out) if out else default_out_root()
    run_dir = root / f"{experiment}-mcmc-s{seed}-{record.input_hash[:10]}"
    if write:
        names = target.param_names
        rows = [[c.chain, *row, lj] for c, m in zip(ch, mapped) for row, lj in zip(m, c.log_joint)]
        write_csv(run_dir / "chains.csv", ["chain", *names, "log_joint"], rows)
        write_csv(run_dir / "samples.csv", names, constrained)
        atomic_write_text(run_dir / "diagnostics.json",
                          dump_json({"rhat": diag.rhat, "ess": diag.ess, "ground_truth_ready": ok}))
        record.files = {"chains": "chains.csv", "samples": "samples.csv",
                        "diagnostics": "diagnostics.json"}
        atomic_write_text(run_dir / "report.json", record.to_json())
    return McmcOutcome(ch, diag, pooled, constrained, record, run_dir)


# ---------------------------------------------------------------------------
# comparison

def analytic_reference_samples(experiment: str, n: int, seed: int = 0) -> tuple[list[str], np.ndarray]:
    """Exact posterior draws (constrained) for experiments with a closed form or 1-d grid."""
    exp = get_experiment(experiment)
    data = ingest(bundled_path(exp.dataset), exp.dataset)
    model = exp.build(data)
    rng = np.random.default_rng(seed)
    if experiment == "bernoulli":
        a, b = model.extras["posterior"]
        return model.param_names, ref.BetaPosterior(a, b).sample(n, rng)[:, None]
    if exp.evidence == "quadrature":
        grid = ref.grid_posterior_1d(model, *exp.interval)
        cdf = grid.cdf / grid.cdf[-1]
        x = np.interp(rng.uniform(size=n), cdf, grid.x)
        return model.param_names, model.constrain(x[:, None])
    raise ConfigError(f"no analytic reference for {experiment!r}; pass an mcmc run directory")


def marginal_stats(x: np.ndarray) -> dict:
    return {"mean": x.mean(axis=0).tolist(), "sd": x.std(axis=0, ddof=1).tolist(),
            "skewness": stats.skew(x, axis=0).tolist()}


def compare_runs(experiment: str, runs, against: str, out: str | None = None,
                 n_ref: int = 5000) -> dict:
    get_experiment(experiment)
    run_dirs = [Path(r) for r in runs]
    for r in run_dirs:
        if not (r / "report.json").exists():
            raise ConfigError(f"run {str(r)!r} not found (no report.json)")
    if against == "analytic":
        names, ref_x = analytic_reference_samples(experiment, n_ref)
        ref_label = "analytic"
    else:
        ref_dir = Path(against)
        if not (ref_dir / "samples.csv").exists():
            raise ConfigError(f"reference run {against!r} not found")
        names, ref_x = read_samples_csv(ref_dir / "samples.csv")
        ref_label = str(ref_dir)
    ref_stats = marginal_stats(ref_x)
    report = {"experiment": experiment, "against": ref_label, "reference": ref_stats,
              "param_names": names, "runs": {}}
    out_dir = Path(out) if out else None
    pairs = []
    for r in run_dirs:
        rec = RunRecord.load(r)
        hdr, x = read_samples_csv(r / rec.files.get("samples", "samples.csv"))
        if hdr != names:
            raise ConfigError(f"run {str(r)!r} has parameters {hdr}, reference has {names}")
        st = marginal_stats(x)
        label = f"{rec.config.get('method')}-s{rec.config.get('seed')}:{r.name}"
        report["runs"][label] = {
            "method": rec.config.get("method"),
            "k_hat": (rec.psis or {}).get("k_hat"),
            "verdict": (rec.psis or {}).get("verdict"),
            "kl": rec.kl,
            "delta": {k: (np.asarray(st[k]) - np.asarray(ref_stats[k])).tolist() for k in st},
        }
        pairs.append((label, x))
    if out_dir is not None:
        rows = [[i, *row] for i, (_, x) in enumerate([("reference", ref_x)] + pairs) for row in x]
        write_csv(out_dir / "pairs.csv", ["source", *names], rows)
        report["sources"] = ["reference"] + [lbl for lbl, _ in pairs]
        atomic_write_text(out_dir / "comparison.json", dump_json(report))
    return report
