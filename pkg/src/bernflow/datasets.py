"""Datasets: a thin column container plus CSV / JSON ingestion."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Dataset:
    columns: dict

    def __post_init__(self):
        cols = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        lengths = {k: len(v) for k, v in cols.items()}
        if len(set(lengths.values())) > 1:
            short = min(lengths, key=lengths.get)
            raise DataError(f"column lengths disagree ({lengths}); column {short!r} is short")
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name):
        return self.columns[name]

    def __contains__(self, name):
        return name in self.columns

    def subset(self, idx) -> "Dataset":
        return Dataset({k: v[idx] for k, v in self.columns.items()})

    def matrix(self, names) -> np.ndarray:
        return np.column_stack([self.columns[k] for k in names])


# Expected columns per schema; None means "any header, at least one column".
SCHEMAS = {
    "bernoulli": ["y"],
    "cauchy": ["y"],
    "toy_linreg": ["x1", "x2", "y"],
    "bnn_regression": ["x", "y"],
    "eight_schools": ["y", "sigma"],
    "diamonds": ["Y"],
    "csv": None,
}

BUNDLED = {
    "bernoulli": "bernoulli.csv",
    "cauchy": "cauchy.csv",
    "toy_linreg": "toy_linreg.csv",
    "bnn_regression": "bnn_regression.csv",
    "eight_schools": "eight_schools.json",
    "diamonds": "diamonds.csv",
}


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("bernflow") / "data" / BUNDLED[name]))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_csv(path: Path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(header):
                missing = header[len(row)]
                raise DataError(f"{path}:{lineno}: row is short, column {missing!r} missing")
            for h, cell in zip(header, row):
                try:
                    cols[h].append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {h!r} is not numeric: {cell!r}") from None
    return cols


def ingest(path, schema: str = "csv") -> Dataset:
    """Load and validate a dataset file against a named schema."""
    path = Path(path)
    if schema not in SCHEMAS:
        raise DataError(f"unknown schema {schema!r}; valid: {sorted(SCHEMAS)}")
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise DataError(f"{path}: expected a JSON object of columns")
        cols = raw
    else:
        cols = _read_csv(path)
    expected = SCHEMAS[schema]
    if expected is not None:
        for name in expected:
            if name not in cols:
                raise DataError(f"{path}: missing column {name!r}")
    return Dataset(cols)


def load_bundled(name: str) -> Dataset:
    return ingest(bundled_path(name), name)
