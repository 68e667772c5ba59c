"""Drifting multi-domain datasets: rotated two-moons, drifting linear
regression, and CSV ingestion with domain splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

# Base moons are centred on this point before rotation.
MOONS_CENTER = np.array([0.5, 0.25])


@dataclass
class DomainDataset:
    features: np.ndarray
    labels: np.ndarray
    domain_index: int
    task: str = "classification"
    timestamp: Optional[float] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("a domain needs at least one row")
        if self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} does not match {n} rows")
        if np.isnan(self.features).any() or np.isnan(self.labels).any():
            raise ValueError(f"domain {self.domain_index}: NaN in data")
        if self.task == "classification" and not np.isin(self.labels, (0.0, 1.0)).all():
            raise ValueError(f"domain {self.domain_index}: classification labels must be 0/1")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def rotation_matrix(degrees: float) -> np.ndarray:
    t = np.deg2rad(degrees)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def _domain_rng(seed: int, s: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, s]))


def base_moons(n_per_domain: int, noise_sigma: float, rng: np.random.Generator,
               centered: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Two-moons sample: upper moon (label 1) is (cos t, sin t), lower moon
    (label 0) is (1 - cos t, 0.5 - sin t), t ~ U[0, pi]. With ``centered``
    the pair is shifted so its centre (0.5, 0.25) sits at the origin."""
    half = n_per_domain // 2
    t_up = rng.uniform(0.0, np.pi, half)
    t_lo = rng.uniform(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t_up), np.sin(t_up)])
    lower = np.column_stack([1.0 - np.cos(t_lo), 0.5 - np.sin(t_lo)])
    x = np.vstack([lower, upper]) + rng.normal(0.0, noise_sigma, size=(2 * half, 2))
    y = np.concatenate([np.zeros(half), np.ones(half)])
    return (x - MOONS_CENTER if centered else x), y


def make_rotated_moons(num_domains: int = 10, n_per_domain: int = 200, step_degrees: float = 18.0,
                       noise_sigma: float = 0.1, seed: int = 0, centered: bool = True) -> List[DomainDataset]:
    """Domain ``s`` is a fresh base sample rotated counter-clockwise by
    ``s * step_degrees`` about the origin."""
    if num_domains < 1:
        raise ValueError("num_domains must be >= 1")
    if n_per_domain < 2 or n_per_domain % 2:
        raise ValueError(f"n_per_domain must be even and >= 2, got {n_per_domain}")
    out = []
    for s in range(num_domains):
        x, y = base_moons(n_per_domain, noise_sigma, _domain_rng(seed, s), centered)
        if s:
            x = x @ rotation_matrix(s * step_degrees).T
        out.append(DomainDataset(x, y, s, "classification", float(s)))
    return out


def make_drifting_regression(num_domains: int = 10, n: int = 200, drift_rate: float = 0.1,
                             noise_sigma: float = 0.0, seed: int = 0, dim: int = 1,
                             w0: Optional[Sequence[float]] = None, bias: float = 0.0) -> List[DomainDataset]:
    """``y = w_s . x + bias + noise`` with ``w_s = w0 + s * drift_rate`` in
    every coordinate and ``x ~ N(0, I)``.

    The one-step drift error of the exact ``w_s`` on domain ``s + 1`` is
    therefore ``drift_rate * E|sum_j x_j| = drift_rate * sqrt(2 dim / pi)``.
    """
    if num_domains < 1 or n < 1 or dim < 1:
        raise ValueError("num_domains, n and dim must be >= 1")
    base = np.ones(dim) if w0 is None else np.asarray(w0, dtype=np.float64)
    if base.shape != (dim,):
        raise ValueError(f"w0 must have length {dim}")
    out = []
    for s in range(num_domains):
        rng = _domain_rng(seed, s)
        x = rng.standard_normal((n, dim))
        w = true_regression_weights(base, drift_rate, s)
        y = x @ w + bias + rng.normal(0.0, noise_sigma, n) if noise_sigma > 0 else x @ w + bias
        out.append(DomainDataset(x, y, s, "regression", float(s)))
    return out


def true_regression_weights(w0: np.ndarray, drift_rate: float, s: int) -> np.ndarray:
    return np.asarray(w0, dtype=np.float64) + s * drift_rate


@dataclass
class DatasetSpec:
    """Where a domain sequence comes from and how it is split.

    ``source`` is one of ``moons``, ``synth_regression`` or ``csv``; ``params``
    holds the source-specific keyword arguments.
    """

    source: str
    train_domains: List[int]
    test_domain: int
    params: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in ("moons", "synth_regression", "csv"):
            raise ValueError(f"unknown dataset source {self.source!r}")
        if self.test_domain in self.train_domains:
            raise ValueError(f"test domain {self.test_domain} is also a train domain")
        if list(self.train_domains) != sorted(self.train_domains):
            raise ValueError("train_domains must be sorted ascending")

    @property
    def task(self) -> str:
        if self.source == "moons":
            return "classification"
        if self.source == "synth_regression":
            return "regression"
        return self.params.get("task", "classification")


class CSVFormatError(ValueError):
    pass


def _parse_float(cell: str, row: int, column: str, path: Path) -> float:
    try:
        return float(cell)
    except ValueError:
        raise CSVFormatError(f"{path}: row {row}, column {column!r}: not a number: {cell!r}") from None


def load_csv(spec: DatasetSpec) -> List[DomainDataset]:
    """Read a header-ed UTF-8 CSV and split it into domains.

    Recognised ``spec.params`` keys: ``path``, ``feature_columns``,
    ``label_column``, and either ``domain_column`` (each distinct value is one
    domain, ordered numerically) or ``time_column`` with ``boundaries``
    (sorted cut points; domain k holds ``boundaries[k-1] <= t < boundaries[k]``).
    With ``normalize = true`` features are z-scored using train domains only.

    Row numbers in errors count data rows from 1, header excluded.
    """
    p = spec.params
    path = Path(p["path"])
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    feature_cols = list(p["feature_columns"])
    label_col = p["label_column"]
    domain_col = p.get("domain_column")
    time_col = p.get("time_column")
    if (domain_col is None) == (time_col is None):
        raise ValueError("csv spec needs exactly one of domain_column or time_column")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = feature_cols + [label_col, domain_col or time_col]
        missing = [c for c in needed if c not in header]
        if missing:
            raise CSVFormatError(f"{path}: missing column(s) {missing}")
        feats, labels, keys = [], [], []
        for row_no, row in enumerate(reader, start=1):
            feats.append([_parse_float(row[c], row_no, c, path) for c in feature_cols])
            labels.append(_parse_float(row[label_col], row_no, label_col, path))
            keys.append(_parse_float(row[domain_col or time_col], row_no, domain_col or time_col, path))
    x = np.array(feats, dtype=np.float64).reshape(len(feats), len(feature_cols))
    y = np.array(labels, dtype=np.float64)
    k = np.array(keys, dtype=np.float64)
    if domain_col is not None:
        values = np.unique(k)
        domain_of = np.searchsorted(values, k)
        stamps = list(values)
    else:
        bounds = np.asarray(p["boundaries"], dtype=np.float64)
        if np.any(np.diff(bounds) <= 0):
            raise ValueError("boundaries must be strictly increasing")
        domain_of = np.searchsorted(bounds, k, side="right")
        stamps = [None] * (len(bounds) + 1)
    if p.get("normalize", False):
        train_mask = np.isin(domain_of, spec.train_domains)
        if not train_mask.any():
            raise ValueError("normalization requested but no rows fall in train domains")
        mu = x[train_mask].mean(axis=0)
        sd = x[train_mask].std(axis=0)
        sd[sd == 0] = 1.0
        x = (x - mu) / sd
    task = spec.task
    out = []
    for d in sorted(set(domain_of.tolist())):
        m = domain_of == d
        ts = stamps[d] if d < len(stamps) else None
        out.append(DomainDataset(x[m], y[m], int(d), task, None if ts is None else float(ts)))
    return out


def build_domains(spec: DatasetSpec, seed: int = 0) -> Dict[int, DomainDataset]:
    """Materialize every domain of ``spec`` keyed by domain index."""
    if spec.source == "moons":
        domains = make_rotated_moons(seed=seed, **spec.params)
    elif spec.source == "synth_regression":
        domains = make_drifting_regression(seed=seed, **spec.params)
    else:
        domains = load_csv(spec)
    by_index = {d.domain_index: d for d in domains}
    for s in list(spec.train_domains) + [spec.test_domain]:
        if s not in by_index:
            raise ValueError(f"domain {s} not present in dataset ({sorted(by_index)})")
    return by_index


def write_domain_csv(path: Path, dataset: DomainDataset) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(dataset.dim)] + ["label", "domain"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [repr(float(label)), dataset.domain_index])
