"""Dataset ingestion and partitioning.

CSV in, header row required, every cell numeric, last column is the
label. Dataset.n counts all columns including the label, matching how
the evaluation tables describe row dimensionality; the math uses
n_features = n - 1. A parse failure names the offending row and column.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class Dataset:
    name: str
    header: list[str]
    rows: list[list[float]]  # feature part only
    labels: list[float]

    @property
    def n(self) -> int:
        """Column count including the label column."""
        return len(self.header)

    @property
    def n_features(self) -> int:
        return len(self.header) - 1

    @property
    def d(self) -> int:
        return len(self.rows)


def load_dataset(
    path: str, name: str | None = None, columns: list[str] | None = None
) -> Dataset:
    """Parse a CSV file into a Dataset.

    columns, when given, selects a subset of feature columns by header
    name; the label column is always the last one in the file and is
    always kept.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise ConfigError(f"{path}: need at least one feature column and a label")
        keep = list(range(len(header) - 1))
        if columns is not None:
            missing = [c for c in columns if c not in header[:-1]]
            if missing:
                raise ConfigError(f"{path}: unknown feature columns {missing}")
            keep = [header.index(c) for c in columns]
        rows, labels = [], []
        for r, rec in enumerate(reader, start=2):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            if len(rec) != len(header):
                raise ConfigError(
                    f"{path}: row {r} has {len(rec)} cells, header has {len(header)}"
                )
            vals = []
            for c, cell in enumerate(rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise ConfigError(
                        f"{path}: row {r}, column {header[c]!r}: "
                        f"non-numeric cell {cell.strip()!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ConfigError(
                        f"{path}: row {r}, column {header[c]!r}: non-finite value"
                    )
                vals.append(v)
            rows.append([vals[i] for i in keep])
            labels.append(vals[-1])
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    kept_header = [header[i] for i in keep] + [header[-1]]
    return Dataset(name or path, kept_header, rows, labels)


def partition(
    ds: Dataset, m: int, ell: int, split_ratio: float = 0.7, seed: int = 0
) -> tuple[dict[int, tuple[list[list[float]], list[float]]], list[list[float]], list[float]]:
    """Shuffle, split, and hand each of m users exactly ell training points.

    The training split must cover m*ell points; whatever remains of it is
    discarded, and everything past the split is the test set.
    """
    if not 0 < split_ratio < 1:
        raise ConfigError("split ratio must be in (0, 1)")
    train_count = math.floor(split_ratio * ds.d)
    if m * ell > train_count:
        raise ConfigError(
            f"insufficient data: {m} users x {ell} points needs {m * ell} "
            f"training rows but the {split_ratio:.2f} split of {ds.d} rows "
            f"gives only {train_count}"
        )
    order = list(range(ds.d))
    random.Random(seed).shuffle(order)
    users = {}
    for u in range(m):
        idx = order[u * ell : (u + 1) * ell]
        users[u] = ([list(ds.rows[i]) for i in idx], [ds.labels[i] for i in idx])
    test_idx = order[train_count:]
    test_rows = [list(ds.rows[i]) for i in test_idx]
    test_labels = [ds.labels[i] for i in test_idx]
    return users, test_rows, test_labels


def gen_synthetic(
    kind: str,
    n_features: int,
    n_rows: int,
    seed: int = 0,
    theta: list[float] | None = None,
    noise: float = 0.0,
    name: str = "synthetic",
) -> Dataset:
    """Draw rows from a known generative model, for demos and oracles.

    Features are uniform in [-1, 1]. Linear labels are theta_0 + theta.x
    plus uniform noise; logistic labels are Bernoulli with the sigmoid of
    that score as the success probability.
    """
    rng = random.Random(seed)
    if theta is None:
        theta = [rng.uniform(-1, 1) for _ in range(n_features + 1)]
    if len(theta) != n_features + 1:
        raise ConfigError(f"theta needs {n_features + 1} coordinates")
    rows, labels = [], []
    for _ in range(n_rows):
        x = [rng.uniform(-1, 1) for _ in range(n_features)]
        score = theta[0] + sum(t * v for t, v in zip(theta[1:], x))
        if kind == "logistic":
            p = 1.0 / (1.0 + math.exp(-score))
            y = 1.0 if rng.random() < p else 0.0
        else:
            y = score + rng.uniform(-noise, noise)
        rows.append(x)
        labels.append(y)
    header = [f"x{j}" for j in range(1, n_features + 1)] + ["y"]
    return Dataset(name, header, rows, labels)
