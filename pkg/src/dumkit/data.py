"""Tabular ingestion, min-max scaling, vector corruptions and synthetic data."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from dumkit.numkernel import DTYPE


class DataError(ValueError):
    """Input data could not be parsed or is unusable."""


@dataclass
class EmbeddingBatch:
    x: np.ndarray
    labels: np.ndarray | None = None
    columns: list[str] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=DTYPE)
        if self.x.ndim != 2:
            raise DataError(f"expected a 2-D table, got shape {self.x.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.x.shape[0],):
                raise DataError("one label per row required")
        if self.columns is not None and len(self.columns) != self.x.shape[1]:
            raise DataError("column names do not match the number of feature columns")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "EmbeddingBatch":
        labels = None if self.labels is None else self.labels[idx]
        return EmbeddingBatch(self.x[idx], labels, self.columns)


def _parse_float(cell: str, missing: str | None, row: int, col: int, path) -> float:
    s = cell.strip()
    if missing is not None and s == missing:
        return 0.0
    try:
        return float(s)
    except ValueError:
        raise DataError(f"{path}: row {row}, column {col}: non-numeric value {cell!r}") from None


def _sniff_header(first: list[str], skip: set[int], missing: str | None) -> bool:
    for i, cell in enumerate(first):
        if i in skip or (missing is not None and cell.strip() == missing):
            continue
        try:
            float(cell)
        except ValueError:
            return True
    return False


def load_csv(
    path,
    label_column: str | int | None = None,
    missing_token: str | None = None,
    positive_label: str | None = None,
    delimiter: str = ",",
    header: bool | None = None,
) -> EmbeddingBatch:
    """Read a delimited numeric table.

    Args:
        label_column: header name or 0-based index of a column to pull out as
            labels. Without ``positive_label`` its values must be 0/1;
            otherwise cells equal to ``positive_label`` become 1, the rest 0.
        missing_token: cell text that stands for a missing value; read as 0.
        header: whether the first row holds column names. ``None`` guesses
            from whether any first-row feature cell fails to parse as a
            number (missing tokens and a label column given by index are
            ignored).

    Raises:
        DataError: on ragged rows, non-numeric cells, or a bad label column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    text = path.read_text()
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    if header is None:
        # a numeric label index or missing-value cells should not make row 0 look like names
        skip = {int(label_column)} if isinstance(label_column, int) or str(label_column).isdigit() else set()
        header = _sniff_header(rows[0], skip, missing_token)
    names = [c.strip() for c in rows[0]] if header else [f"x{i}" for i in range(len(rows[0]))]
    body = rows[1:] if header else rows
    width = len(names)

    label_idx = None
    if label_column is not None:
        if isinstance(label_column, int) or (isinstance(label_column, str) and label_column.isdigit() and label_column not in names):
            label_idx = int(label_column)
        elif label_column in names:
            label_idx = names.index(label_column)
        else:
            raise DataError(f"{path}: label column {label_column!r} not found in header {names}")
        if not 0 <= label_idx < width:
            raise DataError(f"{path}: label column index {label_idx} out of range")

    feats = [i for i in range(width) if i != label_idx]
    x = np.empty((len(body), len(feats)), dtype=DTYPE)
    labels = np.empty(len(body), dtype=np.int64) if label_idx is not None else None
    first_line = 2 if header else 1
    for r, row in enumerate(body):
        line = r + first_line
        if len(row) != width:
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {width}")
        for j, c in enumerate(feats):
            x[r, j] = _parse_float(row[c], missing_token, line, c, path)
        if label_idx is not None:
            cell = row[label_idx].strip()
            if positive_label is not None:
                labels[r] = int(cell == positive_label)
            else:
                v = _parse_float(cell, None, line, label_idx, path)
                if v not in (0.0, 1.0):
                    raise DataError(f"{path}: row {line}: label {cell!r} is not 0/1 (set a positive label)")
                labels[r] = int(v)
    return EmbeddingBatch(x, labels, [names[i] for i in feats])


def save_csv(batch: EmbeddingBatch, path, label_name: str = "label") -> None:
    """Write with a header row; floats use 17 significant digits so reloads are exact."""
    cols = batch.columns or [f"x{i}" for i in range(batch.d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + ([label_name] if batch.labels is not None else []))
        for i in range(batch.n):
            row = [format(v, ".17g") for v in batch.x[i]]
            if batch.labels is not None:
                row.append(str(int(batch.labels[i])))
            w.writerow(row)


def minmax_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x.min(axis=0), x.max(axis=0)


def apply_minmax(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Map each column with fixed statistics; columns with ``hi == lo`` become 0."""
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def minmax_scale(batch: EmbeddingBatch) -> EmbeddingBatch:
    """Per-column ``(x - min) / (max - min)``, statistics from the batch itself."""
    lo, hi = minmax_stats(batch.x)
    return replace(batch, x=apply_minmax(batch.x, lo, hi))


# --- corruptions -------------------------------------------------------------

CorruptionKind = Literal["gaussian", "uniform", "impulse", "dropout", "scale", "smooth"]


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    sigma: float = 0.0
    a: float = 0.0
    rate: float = 0.0
    magnitude: float = 1.0
    p: float = 0.0
    c: float = 1.0
    window: int = 1
    seed: int = 0

    def validate(self) -> None:
        checks = {
            "gaussian": self.sigma >= 0,
            "uniform": self.a >= 0,
            "impulse": 0 <= self.rate <= 1 and self.magnitude >= 0,
            "dropout": 0 <= self.p < 1,
            "scale": np.isfinite(self.c),
            "smooth": self.window >= 1,
        }
        if self.kind not in checks:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if not checks[self.kind]:
            raise ValueError(f"invalid parameters for {self.kind} corruption: {self}")


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    # centred window, truncated at the first/last column
    d = x.shape[1]
    left, right = (window - 1) // 2, window // 2
    csum = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    lo = np.clip(np.arange(d) - left, 0, d)
    hi = np.clip(np.arange(d) + right + 1, 0, d)
    return (csum[:, hi] - csum[:, lo]) / (hi - lo)


def corrupt(batch: EmbeddingBatch, spec: CorruptionSpec) -> EmbeddingBatch:
    """Apply one corruption to the feature columns. Labels are passed through untouched."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    x = batch.x
    if spec.kind == "gaussian":
        out = x + rng.normal(0.0, spec.sigma, size=x.shape) if spec.sigma > 0 else x.copy()
    elif spec.kind == "uniform":
        out = x + rng.uniform(-spec.a, spec.a, size=x.shape) if spec.a > 0 else x.copy()
    elif spec.kind == "impulse":
        hit = rng.random(x.shape) < spec.rate
        sign = np.where(rng.random(x.shape) < 0.5, -1.0, 1.0)
        out = np.where(hit, sign * spec.magnitude, x)
    elif spec.kind == "dropout":
        out = np.where(rng.random(x.shape) < spec.p, 0.0, x)
    elif spec.kind == "scale":
        out = x * spec.c
    else:
        out = _moving_average(x, spec.window) if spec.window > 1 else x.copy()
    return replace(batch, x=out)


# --- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian blobs, optionally with uniform-box outliers labelled 1.

    Cluster centres are drawn uniformly from ``[0.2, 0.8]^d``; outliers
    uniformly from ``[box_lo, box_hi]^d``.
    """

    preset: Literal["clusters", "outliers"] = "outliers"
    d: int = 10
    k: int = 3
    spread: float = 0.05
    n_in: int = 2000
    n_out: int = 100
    box_lo: float = 0.0
    box_hi: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.preset not in ("clusters", "outliers"):
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.d < 1 or self.k < 1 or self.n_in < 1 or self.spread < 0 or self.n_out < 0:
            raise ValueError(f"invalid synthetic spec {self}")
        if self.preset == "outliers" and self.n_out >= self.n_in:
            raise ValueError("n_out must be smaller than n_in")
        if self.box_hi <= self.box_lo:
            raise ValueError("outlier box must have box_hi > box_lo")


def synthesize(spec: SynthSpec) -> EmbeddingBatch:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centres = rng.uniform(0.2, 0.8, size=(spec.k, spec.d))
    assign = rng.integers(0, spec.k, size=spec.n_in)
    inliers = centres[assign] + rng.normal(0.0, spec.spread, size=(spec.n_in, spec.d))
    n_out = spec.n_out if spec.preset == "outliers" else 0
    outliers = rng.uniform(spec.box_lo, spec.box_hi, size=(n_out, spec.d))
    x = np.concatenate([inliers, outliers])
    labels = np.concatenate([np.zeros(spec.n_in, dtype=np.int64), np.ones(n_out, dtype=np.int64)])
    order = rng.permutation(len(x))
    return EmbeddingBatch(x[order], labels[order], [f"x{i}" for i in range(spec.d)])


def split(batch: EmbeddingBatch, frac: float, seed: int) -> tuple[EmbeddingBatch, EmbeddingBatch]:
    """Random partition; the first part holds ``round(frac * n)`` rows."""
    if not 0 < frac < 1:
        raise ValueError("split fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(batch.n)
    cut = int(round(frac * batch.n))
    return batch.take(np.sort(order[:cut])), batch.take(np.sort(order[cut:]))
