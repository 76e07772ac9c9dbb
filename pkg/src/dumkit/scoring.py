"""Per-example uncertainty scores from a trained variance network."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from dumkit.dum import VarianceNet
from dumkit.numkernel import DTYPE, DimensionError

NORMS = ("l2", "l1", "max")


@dataclass
class ScoredDataset:
    index: np.ndarray
    score: np.ndarray
    label: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.score)


def variance_norm(var: np.ndarray, norm: str = "l2") -> np.ndarray:
    """Row-wise norm of diagonal covariances; ``l2`` is the Frobenius norm."""
    if norm == "l2":
        return np.sqrt(np.sum(var * var, axis=1))
    if norm == "l1":
        return np.sum(np.abs(var), axis=1)
    if norm == "max":
        return np.max(np.abs(var), axis=1)
    raise ValueError(f"unknown norm {norm!r}; choose from {NORMS}")


def score(net: VarianceNet, x, labels=None, norm: str = "l2", chunk: int = 4096) -> ScoredDataset:
    """Covariance-norm score for every row of ``x``; higher means less certain."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != net.dim:
        raise DimensionError(f"model expects {net.dim} features, data has shape {x.shape}")
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], chunk):
        out[start : start + chunk] = variance_norm(net.variance(x[start : start + chunk]), norm)
    lab = None if labels is None else np.asarray(labels, dtype=np.int64)
    return ScoredDataset(np.arange(x.shape[0]), out, lab)


def write_scores(scored: ScoredDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "score"] + (["label"] if scored.label is not None else []))
        for i in range(len(scored)):
            row = [str(int(scored.index[i])), format(float(scored.score[i]), ".17g")]
            if scored.label is not None:
                row.append(str(int(scored.label[i])))
            w.writerow(row)


def read_scores(path) -> ScoredDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["index", "score"]:
        raise ValueError(f"{path}: expected a header starting with 'index,score'")
    has_label = len(rows[0]) > 2 and rows[0][2] == "label"
    body = rows[1:]
    idx = np.array([int(r[0]) for r in body], dtype=np.int64)
    sc = np.array([float(r[1]) for r in body])
    lab = np.array([int(r[2]) for r in body], dtype=np.int64) if has_label else None
    return ScoredDataset(idx, sc, lab)
