"""Classical unsupervised outlier scores: k-NN distance, LeSiNN, isolation forest.

All distances are Euclidean and all randomness comes from per-round or
per-tree generators derived from the user seed, so results do not depend on
evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from dumkit.numkernel import DTYPE

EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class BaselineConfig:
    method: Literal["knn", "lesinn", "iforest"] = "knn"
    k: int = 5
    subsample: int = 8
    ensemble: int = 50
    trees: int = 100
    psi: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("knn", "lesinn", "iforest"):
            raise ValueError(f"unknown baseline {self.method!r}")
        if self.k < 1 or self.subsample < 1 or self.ensemble < 1 or self.trees < 1:
            raise ValueError("k, subsample, ensemble and trees must all be >= 1")
        if self.psi is not None and self.psi < 2:
            raise ValueError("isolation forest subsample size must be >= 2")


def _dist_block(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def knn_score(x, k: int, chunk: int = 256) -> np.ndarray:
    """Distance from each row to its k-th nearest other row."""
    x = np.asarray(x, dtype=DTYPE)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n <= k:
        raise ValueError(f"knn needs more than k = {k} rows, got {n}")
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = _dist_block(x[start:stop], x)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return out


def lesinn_score(x, subsample: int = 8, ensemble: int = 50, seed: int = 0) -> np.ndarray:
    """Mean distance to the nearest member of ``ensemble`` random subsamples.

    Each round draws one random ordering of the rows. A row's subsample is the
    first ``subsample`` rows of that ordering, skipping the row itself, so
    every row is compared against ``subsample`` other rows (fewer only when
    ``subsample == n``).
    """
    x = np.asarray(x, dtype=DTYPE)
    n = x.shape[0]
    s = subsample
    if s < 1 or ensemble < 1:
        raise ValueError("subsample and ensemble sizes must be >= 1")
    if n < s:
        raise ValueError(f"lesinn needs at least subsample = {s} rows, got {n}")
    if n < 2:
        raise ValueError("lesinn needs at least two rows")
    total = np.zeros(n)
    for r in range(ensemble):
        perm = np.random.default_rng([seed, r]).permutation(n)
        cand = perm[: min(s + 1, n)]
        d = _dist_block(x, x[cand])
        pos = np.empty(n, dtype=np.int64)
        pos[perm] = np.arange(n)
        in_sample = pos < s
        # rows inside the first s use all s+1 candidates minus themselves;
        # the rest use only the first s
        d[in_sample, pos[in_sample]] = np.inf
        if d.shape[1] > s:
            d[~in_sample, s] = np.inf
        total += d.min(axis=1)
    return total / ensemble


def average_path_length(n) -> np.ndarray:
    """Expected unsuccessful-search path length in a BST of ``n`` nodes."""
    n = np.asarray(n, dtype=DTYPE)
    out = np.zeros_like(n)
    big = n > 2
    nb = n[big]
    out[big] = 2.0 * (np.log(nb - 1.0) + EULER_GAMMA) - 2.0 * (nb - 1.0) / nb
    out[n == 2] = 1.0
    return out


class _IsolationTree:
    def __init__(self, x: np.ndarray, height_limit: int, rng: np.random.Generator):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.size: list[int] = []
        self._grow(x, 0, height_limit, rng)
        self.feature_a = np.array(self.feature)
        self.threshold_a = np.array(self.threshold)
        self.left_a = np.array(self.left)
        self.right_a = np.array(self.right)
        self.leaf_adjust = average_path_length(np.array(self.size))

    def _new_node(self, size: int) -> int:
        for lst, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1), (self.right, -1), (self.size, size)):
            lst.append(v)
        return len(self.size) - 1

    def _grow(self, x: np.ndarray, depth: int, limit: int, rng: np.random.Generator) -> int:
        node = self._new_node(len(x))
        if depth >= limit or len(x) <= 1:
            return node
        lo, hi = x.min(axis=0), x.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if len(splittable) == 0:
            return node
        f = int(splittable[rng.integers(len(splittable))])
        t = float(lo[f] + rng.random() * (hi[f] - lo[f]))
        mask = x[:, f] < t
        if not mask.any():  # rng.random() == 0 exactly
            mask = x[:, f] <= lo[f]
        self.feature[node] = f
        self.threshold[node] = t
        self.left[node] = self._grow(x[mask], depth + 1, limit, rng)
        self.right[node] = self._grow(x[~mask], depth + 1, limit, rng)
        return node

    def path_length(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        depth = np.zeros(len(x))
        active = self.feature_a[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = x[idx, self.feature_a[nd]] < self.threshold_a[nd]
            node[idx] = np.where(go_left, self.left_a[nd], self.right_a[nd])
            depth[idx] += 1
            active = self.feature_a[node] >= 0
        return depth + self.leaf_adjust[node]


def iforest_score(x, trees: int = 100, psi: int | None = None, seed: int = 0) -> np.ndarray:
    """Isolation-forest anomaly score ``2 ** (-E[h(x)] / c(psi))`` in (0, 1)."""
    x = np.asarray(x, dtype=DTYPE)
    n = x.shape[0]
    if n < 2:
        raise ValueError("isolation forest needs at least two rows")
    if trees < 1:
        raise ValueError("trees must be >= 1")
    psi = min(256, n) if psi is None else psi
    if psi < 2:
        raise ValueError("subsample size psi must be >= 2")
    psi = min(psi, n)
    limit = math.ceil(math.log2(psi))
    total = np.zeros(n)
    for t in range(trees):
        rng = np.random.default_rng([seed, t])
        sample = x[rng.choice(n, size=psi, replace=False)]
        total += _IsolationTree(sample, limit, rng).path_length(x)
    return 2.0 ** (-(total / trees) / average_path_length(np.array([psi]))[0])


def baseline_scores(x, cfg: BaselineConfig) -> np.ndarray:
    if cfg.method == "knn":
        return knn_score(x, cfg.k)
    if cfg.method == "lesinn":
        return lesinn_score(x, cfg.subsample, cfg.ensemble, cfg.seed)
    return iforest_score(x, cfg.trees, cfg.psi, cfg.seed)
