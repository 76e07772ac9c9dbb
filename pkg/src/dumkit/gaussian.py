"""Diagonal Gaussians and their product-of-experts fusion.

The product of ``m`` Gaussians with means ``mu_i`` and diagonal variances
``v_i`` is Gaussian with, per dimension,

    precision = sum_i 1 / v_i
    variance  = 1 / precision
    mean      = (sum_i mu_i / v_i) / precision

The array functions take an expert axis at position -2, so a stack of shape
``(..., m, d)`` fuses to ``(..., d)``; this is the form used in training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dumkit.numkernel import DTYPE, DimensionError

VAR_MIN = 1e-6
VAR_MAX = 1e6


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=DTYPE)
        var = np.asarray(self.variance, dtype=DTYPE)
        if mean.ndim != 1 or mean.shape != var.shape:
            raise DimensionError(f"mean {mean.shape} and variance {var.shape} must be equal-length vectors")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean has non-finite entries")
        if not np.all(var > 0) or not np.all(np.isfinite(var)):
            raise ValueError("variance entries must be finite and > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / clamp_variance(self.variance)


@dataclass(frozen=True)
class PoEGaussian:
    mean: np.ndarray
    variance: np.ndarray
    expert_count: int


def clamp_variance(v: np.ndarray) -> np.ndarray:
    return np.clip(v, VAR_MIN, VAR_MAX)


def _ordered_sum(terms: np.ndarray) -> np.ndarray:
    # Summing in ascending order along the expert axis makes the result
    # independent of how the experts were ordered on input.
    return np.sort(terms, axis=-2).sum(axis=-2)


def poe(means: np.ndarray, variances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fuse experts stacked along axis -2. Returns ``(mean, variance)``."""
    means = np.asarray(means, dtype=DTYPE)
    variances = np.asarray(variances, dtype=DTYPE)
    if means.shape != variances.shape or means.ndim < 2:
        raise DimensionError(f"means {means.shape} and variances {variances.shape} must match, ndim >= 2")
    if means.shape[-2] == 0:
        raise ValueError("need at least one expert")
    v = clamp_variance(variances)
    if means.shape[-2] == 1:
        return means[..., 0, :].copy(), v[..., 0, :].copy()
    prec = 1.0 / v
    total = _ordered_sum(prec)
    mean = _ordered_sum(means * prec) / total
    # rounding can push the ratio a hair outside the convex hull of the means
    mean = np.clip(mean, means.min(axis=-2), means.max(axis=-2))
    return mean, 1.0 / total


def poe_grad(means, variances, grad_mean, grad_var) -> tuple[np.ndarray, np.ndarray]:
    """Backward pass of :func:`poe`.

    Given upstream gradients on the fused mean and variance (shape
    ``(..., d)``), returns gradients on every expert's mean and variance
    (shape ``(..., m, d)``). Variances sitting outside the clamp range get
    zero gradient.
    """
    means = np.asarray(means, dtype=DTYPE)
    variances = np.asarray(variances, dtype=DTYPE)
    gm = np.asarray(grad_mean, dtype=DTYPE)[..., None, :]
    gv = np.asarray(grad_var, dtype=DTYPE)[..., None, :]
    inside = (variances >= VAR_MIN) & (variances <= VAR_MAX)
    if means.shape[-2] == 1:
        # identity map; the general formula would leave rounding residue
        return gm + np.zeros_like(means), np.where(inside, gv, 0.0)

    v = clamp_variance(variances)
    prec = 1.0 / v
    total = prec.sum(axis=-2, keepdims=True)
    fused_mean = poe(means, variances)[0][..., None, :]

    g_means = gm * prec / total
    g_prec = gm * (means - fused_mean) / total - gv / total**2
    g_vars = g_prec * (-(prec**2))
    return g_means, np.where(inside, g_vars, 0.0)


def _stack(experts: Sequence[DiagGaussian]) -> tuple[np.ndarray, np.ndarray]:
    if len(experts) == 0:
        raise ValueError("poe_combine needs at least one expert")
    dims = {e.dim for e in experts}
    if len(dims) != 1:
        raise DimensionError(f"experts have differing dimensions {sorted(dims)}")
    return np.stack([e.mean for e in experts]), np.stack([e.variance for e in experts])


def poe_combine(experts: Sequence[DiagGaussian]) -> PoEGaussian:
    means, variances = _stack(experts)
    mean, var = poe(means, variances)
    return PoEGaussian(mean, var, len(experts))


def poe_backward(experts: Sequence[DiagGaussian], grad_mean, grad_var) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-expert ``(grad_mean, grad_variance)`` for upstream grads on the product."""
    means, variances = _stack(experts)
    d = means.shape[1]
    grad_mean = np.asarray(grad_mean, dtype=DTYPE)
    grad_var = np.asarray(grad_var, dtype=DTYPE)
    if grad_mean.shape != (d,) or grad_var.shape != (d,):
        raise DimensionError("upstream gradients must have the experts' dimension")
    g_means, g_vars = poe_grad(means, variances, grad_mean, grad_var)
    return [(g_means[i], g_vars[i]) for i in range(len(experts))]
