"""Variance network and the group-contrastive training objective.

Each embedding becomes a diagonal Gaussian whose mean is the embedding itself
and whose log-variance is predicted by a 3-layer ReLU MLP. A group of ``2m``
embeddings is split in two halves; each half is fused by product of experts
and the two fused means are compared, either by a plain dot product or by a
temperature-scaled InfoNCE over all groups in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from dumkit.gaussian import DiagGaussian, poe, poe_grad
from dumkit.numkernel import (
    DTYPE,
    DimensionError,
    NonFiniteError,
    ParamTensor,
    elementwise_backward,
    linear,
    linear_backward,
    relu,
)

LOGVAR_MIN = -13.8
LOGVAR_MAX = 13.8
LAYER_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


class VarianceNet:
    """MLP ``d -> h -> h -> d`` predicting per-dimension log-variance.

    Weights are stored as ``(fan_in, fan_out)`` so a batch of row vectors maps
    as ``x @ w + b``.
    """

    def __init__(self, params: dict[str, ParamTensor]):
        missing = [k for k in LAYER_ORDER if k not in params]
        if missing:
            raise KeyError(f"missing parameters {missing}")
        d, h = params["w1"].value.shape
        expected = {"w1": (d, h), "b1": (h,), "w2": (h, h), "b2": (h,), "w3": (h, d), "b3": (d,)}
        for name, shape in expected.items():
            if params[name].value.shape != shape:
                raise DimensionError(f"{name} has shape {params[name].value.shape}, expected {shape}")
        self.params = {k: params[k] for k in LAYER_ORDER}

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator, zero_last: bool = True) -> "VarianceNet":
        """He-uniform fan-in init. With ``zero_last`` every variance starts at 1."""
        if d < 1 or hidden < 1:
            raise ValueError(f"d and hidden must be positive, got {d}, {hidden}")

        def he(fan_in, fan_out):
            lim = np.sqrt(6.0 / fan_in)
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        w3 = np.zeros((hidden, d)) if zero_last else he(hidden, d)
        values = {
            "w1": he(d, hidden),
            "b1": np.zeros(hidden),
            "w2": he(hidden, hidden),
            "b2": np.zeros(hidden),
            "w3": w3,
            "b3": np.zeros(d),
        }
        return cls({k: ParamTensor(v) for k, v in values.items()})

    @property
    def dim(self) -> int:
        return self.params["w1"].value.shape[0]

    @property
    def hidden(self) -> int:
        return self.params["w1"].value.shape[1]

    def copy(self) -> "VarianceNet":
        return VarianceNet({k: ParamTensor(p.value.copy()) for k, p in self.params.items()})

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, x: np.ndarray):
        """Raw (unclamped) log-variance for rows of ``x`` plus a backward cache."""
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError(f"expected rows of dimension {self.dim}, got shape {x.shape}")
        p = {k: v.value for k, v in self.params.items()}
        a1 = linear(x, p["w1"], p["b1"])
        h1 = relu(a1)
        a2 = linear(h1, p["w2"], p["b2"])
        h2 = relu(a2)
        out = linear(h2, p["w3"], p["b3"])
        return out, (x, a1, h1, a2, h2)

    def log_variance(self, x: np.ndarray) -> np.ndarray:
        return np.clip(self.forward(x)[0], LOGVAR_MIN, LOGVAR_MAX)

    def variance(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_variance(x))

    def backward(self, cache, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients given dLoss/d(raw log-variance)."""
        x, a1, h1, a2, h2 = cache
        p = {k: v.value for k, v in self.params.items()}
        g_h2, g_w3, g_b3 = linear_backward(grad_out, h2, p["w3"])
        g_a2 = elementwise_backward("relu", g_h2, a2)
        g_h1, g_w2, g_b2 = linear_backward(g_a2, h1, p["w2"])
        g_a1 = elementwise_backward("relu", g_h1, a1)
        _, g_w1, g_b1 = linear_backward(g_a1, x, p["w1"])
        for name, g in zip(LAYER_ORDER, (g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)):
            self.params[name].grad += g

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self.params.items()}


def encode_expert(net: VarianceNet, embedding) -> DiagGaussian:
    """Gaussian centred exactly on ``embedding`` with network-predicted variance."""
    e = np.asarray(embedding, dtype=DTYPE)
    if e.ndim != 1 or e.shape[0] != net.dim:
        raise DimensionError(f"embedding must be a vector of length {net.dim}, got shape {e.shape}")
    return DiagGaussian(mean=e, variance=net.variance(e[None, :])[0])


@dataclass
class GroupBatch:
    """``B`` groups of ``2m`` embeddings, shape ``(B, 2m, d)``.

    ``indices`` optionally records which data rows formed each group.
    """

    groups: np.ndarray
    m: int
    indices: np.ndarray | None = None

    def __post_init__(self):
        self.groups = np.asarray(self.groups, dtype=DTYPE)
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.groups.ndim != 3 or self.groups.shape[1] != 2 * self.m:
            raise DimensionError(f"groups must have shape (B, {2 * self.m}, d), got {self.groups.shape}")
        if self.groups.shape[0] < 1:
            raise ValueError("a batch needs at least one group")

    @property
    def size(self) -> int:
        return self.groups.shape[0]

    @property
    def first_half(self) -> np.ndarray:
        return self.groups[:, : self.m]

    @property
    def second_half(self) -> np.ndarray:
        return self.groups[:, self.m :]

    def __getitem__(self, sl: slice) -> "GroupBatch":
        idx = None if self.indices is None else self.indices[sl]
        return GroupBatch(self.groups[sl], self.m, idx)


@dataclass(frozen=True)
class LossConfig:
    variant: Literal["plain", "infonce"] = "plain"
    temperature: float = 0.07
    normalize_poe_means: bool = False

    def __post_init__(self):
        if self.variant not in ("plain", "infonce"):
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


def _fused_means(batch: GroupBatch, net: VarianceNet):
    b, two_m, d = batch.groups.shape
    raw, cache = net.forward(batch.groups.reshape(-1, d))
    var = np.exp(np.clip(raw, LOGVAR_MIN, LOGVAR_MAX)).reshape(b, two_m, d)
    m = batch.m
    z_a, _ = poe(batch.first_half, var[:, :m])
    z_b, _ = poe(batch.second_half, var[:, m:])
    return z_a, z_b, (raw, var, cache)


def _normalize(z: np.ndarray):
    norm = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    return z / norm, norm


def _normalize_backward(g_u: np.ndarray, u: np.ndarray, norm: np.ndarray) -> np.ndarray:
    return (g_u - u * np.sum(u * g_u, axis=1, keepdims=True)) / norm


def _backprop(batch: GroupBatch, net: VarianceNet, g_za: np.ndarray, g_zb: np.ndarray, fwd) -> None:
    raw, var, cache = fwd
    m = batch.m
    zeros = np.zeros_like(g_za)
    _, g_var_a = poe_grad(batch.first_half, var[:, :m], g_za, zeros)
    _, g_var_b = poe_grad(batch.second_half, var[:, m:], g_zb, zeros)
    g_var = np.concatenate([g_var_a, g_var_b], axis=1).reshape(raw.shape)
    g_raw = g_var * var.reshape(raw.shape)
    g_raw = np.where((raw >= LOGVAR_MIN) & (raw <= LOGVAR_MAX), g_raw, 0.0)
    net.backward(cache, g_raw)


def _check_finite(loss: float, what: str) -> None:
    if not np.isfinite(loss):
        raise NonFiniteError(f"{what} loss is not finite ({loss})")


def dum_loss_plain(batch: GroupBatch, net: VarianceNet, cfg: LossConfig | None = None) -> float:
    """Negated mean dot product between the two fused halves of each group.

    Gradients are accumulated into ``net``'s parameter tensors.
    """
    cfg = cfg or LossConfig(variant="plain")
    z_a, z_b, fwd = _fused_means(batch, net)
    if cfg.normalize_poe_means:
        u_a, n_a = _normalize(z_a)
        u_b, n_b = _normalize(z_b)
    else:
        u_a, u_b = z_a, z_b
    bsz = batch.size
    loss = -float(np.sum(u_a * u_b)) / bsz
    _check_finite(loss, "plain")
    g_ua, g_ub = -u_b / bsz, -u_a / bsz
    if cfg.normalize_poe_means:
        g_ua = _normalize_backward(g_ua, u_a, n_a)
        g_ub = _normalize_backward(g_ub, u_b, n_b)
    _backprop(batch, net, g_ua, g_ub, fwd)
    return loss


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def dum_loss_infonce(batch: GroupBatch, net: VarianceNet, cfg: LossConfig | None = None) -> float:
    """Symmetric InfoNCE over fused means; other groups in the batch are negatives.

    Logits are ``z_a(i) . z_b(j) / temperature``; the loss averages the
    row-wise and column-wise cross-entropies with targets on the diagonal.
    """
    cfg = cfg or LossConfig(variant="infonce")
    if batch.size < 2:
        raise ValueError("InfoNCE needs at least 2 groups per batch; use the plain variant for B=1")
    z_a, z_b, fwd = _fused_means(batch, net)
    if cfg.normalize_poe_means:
        u_a, n_a = _normalize(z_a)
        u_b, n_b = _normalize(z_b)
    else:
        u_a, u_b = z_a, z_b
    tau = cfg.temperature
    bsz = batch.size
    logits = u_a @ u_b.T / tau
    ls_rows = _log_softmax(logits)
    ls_cols = _log_softmax(logits.T)
    loss = -0.5 * (np.trace(ls_rows) + np.trace(ls_cols)) / bsz
    _check_finite(loss, "infonce")

    eye = np.eye(bsz)
    g_logits = 0.5 / bsz * ((np.exp(ls_rows) - eye) + (np.exp(ls_cols) - eye).T)
    g_ua = g_logits @ u_b / tau
    g_ub = g_logits.T @ u_a / tau
    if cfg.normalize_poe_means:
        g_ua = _normalize_backward(g_ua, u_a, n_a)
        g_ub = _normalize_backward(g_ub, u_b, n_b)
    _backprop(batch, net, g_ua, g_ub, fwd)
    return float(loss)


def dum_loss(batch: GroupBatch, net: VarianceNet, cfg: LossConfig) -> float:
    if cfg.variant == "plain":
        return dum_loss_plain(batch, net, cfg)
    return dum_loss_infonce(batch, net, cfg)
