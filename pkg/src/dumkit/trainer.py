"""Group sampling, the Adam training loop, and checkpoint files.

Random streams are derived from the user seed plus a fixed purpose tag, so
initialisation, shuffling and augmentation never share draws:

    init        -> (seed, 0)
    shuffling   -> (seed, 1, epoch)
    augmentation-> (seed, 2, epoch)
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from dumkit.dum import LAYER_ORDER, GroupBatch, LossConfig, VarianceNet, dum_loss
from dumkit.numkernel import DTYPE, Adam, NonFiniteError, ParamTensor

logger = logging.getLogger(__name__)

SEED_INIT = 0
SEED_SHUFFLE = 1
SEED_AUGMENT = 2

CHECKPOINT_MAGIC = b"DUMCKPT1"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: {detail}")
        self.epoch = epoch
        self.step = step


class CheckpointFormatError(ValueError):
    """Checkpoint file is malformed or written by an unsupported format version."""


@dataclass(frozen=True)
class AugmentConfig:
    kind: Literal["identity", "jitter", "dropout"] = "identity"
    sigma: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "jitter", "dropout"):
            raise ValueError(f"unknown augmentation {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("jitter sigma must be >= 0")
        if not 0 <= self.p < 1:
            raise ValueError("dropout p must be in [0, 1)")

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "jitter":
            return x + rng.normal(0.0, self.sigma, size=x.shape)
        if self.kind == "dropout":
            return x * (rng.random(x.shape) >= self.p)
        return x


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    m: int = 2
    learning_rate: float = 1e-3
    hidden: int = 4096
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.batch_size < 2 * self.m or self.batch_size % (2 * self.m):
            raise ValueError(f"batch size {self.batch_size} must be a positive multiple of 2m = {2 * self.m}")
        if self.loss.variant == "infonce" and self.batch_size // (2 * self.m) < 2:
            raise ValueError("infonce needs at least two groups per batch (batch_size >= 4m)")
        if self.hidden < 1 or self.learning_rate <= 0:
            raise ValueError("hidden must be >= 1 and learning rate > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss"] = LossConfig(**d.get("loss", {}))
        d["augment"] = AugmentConfig(**d.get("augment", {}))
        return cls(**d)


@dataclass
class Checkpoint:
    net: VarianceNet
    config: dict
    version: int = CHECKPOINT_VERSION

    @property
    def d(self) -> int:
        return self.net.dim

    @property
    def hidden(self) -> int:
        return self.net.hidden


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[float]


def init_net(d: int, cfg: TrainConfig) -> VarianceNet:
    return VarianceNet.init(d, cfg.hidden, np.random.default_rng([cfg.seed, SEED_INIT]))


def make_groups(data: np.ndarray, m: int, seed: int, epoch: int) -> GroupBatch:
    """All groups for one epoch: shuffle, cut consecutive runs of ``2m`` rows, drop the tail."""
    data = np.asarray(data, dtype=DTYPE)
    n = data.shape[0]
    if m < 1:
        raise ValueError("m must be >= 1")
    if n < 2 * m:
        raise ValueError(f"need at least 2m = {2 * m} rows to form a group, got {n}")
    order = np.random.default_rng([seed, SEED_SHUFFLE, epoch]).permutation(n)
    n_groups = n // (2 * m)
    idx = order[: n_groups * 2 * m].reshape(n_groups, 2 * m)
    return GroupBatch(data[idx], m, idx)


def train(data: np.ndarray, cfg: TrainConfig, net: VarianceNet | None = None) -> TrainResult:
    """Fit the variance network on ``data`` (rows are embeddings).

    Returns the final checkpoint and the mean minibatch loss of every epoch.
    Raises :class:`TrainingDiverged` on a non-finite loss or gradient.
    """
    data = np.asarray(data, dtype=DTYPE)
    if data.ndim != 2:
        raise ValueError(f"data must be 2-D, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("data contains non-finite entries")
    net = net if net is not None else init_net(data.shape[1], cfg)
    opt = Adam(net.params, learning_rate=cfg.learning_rate)
    groups_per_batch = cfg.batch_size // (2 * cfg.m)
    min_groups = 2 if cfg.loss.variant == "infonce" else 1
    history: list[float] = []

    for epoch in range(cfg.epochs):
        epoch_groups = make_groups(data, cfg.m, cfg.seed, epoch)
        if cfg.augment.kind != "identity":
            rng = np.random.default_rng([cfg.seed, SEED_AUGMENT, epoch])
            epoch_groups.groups = cfg.augment.apply(epoch_groups.groups, rng)
        losses = []
        for step, start in enumerate(range(0, epoch_groups.size, groups_per_batch)):
            batch = epoch_groups[start : start + groups_per_batch]
            if batch.size < min_groups:
                continue
            opt.zero_grad()
            try:
                loss = dum_loss(batch, net, cfg.loss)
                opt.step()
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch, step, str(exc)) from exc
            losses.append(loss)
        if not losses:
            raise ValueError(f"no usable batch: {epoch_groups.size} groups, need {min_groups} per batch")
        history.append(float(np.mean(losses)))
        logger.info("epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, history[-1])

    return TrainResult(Checkpoint(net, {"train": cfg.to_dict()}), history)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write ``DUMCKPT1``, u32 version/d/h, f64 parameters in layer order, u32-prefixed JSON."""
    blob = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", ckpt.version, ckpt.d, ckpt.hidden))
        for name in LAYER_ORDER:
            fh.write(np.ascontiguousarray(ckpt.net.params[name].value, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def _param_shapes(d: int, h: int) -> dict[str, tuple[int, ...]]:
    return {"w1": (d, h), "b1": (h,), "w2": (h, h), "b2": (h,), "w3": (h, d), "b3": (d,)}


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a DUM checkpoint (bad magic)")
    try:
        version, d, h = struct.unpack_from("<III", raw, 8)
    except struct.error as exc:
        raise CheckpointFormatError(f"{path}: truncated header") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}")
    offset = 20
    params = {}
    for name, shape in _param_shapes(d, h).items():
        count = int(np.prod(shape))
        if offset + 8 * count > len(raw):
            raise CheckpointFormatError(f"{path}: truncated parameter {name}")
        params[name] = ParamTensor(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy())
        offset += 8 * count
    try:
        (n,) = struct.unpack_from("<I", raw, offset)
        config = json.loads(raw[offset + 4 : offset + 4 + n].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: bad config block") from exc
    return Checkpoint(VarianceNet(params), config, version)
