"""Deep uncertainty model: a variance head over fixed embeddings whose
covariance norm scores how atypical an example is."""

from dumkit.dum import GroupBatch, LossConfig, VarianceNet, dum_loss, encode_expert
from dumkit.evaluation import auroc, evaluate, welch_ttest
from dumkit.gaussian import DiagGaussian, poe_combine
from dumkit.scoring import score
from dumkit.trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "DiagGaussian",
    "GroupBatch",
    "LossConfig",
    "TrainConfig",
    "VarianceNet",
    "auroc",
    "dum_loss",
    "encode_expert",
    "evaluate",
    "load_checkpoint",
    "poe_combine",
    "save_checkpoint",
    "score",
    "train",
    "welch_ttest",
]
