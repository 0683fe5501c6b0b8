"""Jointly trained neural collaborative filtering toolkit.

Learns user and item representations and their interaction function in one
network, optimized with a hybrid point-wise + pair-wise loss, and evaluates
top-N recommendation with the 100-negative leave-one-out protocol.
"""

from .data import Interaction, RatingMatrix, SplitDataset, leave_one_out_split, load_dataset
from .losses import LossConfig, TrainingInstance, hybrid_loss
from .model import JointModel, ModelConfig
from .training import TrainConfig, TrainLog, train
from .evaluation import EvalReport, evaluate, evaluate_cohorts

__all__ = [
    "Interaction",
    "RatingMatrix",
    "SplitDataset",
    "leave_one_out_split",
    "load_dataset",
    "LossConfig",
    "TrainingInstance",
    "hybrid_loss",
    "JointModel",
    "ModelConfig",
    "TrainConfig",
    "TrainLog",
    "train",
    "EvalReport",
    "evaluate",
    "evaluate_cohorts",
]

__version__ = "0.1.0"
