from achelous.training.config import TrainConfig
from achelous.training.losses import LogVariances, TaskLosses, total_loss
from achelous.training.trainer import Trainer, compute_losses, run_training, train_step

__all__ = [
    "LogVariances",
    "TaskLosses",
    "TrainConfig",
    "Trainer",
    "compute_losses",
    "run_training",
    "total_loss",
    "train_step",
]
