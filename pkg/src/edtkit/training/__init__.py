"""Toy-scale pre-training and fine-tuning."""

from .loop import Checkpoint, JsonlLogger, batch_loss, evaluate, finetune, pretrain, synthetic_pool, task_gradients
from .metrics import PSNR_CAP, psnr, psnr_y, rgb_to_y
from .optim import REGIMES, Adam, TrainConfig, adam_step, lr_at

__all__ = [
    "Adam",
    "Checkpoint",
    "JsonlLogger",
    "PSNR_CAP",
    "REGIMES",
    "TrainConfig",
    "adam_step",
    "batch_loss",
    "evaluate",
    "finetune",
    "lr_at",
    "pretrain",
    "psnr",
    "psnr_y",
    "rgb_to_y",
    "synthetic_pool",
    "task_gradients",
]
