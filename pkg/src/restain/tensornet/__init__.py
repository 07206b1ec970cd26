"""Minimal float64 autodiff engine, the re-stainer networks, Adam and checkpoints."""

from .autograd import GraphError, Tensor
from .checkpoint import (CheckpointError, ModelCheckpoint, load_checkpoint, make_checkpoint, restore,
                         save_checkpoint, write_checkpoint)
from .nets import Conv2d, DiscriminatorNet, GeneratorNet, normalize_inputs
from .optim import AdamState, adam_step, lr_decay

__all__ = [
    "AdamState", "CheckpointError", "Conv2d", "DiscriminatorNet", "GeneratorNet", "GraphError",
    "ModelCheckpoint", "Tensor", "adam_step", "load_checkpoint", "lr_decay", "make_checkpoint",
    "normalize_inputs", "restore", "save_checkpoint", "write_checkpoint",
]
