from . import tensor as ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .nn import ParameterStore
from .optim import AdamState, NonFiniteGradient, adam_step, clip_by_global_norm
from .tensor import Tape, Tensor, record

__all__ = [
    "AdamState", "CheckpointError", "GradCheckReport", "NonFiniteGradient",
    "ParameterStore", "Tape", "Tensor", "adam_step", "clip_by_global_norm",
    "grad_check", "load_checkpoint", "ops", "record", "save_checkpoint",
]
