from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .core import (
    Tensor,
    as_tensor,
    debug_mode,
    get_default_dtype,
    grad,
    grad_mode,
    is_grad_enabled,
    no_grad,
    reachable,
    set_default_dtype,
    toposort,
)
from .optim import Adam, adam_step, clip_grad_norm
from .rng import Rng

__all__ = [
    "Tensor", "as_tensor", "grad", "no_grad", "grad_mode", "is_grad_enabled", "debug_mode",
    "reachable", "toposort", "get_default_dtype", "set_default_dtype", "ops", "Adam",
    "adam_step", "clip_grad_norm", "Rng", "save_checkpoint", "load_checkpoint",
]
