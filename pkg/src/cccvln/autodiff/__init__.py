from .params import (
    CheckpointError,
    NonFiniteGradient,
    ParamStore,
    decode_container,
    encode_container,
    global_norm,
    sgd_step,
    split_grads,
)
from .tensor import ShapeError, Tape, Tensor, backward, constant, stop_gradient

__all__ = [
    "CheckpointError",
    "NonFiniteGradient",
    "ParamStore",
    "ShapeError",
    "Tape",
    "Tensor",
    "backward",
    "constant",
    "decode_container",
    "encode_container",
    "global_norm",
    "sgd_step",
    "split_grads",
    "stop_gradient",
]
