from .tensor import (
    Tensor,
    concat,
    conv1d,
    conv1d_out_length,
    cross_entropy,
    default_dtype,
    embedding,
    layer_norm,
    matmul,
    precision,
    relu,
    set_default_dtype,
    softmax,
    stop_gradient,
)
from .rng import RngHub, sample_gaussian, substream
from .optim import Adam, adam_step
from .gradcheck import grad_check

__all__ = [
    "Adam",
    "RngHub",
    "Tensor",
    "adam_step",
    "concat",
    "conv1d",
    "conv1d_out_length",
    "cross_entropy",
    "default_dtype",
    "embedding",
    "grad_check",
    "layer_norm",
    "matmul",
    "precision",
    "relu",
    "sample_gaussian",
    "set_default_dtype",
    "softmax",
    "stop_gradient",
    "substream",
]
