"""Deterministic reverse-mode tensor engine: ops, optimizer, checkpointing."""

from .tensor import (
    Tensor,
    no_grad,
    add,
    mul,
    div,
    matmul,
    reshape,
    transpose,
    concat,
    sum_,
    mean,
    exp,
    log,
    sqrt,
    tanh,
    relu,
    assert_finite,
)
from .nn import (
    affine,
    conv1d,
    maxpool1d,
    softmax,
    layer_norm,
    cross_entropy,
    dropout,
    masked_token_fill,
    l2_normalize,
    sinusoid_table,
)
from .params import Param, ParamGroup, Initializer
from .adam import AdamState, adam_step
from .gradcheck import grad_check
from .checkpoint import (
    save_params,
    save_arrays,
    load_arrays,
    save_adam,
    load_adam,
    params_hash,
)

__all__ = [
    "Tensor",
    "no_grad",
    "add",
    "mul",
    "div",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "sum_",
    "mean",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "relu",
    "assert_finite",
    "affine",
    "conv1d",
    "maxpool1d",
    "softmax",
    "layer_norm",
    "cross_entropy",
    "dropout",
    "masked_token_fill",
    "l2_normalize",
    "sinusoid_table",
    "Param",
    "ParamGroup",
    "Initializer",
    "AdamState",
    "adam_step",
    "grad_check",
    "save_params",
    "save_arrays",
    "load_arrays",
    "save_adam",
    "load_adam",
    "params_hash",
]
