"""Minimal dense-tensor autodiff engine (f64, define-by-run)."""

from .tensor import (
    Tape,
    Tensor,
    absolute,
    add,
    backward,
    check_finite,
    concat,
    div,
    gelu,
    layernorm,
    matmul,
    mul,
    narrow,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scalar_add,
    scalar_mul,
    sigmoid,
    softmax,
    sub,
    transpose,
    zero_grads,
)
from .spatial import adaptive_avg_pool, conv2d, resize_bilinear, upsample_nearest

__all__ = [
    "Tape",
    "Tensor",
    "absolute",
    "adaptive_avg_pool",
    "add",
    "backward",
    "check_finite",
    "concat",
    "conv2d",
    "div",
    "gelu",
    "layernorm",
    "matmul",
    "mul",
    "narrow",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "resize_bilinear",
    "scalar_add",
    "scalar_mul",
    "sigmoid",
    "softmax",
    "sub",
    "transpose",
    "upsample_nearest",
    "zero_grads",
]
