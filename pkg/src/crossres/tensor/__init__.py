"""Minimal reverse-mode tensor engine used by the synthesis networks."""

from .check import grad_check
from .core import GradTape, ShapeError, Tensor, as_tensor, record, taping
from .ops import (
    ConvParams,
    add,
    bilinear_sample,
    concat,
    conv2d,
    default_patch_padding,
    fold,
    getitem,
    l1_loss,
    matmul,
    mean,
    mul,
    pad,
    patch_grid,
    pixel_shuffle,
    relu,
    reshape,
    residual_block,
    separable_linear,
    sigmoid,
    sub,
    sum_all,
    sum_axis,
    take_rows,
    transpose,
    unfold,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "ConvParams", "GradTape", "ShapeError", "Tensor", "adam_step", "add",
    "as_tensor", "bilinear_sample", "concat", "conv2d", "default_patch_padding", "fold",
    "getitem", "grad_check", "l1_loss", "matmul", "mean", "mul", "pad", "patch_grid",
    "pixel_shuffle", "record", "relu", "reshape", "residual_block", "separable_linear",
    "sigmoid", "sub", "sum_all", "sum_axis", "take_rows", "taping", "transpose", "unfold",
]
