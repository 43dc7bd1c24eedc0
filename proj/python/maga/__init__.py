"""Morpho-aware global attention matting: python surface over the C++ core."""

from ._core import (
    MattingNet,
    conv2d_sparse,
    evaluate,
    gelu,
    instance_norm,
    maga_attention,
    matmul,
    max_over_axis,
    softmax_rows,
    synth_pair,
)

__all__ = [
    "MattingNet",
    "conv2d_sparse",
    "evaluate",
    "gelu",
    "instance_norm",
    "maga_attention",
    "matmul",
    "max_over_axis",
    "softmax_rows",
    "synth_pair",
]
