"""
Small compositions of the kernels used across the models.
"""
from typing import Optional, Sequence

import numpy as np

from autodiff.tensor import (
    Tensor, add, as_tensor, l2_normalize, layer_norm, leaky_relu, matmul, mul, scale,
)
from config.errors import RangeError, ShapeError


def constant(array, like: Optional[Tensor] = None) -> Tensor:
    return as_tensor(np.asarray(array), like)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def layer_norm_affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return add(mul(layer_norm(x), gamma), beta)


def norm_act(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """LayerNorm followed by LeakyReLU."""
    return leaky_relu(layer_norm_affine(x, gamma, beta))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(as_tensor(b, a if isinstance(a, Tensor) else None), -1.0))


def row_sum(x: Tensor) -> Tensor:
    """Sum over the last axis of a 2-D tensor, keeping a column."""
    return matmul(x, constant(np.ones((x.shape[-1], 1)), x))


def row_norm(x: Tensor) -> Tensor:
    """Euclidean norm of each row as an (n, 1) column."""
    return row_sum(mul(x, l2_normalize(x)))


def one_hot_row(index: int, length: int, like: Tensor) -> Tensor:
    """(1, length) selector with a single 1 at ``index``."""
    if not 0 <= index < length:
        raise RangeError(f"row index {index} outside [0, {length})")
    vec = np.zeros((1, length))
    vec[0, index] = 1.0
    return constant(vec, like)


def select_row(x: Tensor, index: int) -> Tensor:
    """Row ``index`` of a 2-D tensor as a (1, D) tensor."""
    return matmul(one_hot_row(index, x.shape[0], x), x)


def place_row(row: Tensor, index: int, length: int) -> Tensor:
    """(length, D) tensor that is zero except for ``row`` at ``index``."""
    if row.shape[0] != 1:
        raise ShapeError(f"place_row expects a (1, D) row, got {row.shape}")
    if not 0 <= index < length:
        raise RangeError(f"row index {index} outside [0, {length})")
    return matmul(constant(np.eye(length)[:, [index]], row), row)


def select_columns(x: Tensor, keep: int) -> Tensor:
    """First ``keep`` columns of a 2-D tensor."""
    width = x.shape[-1]
    if not 1 <= keep <= width:
        raise RangeError(f"column count {keep} outside [1, {width}]")
    return matmul(x, constant(np.eye(width)[:, :keep], x))


def sum_tensors(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("sum of an empty list")
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total
