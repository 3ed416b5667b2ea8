"""Small graph-building helpers shared by the network modules.

The tensor core only broadcasts scalars, so row/column tiling is done
explicitly with constant ones matrices (matmul keeps everything on the
tape).
"""

from __future__ import annotations

import numpy as np

from . import tensor as tc


def ones_const(shape, dtype) -> tc.Tensor:
    return tc.Tensor(np.ones(shape, dtype=dtype))


def tile_rows(row: tc.Tensor, n: int) -> tc.Tensor:
    """Stack n copies of a (1,K) row into an (n,K) matrix."""
    if row.ndim != 2 or row.shape[0] != 1:
        raise tc.ShapeError(f"tile_rows: expected (1,K), got {tuple(row.shape)}")
    return tc.matmul(ones_const((n, 1), row.dtype), row)


def tile_cols(col: tc.Tensor, k: int) -> tc.Tensor:
    """Spread an (n,1) column into an (n,k) matrix."""
    if col.ndim != 2 or col.shape[1] != 1:
        raise tc.ShapeError(f"tile_cols: expected (n,1), got {tuple(col.shape)}")
    return tc.matmul(col, ones_const((1, k), col.dtype))


def linear(x: tc.Tensor, w: tc.Tensor, b: tc.Tensor | None = None) -> tc.Tensor:
    """x (n,din) @ w (din,dout), optionally plus a tiled bias (dout,)."""
    out = tc.matmul(x, w)
    if b is not None:
        out = out + tile_rows(tc.reshape(b, (1, b.size)), x.shape[0])
    return out


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    """Fan-in scaled init for layers followed by ReLU."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
