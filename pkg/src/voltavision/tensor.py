"""Dense rank-4 tensors in NCHW layout.

Activations and gradients are carried as contiguous float32 buffers in
row-major (batch, channel, row, column) order. Float64 buffers are allowed
too: gradient checking reruns layers in a 64-bit shadow mode to separate
algorithmic mistakes from single-precision rounding.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ShapeError

_FLOAT_TYPES = (np.float32, np.float64)


class Shape4(NamedTuple):
    """Extent of a rank-4 tensor: batch, channels, rows, columns."""

    n: int
    c: int
    h: int
    w: int

    def count(self) -> int:
        return self.n * self.c * self.h * self.w

    def index(self, n: int, c: int, h: int, w: int) -> int:
        """Flat buffer offset of (n, c, h, w) in row-major NCHW order."""
        return ((n * self.c + c) * self.h + h) * self.w + w

    def coords(self, flat: int) -> tuple[int, int, int, int]:
        """Inverse of index()."""
        flat, w = divmod(flat, self.w)
        flat, h = divmod(flat, self.h)
        n, c = divmod(flat, self.c)
        return n, c, h, w


class Tensor:
    """A C-contiguous float array of shape (n, c, h, w).

    Tensors are treated as immutable once published: layers return fresh
    tensors and never write into their inputs, so sharing across threads
    for reading is safe.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        if data.ndim != 4:
            raise ShapeError(f"tensor must be rank 4, got shape {data.shape}")
        if data.dtype.type not in _FLOAT_TYPES:
            raise ShapeError(f"tensor dtype must be float32 or float64, got {data.dtype}")
        self.data = np.ascontiguousarray(data)

    @property
    def shape(self) -> Shape4:
        return Shape4(*self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def ravel(self) -> np.ndarray:
        """The underlying row-major buffer as a flat view."""
        return self.data.reshape(-1)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.data.shape)}, dtype={self.data.dtype})"


def new_filled(shape, value: float, dtype=np.float32) -> Tensor:
    """Tensor of the given (n, c, h, w) shape with every element set to value.

    Dimensions must be non-negative; a zero dimension yields an empty tensor.
    Allocation failure surfaces as MemoryError.
    """
    shape = Shape4(*shape)
    if any(d < 0 for d in shape):
        raise ShapeError(f"negative dimension in shape {tuple(shape)}")
    return Tensor(np.full(shape, value, dtype=dtype))


def pad_spatial(t: Tensor, pad: int) -> Tensor:
    """Zero-pad the two spatial dimensions by `pad` on every side."""
    if pad < 0:
        raise ShapeError(f"pad must be non-negative, got {pad}")
    if pad == 0:
        return t.copy()
    out = np.pad(t.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return Tensor(out)


def center_crop(t: Tensor, pad: int) -> Tensor:
    """Inverse of pad_spatial: drop `pad` rows/columns from every border."""
    if pad == 0:
        return t.copy()
    n, c, h, w = t.shape
    if h < 2 * pad or w < 2 * pad:
        raise ShapeError(f"cannot crop {pad} from spatial size {h}x{w}")
    return Tensor(t.data[:, :, pad:h - pad, pad:w - pad])


def flatten_to_rows(t: Tensor) -> Tensor:
    """Reshape (n, c, h, w) to (n, c*h*w, 1, 1).

    The buffer is already row-major per sample, so this is a pure reshape:
    value order is untouched.
    """
    n, c, h, w = t.shape
    return Tensor(t.data.reshape(n, c * h * w, 1, 1))
