"""Forward and backward passes for the six layer kinds used by the network.

Each layer caches whatever its backward pass needs during forward; backward
fills per-parameter gradient attributes and returns the gradient with respect
to the layer input. Backward passes are written by hand, no autodiff.

Convolution is lowered to a patch-matrix multiply (im2col); results match a
direct six-loop convolution within float tolerance. Max pooling breaks ties
toward the first element in row-major window scan order so backward routing
is deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor, flatten_to_rows


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _uniform_fan_in(rng, shape, fan_in, dtype):
    # fan-in scaled uniform init in +-sqrt(6/fan_in); biases stay zero
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """One architecture stage. Subclasses define kind, params, and passes."""

    kind = "?"
    PARAM_ATTRS: tuple[str, ...] = ()
    STATE_ATTRS: tuple[str, ...] = ()

    def __init__(self):
        self.trainable = True
        self._cache = None

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor) -> Tensor:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        """Trainable parameter arrays, by reference, in serialization order."""
        return {name: getattr(self, name) for name in self.PARAM_ATTRS}

    def grads(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, "grad_" + name) for name in self.PARAM_ATTRS}

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable persistent state (batchnorm running statistics)."""
        return {name: getattr(self, name) for name in self.STATE_ATTRS}

    def param_count(self) -> int:
        return sum(a.size for a in self.params().values())

    def cast(self, dtype) -> "Layer":
        """Copy of this layer with parameters and state converted to dtype.

        Caches and gradients are dropped; the trainable flag is kept.
        """
        import copy

        clone = copy.copy(self)
        clone._cache = None
        for name in self.PARAM_ATTRS:
            setattr(clone, name, getattr(self, name).astype(dtype))
            setattr(clone, "grad_" + name, None)
        for name in self.STATE_ATTRS:
            setattr(clone, name, getattr(self, name).astype(dtype))
        return clone

    def clone(self) -> "Layer":
        """Deep copy preserving dtype; parameter bits are copied exactly."""
        return self.cast(self.params_dtype())

    def params_dtype(self):
        for name in self.PARAM_ATTRS + self.STATE_ATTRS:
            return getattr(self, name).dtype
        return np.float32

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called before forward")
        return self._cache


class Conv2d(Layer):
    """Square-kernel 2D convolution with zero padding.

    weight: (out_channels, in_channels, kernel, kernel), bias: (out_channels,).
    out[n,o,i,j] = bias[o] + sum_{c,u,v} weight[o,c,u,v] * x_pad[n,c,i*s+u,j*s+v]
    """

    kind = "conv"
    PARAM_ATTRS = ("weight", "bias")

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0,
                 rng=None, dtype=np.float32):
        super().__init__()
        if min(in_channels, out_channels, kernel, stride) < 1 or padding < 0:
            raise ShapeError(
                f"bad conv spec: in={in_channels} out={out_channels} "
                f"kernel={kernel} stride={stride} padding={padding}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        wshape = (out_channels, in_channels, kernel, kernel)
        if rng is None:
            self.weight = np.zeros(wshape, dtype=dtype)
        else:
            self.weight = _uniform_fan_in(rng, wshape, in_channels * kernel * kernel, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weight = None
        self.grad_bias = None

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        return (conv_out_size(h, self.kernel, self.stride, self.padding),
                conv_out_size(w, self.kernel, self.stride, self.padding))

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(
                f"conv expects {self.in_channels} input channels "
                f"(weight {self.weight.shape}), got input {tuple(x.shape)}")
        out_h, out_w = self.out_shape(h, w)
        if out_h < 1 or out_w < 1:
            raise ShapeError(
                f"conv output {out_h}x{out_w} < 1 for input {tuple(x.shape)} with "
                f"kernel={self.kernel} stride={self.stride} padding={self.padding}")
        p, k, s = self.padding, self.kernel, self.stride
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s]  # (n, c, out_h, out_w, k, k)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * out_h * out_w, c * k * k)
        out = cols @ self.weight.reshape(self.out_channels, -1).T + self.bias
        out = out.reshape(n, out_h, out_w, self.out_channels).transpose(0, 3, 1, 2)
        self._cache = (cols, (n, c, h, w), (out_h, out_w), xp.shape)
        return Tensor(np.ascontiguousarray(out))

    def backward(self, grad_out: Tensor) -> Tensor:
        cols, (n, c, h, w), (out_h, out_w), padded_shape = self._require_cache()
        expected = (n, self.out_channels, out_h, out_w)
        if tuple(grad_out.shape) != expected:
            raise ShapeError(f"conv grad shape {tuple(grad_out.shape)} != output shape {expected}")
        k, s, p = self.kernel, self.stride, self.padding
        gmat = np.ascontiguousarray(grad_out.data.transpose(0, 2, 3, 1)).reshape(
            n * out_h * out_w, self.out_channels)
        self.grad_weight = (gmat.T @ cols).reshape(self.weight.shape)
        self.grad_bias = gmat.sum(axis=0)
        dcols = (gmat @ self.weight.reshape(self.out_channels, -1)).reshape(
            n, out_h, out_w, c, k, k).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros(padded_shape, dtype=grad_out.dtype)
        for u in range(k):
            for v in range(k):
                dxp[:, :, u:u + s * out_h:s, v:v + s * out_w:s] += dcols[:, :, :, :, u, v]
        dx = dxp[:, :, p:p + h, p:p + w]
        return Tensor(np.ascontiguousarray(dx))


class BatchNorm2d(Layer):
    """Per-channel batch normalization over the (n, h, w) axes.

    Train mode normalizes with batch statistics (biased variance) and folds
    them into the running estimates: running <- (1-momentum)*running +
    momentum*batch. Eval mode, and any call while the layer is frozen, uses
    the running estimates and mutates nothing, which is what keeps a frozen
    backbone byte-stable through a head-only fit.
    """

    kind = "batchnorm"
    PARAM_ATTRS = ("gamma", "beta")
    STATE_ATTRS = ("running_mean", "running_var")

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        if channels < 1 or eps <= 0 or not 0 < momentum < 1:
            raise ShapeError(f"bad batchnorm spec: channels={channels} eps={eps} momentum={momentum}")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.grad_gamma = None
        self.grad_beta = None

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got input {tuple(x.shape)}")
        use_batch = train and self.trainable
        if use_batch:
            m = n * h * w
            if m < 2:
                raise DataError(
                    f"batchnorm needs >= 2 values per channel in train mode, got {m} "
                    f"for input {tuple(x.shape)}")
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))  # biased; also fed to the running update
            mom = self.momentum
            self.running_mean = ((1.0 - mom) * self.running_mean
                                 + mom * mean).astype(self.running_mean.dtype)
            self.running_var = ((1.0 - mom) * self.running_var
                                + mom * var).astype(self.running_var.dtype)
        else:
            m = None
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + np.asarray(self.eps, dtype=x.dtype))
        xn = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
        out = self.gamma[None, :, None, None] * xn + self.beta[None, :, None, None]
        self._cache = (xn.astype(x.dtype), inv.astype(x.dtype), use_batch, m)
        return Tensor(out.astype(x.dtype))

    def backward(self, grad_out: Tensor) -> Tensor:
        xn, inv, use_batch, m = self._require_cache()
        g = grad_out.data
        if g.shape != xn.shape:
            raise ShapeError(f"batchnorm grad shape {g.shape} != activation shape {xn.shape}")
        self.grad_gamma = (g * xn).sum(axis=(0, 2, 3))
        self.grad_beta = g.sum(axis=(0, 2, 3))
        dxn = g * self.gamma[None, :, None, None]
        if not use_batch:
            # running stats are constants here
            return Tensor(dxn * inv[None, :, None, None])
        sum_dxn = dxn.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxn_xn = (dxn * xn).sum(axis=(0, 2, 3), keepdims=True)
        dx = (inv[None, :, None, None] / m) * (m * dxn - sum_dxn - xn * sum_dxn_xn)
        return Tensor(dx.astype(g.dtype))


class ReLU(Layer):
    """Elementwise max(x, 0); subgradient at exactly 0 is 0."""

    kind = "relu"

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        self._cache = x.data > 0
        return Tensor(np.maximum(x.data, 0))

    def backward(self, grad_out: Tensor) -> Tensor:
        mask = self._require_cache()
        if grad_out.data.shape != mask.shape:
            raise ShapeError(f"relu grad shape {grad_out.data.shape} != input shape {mask.shape}")
        return Tensor(grad_out.data * mask)


class MaxPool2d(Layer):
    """Square max pooling without padding.

    The argmax inside every window is cached; backward routes each output
    gradient to exactly that input position. np.argmax picks the first
    maximum in row-major scan order, which fixes tie-breaking.
    """

    kind = "maxpool"

    def __init__(self, kernel, stride):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise ShapeError(f"bad maxpool spec: kernel={kernel} stride={stride}")
        self.kernel = kernel
        self.stride = stride

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        return (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        n, c, h, w = x.shape
        k, s = self.kernel, self.stride
        if h < k or w < k:
            raise ShapeError(f"maxpool kernel {k} exceeds input spatial size {h}x{w}")
        out_h, out_w = self.out_shape(h, w)
        win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s].reshape(n, c, out_h, out_w, k * k)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        self._cache = (arg, (n, c, h, w), (out_h, out_w))
        return Tensor(np.ascontiguousarray(out))

    def backward(self, grad_out: Tensor) -> Tensor:
        arg, (n, c, h, w), (out_h, out_w) = self._require_cache()
        if tuple(grad_out.shape) != (n, c, out_h, out_w):
            raise ShapeError(
                f"maxpool grad shape {tuple(grad_out.shape)} != output shape {(n, c, out_h, out_w)}")
        k, s = self.kernel, self.stride
        ni, ci, oi, oj = np.indices(arg.shape)
        ii = oi * s + arg // k
        jj = oj * s + arg % k
        dx = np.zeros((n, c, h, w), dtype=grad_out.dtype)
        np.add.at(dx, (ni, ci, ii, jj), grad_out.data)
        return Tensor(dx)


class Flatten(Layer):
    """(n, c, h, w) -> (n, c*h*w, 1, 1); backward restores the shape."""

    kind = "flatten"

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        self._cache = tuple(x.shape)
        return flatten_to_rows(x)

    def backward(self, grad_out: Tensor) -> Tensor:
        in_shape = self._require_cache()
        return Tensor(grad_out.data.reshape(in_shape))


class Linear(Layer):
    """Fully connected layer on flattened rows: out = x @ weight.T + bias."""

    kind = "linear"
    PARAM_ATTRS = ("weight", "bias")

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ShapeError(f"bad linear spec: in={in_features} out={out_features}")
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            self.weight = np.zeros((out_features, in_features), dtype=dtype)
        else:
            self.weight = _uniform_fan_in(rng, (out_features, in_features), in_features, dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self.grad_weight = None
        self.grad_bias = None

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        n, c, h, w = x.shape
        if (c, h, w) != (self.in_features, 1, 1):
            raise ShapeError(
                f"linear expects input (n, {self.in_features}, 1, 1), got {tuple(x.shape)}")
        xm = x.data.reshape(n, self.in_features)
        out = xm @ self.weight.T + self.bias
        self._cache = xm
        return Tensor(out.reshape(n, self.out_features, 1, 1))

    def backward(self, grad_out: Tensor) -> Tensor:
        xm = self._require_cache()
        n = xm.shape[0]
        if tuple(grad_out.shape) != (n, self.out_features, 1, 1):
            raise ShapeError(
                f"linear grad shape {tuple(grad_out.shape)} != output shape {(n, self.out_features, 1, 1)}")
        gm = grad_out.data.reshape(n, self.out_features)
        self.grad_weight = gm.T @ xm
        self.grad_bias = gm.sum(axis=0)
        dx = gm @ self.weight
        return Tensor(dx.reshape(n, self.in_features, 1, 1))
