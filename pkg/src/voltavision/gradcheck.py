"""Finite-difference verification of the analytic backward passes.

Checks run in a 64-bit shadow: the layer (or whole model) is copied with
float64 parameters so that algorithmic mistakes are not masked by, or blamed
on, float32 rounding. Central differences with h = 1e-5 are compared against
the analytic gradients coordinate by coordinate; the reported figure is

    max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError
from .layers import Layer
from .model import ModelGraph
from .rng import make_rng
from .tensor import Tensor
from .train import cross_entropy

FD_STEP = 1e-5


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
        raise NumericError("non-finite values in gradient comparison")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    if analytic.size == 0:
        return 0.0
    return float((np.abs(analytic - numeric) / denom).max())


def _central_diff(eval_scalar, array: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """d(eval_scalar)/d(array) by central differences, one coordinate at a time."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = eval_scalar()
        flat[i] = orig - h
        lo = eval_scalar()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return grad


def check_layer(layer: Layer, in_shape, train: bool = False, seed: int = 0,
                h: float = FD_STEP, avoid_zero: float = 0.0,
                distinct_values: bool = False) -> float:
    """Max relative FD error over the layer's input and parameter gradients.

    The probe scalar is J = sum(g * forward(x)) for a fixed random g, whose
    analytic gradients are exactly what backward() computes. avoid_zero
    pushes input coordinates out of (-t, t), which keeps ReLU probes away
    from its kink; distinct_values spaces all inputs at least 2/size apart
    so a +-h nudge can never flip a pooling argmax.
    """
    lay = layer.cast(np.float64)
    rng = make_rng(seed)
    if distinct_values:
        size = int(np.prod(in_shape))
        x = (rng.permutation(size) / size * 2.0 - 1.0).reshape(in_shape)
    else:
        x = rng.uniform(-1.0, 1.0, size=in_shape)
    if avoid_zero > 0:
        x = np.where(np.abs(x) < avoid_zero,
                     np.where(x >= 0, 1.0, -1.0) * 2 * avoid_zero, x)
    out = lay.forward(Tensor(x.copy()), train=train)
    if not np.isfinite(out.data).all():
        raise NumericError(f"{lay.kind}: non-finite forward output")
    g = rng.uniform(-1.0, 1.0, size=tuple(out.shape))

    analytic_dx = lay.backward(Tensor(g.copy())).data
    analytic_params = {name: grad.copy() for name, grad in lay.grads().items()}

    def eval_with_input(probe_x):
        def f():
            return float(np.sum(g * lay.forward(Tensor(probe_x.copy()), train=train).data))
        return f

    worst = max_rel_error(analytic_dx, _central_diff(eval_with_input(x), x, h))
    for name in lay.PARAM_ATTRS:
        param = getattr(lay, name)
        numeric = _central_diff(
            lambda: float(np.sum(g * lay.forward(Tensor(x.copy()), train=train).data)),
            param, h)
        worst = max(worst, max_rel_error(analytic_params[name], numeric))
    return worst


def check_network(model: ModelGraph, x: np.ndarray, y: np.ndarray,
                  layer_index: int = -1, max_coords: int = 64, seed: int = 0,
                  h: float = FD_STEP) -> float:
    """FD check of the cross-entropy loss wrt one layer's parameters.

    Defaults to the head. Coordinates are subsampled (seeded) when the
    parameter has more than max_coords entries. Batchnorm runs in train
    mode against the fixed probe batch.
    """
    m64 = model.cast(np.float64)
    m64.set_trainable("all")
    x = np.asarray(x, dtype=np.float64)

    def loss() -> float:
        return cross_entropy(m64.forward(x, train=True), y)[0]

    logits = m64.forward(x, train=True)
    base_loss, grad_logits = cross_entropy(logits, y)
    if not np.isfinite(base_loss):
        raise NumericError("non-finite loss in network gradient check")
    m64.backward(grad_logits)

    layer = m64.layers[layer_index]
    worst = 0.0
    rng = make_rng(seed)
    for name in layer.PARAM_ATTRS:
        param = getattr(layer, name)
        analytic = layer.grads()[name].reshape(-1)
        flat = param.reshape(-1)
        if flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        else:
            coords = np.arange(flat.size)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            hi = loss()
            flat[i] = orig - h
            lo = loss()
            flat[i] = orig
            numeric = (hi - lo) / (2 * h)
            worst = max(worst, max_rel_error(analytic[i], numeric))
    return worst
