"""Network assembly, parameter accounting, and transfer-learning head surgery.

The architecture is a fixed 3-conv-layer stack on 32x32 RGB input:

    conv(3->12, k3 s1 p2) -> bn -> relu -> maxpool(k3 s3)
    -> conv(12->20, k3 s1 p2) -> bn -> relu
    -> conv(20->32, k3 s1 p2) -> bn -> relu
    -> flatten -> linear(7200 -> num_classes)

Spatial chain: 3x32x32 -> 12x34x34 -> 12x11x11 -> 20x13x13 -> 32x15x15
-> 7200 -> C. Trainable parameters: 336 + 2180 + 5792 (convs) + 24 + 40 + 64
(batchnorms) + C*(7200+1) (head) = 8436 + C*7201; plus 128 running-stat
scalars that are state, not parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .layers import BatchNorm2d, Conv2d, Flatten, Layer, Linear, MaxPool2d, ReLU, conv_out_size
from .rng import make_rng
from .tensor import Tensor

HEAD_ONLY = "head_only"
ALL = "all"
TRAIN_POLICIES = (HEAD_ONLY, ALL)


@dataclass(frozen=True)
class ArchitectureConfig:
    input_channels: int = 3
    input_h: int = 32
    input_w: int = 32
    conv_filters: tuple[int, int, int] = (12, 20, 32)
    kernel: int = 3
    stride: int = 1
    padding: int = 2
    pool_kernel: int = 3
    pool_stride: int = 3
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    num_classes: int = 3

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")

    def spatial_chain(self) -> list[tuple[int, int, int]]:
        """(channels, h, w) after each stage that changes shape."""
        c, h, w = self.input_channels, self.input_h, self.input_w
        chain = [(c, h, w)]

        def conv_step(out_c, h, w):
            return (out_c,
                    conv_out_size(h, self.kernel, self.stride, self.padding),
                    conv_out_size(w, self.kernel, self.stride, self.padding))

        c, h, w = conv_step(self.conv_filters[0], h, w)
        chain.append((c, h, w))
        h = (h - self.pool_kernel) // self.pool_stride + 1
        w = (w - self.pool_kernel) // self.pool_stride + 1
        chain.append((c, h, w))
        c, h, w = conv_step(self.conv_filters[1], h, w)
        chain.append((c, h, w))
        c, h, w = conv_step(self.conv_filters[2], h, w)
        chain.append((c, h, w))
        return chain

    @property
    def flatten_width(self) -> int:
        c, h, w = self.spatial_chain()[-1]
        return c * h * w

    def backbone_equal(self, other: "ArchitectureConfig") -> bool:
        """True when the two configs agree on everything except the head width."""
        return replace(self, num_classes=2) == replace(other, num_classes=2)


class ModelGraph:
    """Ordered layer stack plus its config, freeze policy, and provenance."""

    def __init__(self, config: ArchitectureConfig, layers: list[Layer],
                 provenance: str = "", class_names: list[str] | None = None):
        self.config = config
        self.layers = layers
        self.provenance = provenance
        self.class_names = class_names
        self.trainable_policy = ALL

    @property
    def head(self) -> Linear:
        return self.layers[-1]

    @property
    def backbone(self) -> list[Layer]:
        return self.layers[:-1]

    def forward(self, x, train: bool = False) -> np.ndarray:
        """Run the stack; returns logits of shape (n, num_classes)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        for layer in self.layers:
            x = layer.forward(x, train=train)
        n = x.shape.n
        return x.data.reshape(n, self.config.num_classes)

    def backward(self, grad_logits: np.ndarray) -> None:
        """Fill parameter gradients for every trainable layer.

        Propagation stops below the deepest trainable layer: with a frozen
        backbone only the head's backward runs.
        """
        n = grad_logits.shape[0]
        g = Tensor(np.ascontiguousarray(
            grad_logits.reshape(n, self.config.num_classes, 1, 1)))
        lowest = None
        for i, layer in enumerate(self.layers):
            if layer.PARAM_ATTRS and layer.trainable:
                lowest = i
                break
        if lowest is None:
            return
        for i in range(len(self.layers) - 1, lowest - 1, -1):
            g = self.layers[i].backward(g)

    def set_trainable(self, policy: str) -> "ModelGraph":
        """Apply a freeze policy: 'all' or 'head_only' (backbone frozen)."""
        if policy not in TRAIN_POLICIES:
            raise ConfigError(f"unknown trainable policy {policy!r}, expected one of {TRAIN_POLICIES}")
        for layer in self.backbone:
            layer.trainable = policy == ALL
        self.head.trainable = True
        self.trainable_policy = policy
        return self

    def param_groups(self, trainable_only: bool = False):
        """Yield (layer_index, layer, name, array) for parameter groups."""
        for i, layer in enumerate(self.layers):
            if trainable_only and not layer.trainable:
                continue
            for name, arr in layer.params().items():
                yield i, layer, name, arr

    def count_parameters(self) -> tuple[int, int]:
        """(trainable count under the current policy, total params + running stats)."""
        trainable = sum(arr.size for _, _, _, arr in self.param_groups(trainable_only=True))
        total = sum(arr.size for _, _, _, arr in self.param_groups())
        stats = sum(a.size for layer in self.layers for a in layer.state().values())
        return trainable, total + stats

    def cast(self, dtype) -> "ModelGraph":
        out = ModelGraph(self.config, [l.cast(dtype) for l in self.layers],
                         provenance=self.provenance, class_names=self.class_names)
        out.trainable_policy = self.trainable_policy
        for a, b in zip(out.layers, self.layers):
            a.trainable = b.trainable
        return out

    def clone(self) -> "ModelGraph":
        return self.cast(self.head.weight.dtype)

    def backbone_bytes(self) -> bytes:
        """Concatenated little-endian float32 bytes of all non-head params and stats."""
        parts = []
        for layer in self.backbone:
            for arr in list(layer.params().values()) + list(layer.state().values()):
                parts.append(arr.astype("<f4").tobytes())
        return b"".join(parts)


def _build_layers(config: ArchitectureConfig, rng, dtype=np.float32) -> list[Layer]:
    f1, f2, f3 = config.conv_filters
    k, s, p = config.kernel, config.stride, config.padding

    def conv(cin, cout):
        return Conv2d(cin, cout, k, stride=s, padding=p, rng=rng, dtype=dtype)

    def bn(c):
        return BatchNorm2d(c, eps=config.bn_eps, momentum=config.bn_momentum, dtype=dtype)

    return [
        conv(config.input_channels, f1), bn(f1), ReLU(),
        MaxPool2d(config.pool_kernel, config.pool_stride),
        conv(f1, f2), bn(f2), ReLU(),
        conv(f2, f3), bn(f3), ReLU(),
        Flatten(),
        Linear(config.flatten_width, config.num_classes, rng=rng, dtype=dtype),
    ]


def build_voltavision(num_classes: int, seed: int = 0) -> ModelGraph:
    """Freshly initialized model; deterministic for a fixed seed.

    Weights are drawn in layer order (conv1, conv2, conv3, head) from one
    PCG64 stream, fan-in-scaled uniform; biases 0, gamma 1, beta 0.
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    config = ArchitectureConfig(num_classes=num_classes)
    return ModelGraph(config, _build_layers(config, make_rng(seed)))


def count_parameters(model: ModelGraph) -> tuple[int, int]:
    return model.count_parameters()


def replace_head(model: ModelGraph, new_num_classes: int, seed: int = 0) -> ModelGraph:
    """New graph with a freshly initialized head of the requested width.

    Backbone parameters and running statistics are bit-identical copies of
    the source model's; the head is drawn from its own stream keyed by seed.
    """
    if new_num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {new_num_classes}")
    config = replace(model.config, num_classes=new_num_classes)
    layers = [layer.clone() for layer in model.backbone]
    head = Linear(config.flatten_width, new_num_classes,
                  rng=make_rng(seed), dtype=model.head.weight.dtype)
    out = ModelGraph(config, layers + [head], provenance=model.provenance)
    out.set_trainable(model.trainable_policy)
    return out


def set_trainable(model: ModelGraph, policy: str) -> ModelGraph:
    return model.set_trainable(policy)
