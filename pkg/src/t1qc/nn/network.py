"""Conv-block network assembly: spec, parameter store, forward and backward.

The architecture is five [conv 3x3x3 + batchnorm + ReLU + maxpool 2 (ceil)]
blocks followed by dropout and three fully connected layers ending in a
softmax over two classes.  Channel counts, FC widths and dropout are
configurable; the spatial input size is free, so small inputs train at desk
scale with the same topology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import layers
from .layers import ShapeMismatch


class StaleCache(ValueError):
    """Backward called with caches that did not come from a training-mode forward."""


@dataclass(frozen=True)
class NetworkSpec:
    conv_channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    fc_widths: tuple[int, ...] = (1300, 50)
    n_classes: int = 2
    dropout_rate: float = 0.5
    kernel: int = 3
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self) -> None:
        if not self.conv_channels:
            raise ValueError("at least one convolutional block is required")
        if self.n_classes < 2:
            raise ValueError("classifier needs at least two classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd to preserve spatial dims")

    def to_dict(self) -> dict:
        return {
            "conv_channels": list(self.conv_channels),
            "fc_widths": list(self.fc_widths),
            "n_classes": self.n_classes,
            "dropout_rate": self.dropout_rate,
            "kernel": self.kernel,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "NetworkSpec":
        return cls(
            conv_channels=tuple(obj["conv_channels"]),
            fc_widths=tuple(obj["fc_widths"]),
            n_classes=int(obj["n_classes"]),
            dropout_rate=float(obj["dropout_rate"]),
            kernel=int(obj["kernel"]),
            bn_momentum=float(obj["bn_momentum"]),
            bn_eps=float(obj["bn_eps"]),
        )


def shape_trace(spec: NetworkSpec, input_shape: tuple[int, int, int, int]) -> list[tuple[str, tuple[int, ...]]]:
    """Layer-by-layer output shapes; pure arithmetic, nothing is allocated.

    Pooling uses ceil-mode sizes, so every spatial axis maps to ceil(n / 2).
    """
    c, x, y, z = input_shape
    rows: list[tuple[str, tuple[int, ...]]] = [("input", (c, x, y, z))]
    for i, ch in enumerate(spec.conv_channels, start=1):
        rows.append((f"conv{i}", (ch, x, y, z)))
        x, y, z = -(-x // 2), -(-y // 2), -(-z // 2)
        rows.append((f"pool{i}", (ch, x, y, z)))
        c = ch
    flat = c * x * y * z
    rows.append(("flatten", (flat,)))
    for j, width in enumerate(spec.fc_widths, start=1):
        rows.append((f"fc{j}", (width,)))
    rows.append((f"fc{len(spec.fc_widths) + 1}", (spec.n_classes,)))
    rows.append(("softmax", (spec.n_classes,)))
    return rows


def flat_feature_count(spec: NetworkSpec, input_shape: tuple[int, int, int, int]) -> int:
    for name, shape in shape_trace(spec, input_shape):
        if name == "flatten":
            return shape[0]
    raise AssertionError("unreachable")


LEARNABLE_SUFFIXES = (".w", ".b", ".gamma", ".beta")


def is_learnable(name: str) -> bool:
    return name.endswith(LEARNABLE_SUFFIXES)


def init_params(
    spec: NetworkSpec,
    input_shape: tuple[int, int, int, int],
    rng: np.random.Generator,
    dtype: type = np.float32,
) -> dict[str, np.ndarray]:
    """Fan-in-scaled Gaussian weights, zero biases, unit batch-norm scales."""
    params: dict[str, np.ndarray] = {}
    k = spec.kernel
    c_in = input_shape[0]
    for i, c_out in enumerate(spec.conv_channels, start=1):
        fan_in = c_in * k**3
        params[f"block{i}.conv.w"] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (c_out, c_in, k, k, k)).astype(dtype)
        params[f"block{i}.conv.b"] = np.zeros(c_out, dtype=dtype)
        params[f"block{i}.bn.gamma"] = np.ones(c_out, dtype=dtype)
        params[f"block{i}.bn.beta"] = np.zeros(c_out, dtype=dtype)
        params[f"block{i}.bn.running_mean"] = np.zeros(c_out, dtype=dtype)
        params[f"block{i}.bn.running_var"] = np.ones(c_out, dtype=dtype)
        c_in = c_out
    widths = (flat_feature_count(spec, input_shape), *spec.fc_widths, spec.n_classes)
    for j in range(1, len(widths)):
        fan_in = widths[j - 1]
        params[f"fc{j}.w"] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (widths[j], fan_in)).astype(dtype)
        params[f"fc{j}.b"] = np.zeros(widths[j], dtype=dtype)
    return params


def forward(
    spec: NetworkSpec,
    params: Mapping[str, np.ndarray],
    x: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Full forward pass; returns class probabilities and the backward caches.

    Training mode uses batch statistics in batch norm (updating the running
    buffers in place) and applies dropout from ``rng``.
    """
    if x.ndim != 5:
        raise ShapeMismatch(f"expected a (batch, c, x, y, z) array, got shape {x.shape}")
    caches: dict = {"training": training, "blocks": [], "fc": []}
    out = x
    for i in range(1, len(spec.conv_channels) + 1):
        p = f"block{i}"
        out, conv_cache = layers.conv3d_forward(out, params[f"{p}.conv.w"], params[f"{p}.conv.b"])
        out, bn_cache = layers.batchnorm_forward(
            out,
            params[f"{p}.bn.gamma"],
            params[f"{p}.bn.beta"],
            params[f"{p}.bn.running_mean"],
            params[f"{p}.bn.running_var"],
            training=training,
            momentum=spec.bn_momentum,
            eps=spec.bn_eps,
        )
        out, relu_cache = layers.relu_forward(out)
        out, pool_cache = layers.maxpool3d_forward(out)
        caches["blocks"].append((conv_cache, bn_cache, relu_cache, pool_cache))

    n = out.shape[0]
    caches["conv_out_shape"] = out.shape
    flat = out.reshape(n, -1)
    flat, drop_cache = layers.dropout_forward(flat, spec.dropout_rate, training, rng)
    caches["dropout"] = drop_cache

    n_fc = len(spec.fc_widths) + 1
    for j in range(1, n_fc + 1):
        flat, fc_cache = layers.linear_forward(flat, params[f"fc{j}.w"], params[f"fc{j}.b"])
        caches["fc"].append(fc_cache)
    caches["logits"] = flat
    probs = layers.softmax(flat)
    caches["probs"] = probs
    return probs, caches


def backward(
    spec: NetworkSpec,
    params: Mapping[str, np.ndarray],
    caches: dict,
    labels: np.ndarray,
    class_weights: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of the weighted cross-entropy batch loss for every learnable."""
    if not caches.get("training"):
        raise StaleCache("backward requires caches from a training-mode forward pass")
    grads: dict[str, np.ndarray] = {}
    dflat = layers.weighted_cross_entropy_grad(caches["probs"], labels, class_weights)

    n_fc = len(spec.fc_widths) + 1
    for j in range(n_fc, 0, -1):
        dflat, dw, db = layers.linear_backward(dflat, caches["fc"][j - 1])
        grads[f"fc{j}.w"] = dw
        grads[f"fc{j}.b"] = db

    dflat = layers.dropout_backward(dflat, caches["dropout"])
    dout = dflat.reshape(caches["conv_out_shape"])

    for i in range(len(spec.conv_channels), 0, -1):
        conv_cache, bn_cache, relu_cache, pool_cache = caches["blocks"][i - 1]
        dout = layers.maxpool3d_backward(dout, pool_cache)
        dout = layers.relu_backward(dout, relu_cache)
        dout, dgamma, dbeta = layers.batchnorm_backward(dout, bn_cache)
        grads[f"block{i}.bn.gamma"] = dgamma
        grads[f"block{i}.bn.beta"] = dbeta
        dout, dw, db = layers.conv3d_backward(dout, conv_cache)
        grads[f"block{i}.conv.w"] = dw
        grads[f"block{i}.conv.b"] = db
    return grads


def loss_and_grads(
    spec: NetworkSpec,
    params: Mapping[str, np.ndarray],
    x: np.ndarray,
    labels: np.ndarray,
    class_weights: np.ndarray,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    probs, caches = forward(spec, params, x, training=True, rng=rng)
    loss = layers.weighted_cross_entropy(probs, labels, class_weights)
    grads = backward(spec, params, caches, labels, class_weights)
    return loss, grads, probs
