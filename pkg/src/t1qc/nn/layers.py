"""Functional 3D network layers with hand-derived backward passes.

Every forward returns (output, cache); the matching backward consumes the
cache and the upstream gradient.  Arrays are (batch, channels, x, y, z);
convolutions go through strided windows + tensordot so the heavy lifting is
one BLAS contraction per call.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    """Input dimensions do not match what the layer or network expects."""


def _windows3(padded: np.ndarray, k: int) -> np.ndarray:
    """View of all k^3 sliding windows (stride 1) of a padded (N,C,X,Y,Z) array."""
    n, c, x, y, z = padded.shape
    sn, sc, sx, sy, sz = padded.strides
    return np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, x - k + 1, y - k + 1, z - k + 1, k, k, k),
        strides=(sn, sc, sx, sy, sz, sx, sy, sz),
        writeable=False,
    )


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, tuple]:
    """3D convolution, stride 1, zero padding (k-1)/2 so spatial dims are kept."""
    k = w.shape[2]
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = _windows3(xp, k)
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out = np.moveaxis(out, -1, 1)
    out += b[None, :, None, None, None]
    return np.ascontiguousarray(out), (xp, w)


def conv3d_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xp, w = cache
    k = w.shape[2]
    pad = (k - 1) // 2
    n, co, xd, yd, zd = dout.shape
    ci = w.shape[1]
    db = dout.sum(axis=(0, 2, 3, 4))
    win = _windows3(xp, k)
    # (Ci,k,k,k,Co) -> (Co,Ci,k,k,k)
    dw = np.tensordot(win, dout, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    dw = np.ascontiguousarray(np.moveaxis(dw, -1, 0))
    # dx as a transposed convolution: one batched GEMM over all kernel offsets,
    # scatter-added into the padded gradient; avoids windowing the (much
    # larger) dout array that a correlation formulation would need.
    dmoved = np.ascontiguousarray(dout.reshape(n, co, -1).transpose(0, 2, 1))
    contrib = np.matmul(dmoved, w.reshape(co, -1)).reshape(n, xd, yd, zd, ci, k, k, k)
    contrib = np.moveaxis(contrib, 4, 1)
    dxp = np.zeros_like(xp)
    for a in range(k):
        for bb in range(k):
            for c in range(k):
                dxp[:, :, a : a + xd, bb : bb + yd, c : c + zd] += contrib[..., a, bb, c]
    dx = dxp[:, :, pad : pad + xd, pad : pad + yd, pad : pad + zd]
    return np.ascontiguousarray(dx), dw, db


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> tuple[np.ndarray, tuple]:
    """Per-channel batch normalization over (batch, x, y, z).

    Training mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance, like the usual framework convention);
    inference normalizes with the running buffers.
    """
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        n = x.shape[0] * x.shape[2] * x.shape[3] * x.shape[4]
        unbiased = var * (n / max(n - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return out, (xhat, inv_std, gamma, training)


def batchnorm_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std, gamma, training = cache
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if training:
        mean_dxhat = dxhat.mean(axis=axes).reshape(shape)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes).reshape(shape)
        dx = inv_std.reshape(shape) * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    else:
        dx = inv_std.reshape(shape) * dxhat
    return dx, dgamma, dbeta


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    return np.maximum(x, 0.0), (x > 0.0,)


def relu_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    (mask,) = cache
    return dout * mask


def maxpool3d_forward(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """2x2x2 max pooling, stride 2, ceil mode: odd axes keep a partial window."""
    n, c, xd, yd, zd = x.shape
    ox, oy, oz = -(-xd // 2), -(-yd // 2), -(-zd // 2)
    px, py, pz = 2 * ox - xd, 2 * oy - yd, 2 * oz - zd
    neg = np.array(-np.inf, dtype=x.dtype)
    xp = np.pad(x, ((0, 0), (0, 0), (0, px), (0, py), (0, pz)), constant_values=neg)
    win = (
        xp.reshape(n, c, ox, 2, oy, 2, oz, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, ox, oy, oz, 8)
    )
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, xp.shape, arg)


def maxpool3d_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    x_shape, xp_shape, arg = cache
    n, c, xd, yd, zd = x_shape
    ox, oy, oz = arg.shape[2], arg.shape[3], arg.shape[4]
    dwin = np.zeros((n, c, ox, oy, oz, 8), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dxp = (
        dwin.reshape(n, c, ox, oy, oz, 2, 2, 2)
        .transpose(0, 1, 2, 5, 3, 6, 4, 7)
        .reshape(xp_shape)
    )
    return np.ascontiguousarray(dxp[:, :, :xd, :yd, :zd])


def dropout_forward(
    x: np.ndarray, rate: float, training: bool, rng: np.random.Generator | None
) -> tuple[np.ndarray, tuple]:
    """Inverted dropout: activations are scaled at train time, inference is identity."""
    if not training or rate == 0.0:
        return x, (None,)
    if rng is None:
        raise ValueError("training-mode dropout needs an RNG")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return x * mask, (mask,)


def dropout_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    (mask,) = cache
    return dout if mask is None else dout * mask


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, tuple]:
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear layer expects {w.shape[1]} features, got {x.shape[1]}")
    return x @ w.T + b, (x, w)


def linear_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def weighted_cross_entropy(
    probs: np.ndarray, labels: np.ndarray, class_weights: np.ndarray
) -> float:
    """Mean over the batch of -w[y] * log p[y]."""
    idx = np.arange(labels.shape[0])
    picked = np.clip(probs[idx, labels], 1e-30, None)
    return float(np.mean(class_weights[labels] * -np.log(picked)))


def weighted_cross_entropy_grad(
    probs: np.ndarray, labels: np.ndarray, class_weights: np.ndarray
) -> np.ndarray:
    """Gradient of the batch loss w.r.t. the logits feeding the softmax."""
    n = labels.shape[0]
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= class_weights[labels][:, None] / n
    return grad


def inverse_frequency_weights(labels: np.ndarray, n_classes: int = 2) -> np.ndarray:
    """w_c = N_total / (K * N_c), computed from the training labels."""
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    if (counts == 0).any():
        raise ValueError(f"every class must appear in the training labels, got counts {counts}")
    return labels.shape[0] / (n_classes * counts)
