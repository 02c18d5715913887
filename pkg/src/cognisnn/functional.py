"""Differentiable primitives used by the spiking layers.

Each function computes its forward value with numpy and registers a
hand-written adjoint on the active tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    IndivisibleDimension,
    LabelOutOfRange,
    NonPositiveOutput,
    ShapeMismatch,
)
from .tensor import Tensor, _record, as_tensor


@dataclass(frozen=True)
class SurrogateConfig:
    alpha: float = 4.0
    relaxed_forward: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("surrogate alpha must be positive")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so neither tail overflows or cancels
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_windows(x: np.ndarray, kernel: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Strided view of shape (N, C, Ho, Wo, k, k) over the padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    return sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch("conv2d expects NCHW input and OIkk weights")
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise ShapeMismatch(f"input channels {c} vs kernel {w.shape}")
    if b is not None and b.shape != (o,):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {o} output channels")
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(wd, k, stride, padding)
    if ho <= 0 or wo <= 0:
        raise NonPositiveOutput(f"conv output would be {ho}x{wo}")
    win = conv_windows(x.data, k, stride, padding)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.data[None, :, None, None]

    def adjoint(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            cols = np.tensordot(g, w.data, axes=([1], [0]))  # N, Ho, Wo, C, k, k
            gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd]
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _record(Tensor(out), inputs, adjoint)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool = True,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalisation over (N, H, W).

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance); in eval mode the buffers are
    used as-is.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"BN parameters must have shape ({c},)")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def adjoint(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if training:
                m = x.size // c
                s1 = gxhat.sum(axis=axes)[None, :, None, None]
                s2 = (gxhat * xhat).sum(axis=axes)[None, :, None, None]
                gx = (inv_std[None, :, None, None] / m) * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv_std[None, :, None, None]
        return gx, gg, gbeta

    return _record(Tensor(out), (x, gamma, beta), adjoint)


def avg_pool2d(x: Tensor, kernel: int) -> Tensor:
    """Non-overlapping average pooling (stride equals kernel)."""
    if kernel == 1:
        return x
    n, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise IndivisibleDimension(f"spatial {h}x{w} not divisible by kernel {kernel}")
    out = x.data.reshape(n, c, h // kernel, kernel, w // kernel, kernel).mean(axis=(3, 5))

    def adjoint(g):
        spread = np.repeat(np.repeat(g, kernel, axis=2), kernel, axis=3)
        return (spread / (kernel * kernel),)

    return _record(Tensor(out), (x,), adjoint)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))
    return _record(Tensor(out), (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),))


def heaviside_surrogate(u: Tensor, threshold: float, cfg: SurrogateConfig = SurrogateConfig()) -> Tensor:
    """Spike where ``u >= threshold``; backward uses the sigmoid surrogate.

    With ``cfg.relaxed_forward`` the forward value is the sigmoid itself,
    which makes the whole network smooth for finite-difference checks.
    """
    shifted = u.data - threshold
    if cfg.relaxed_forward:
        out = _sigmoid(cfg.alpha * shifted)
    else:
        out = (shifted >= 0.0).astype(np.float64)
    return _record(Tensor(out), (u,), lambda g: (g * surrogate_grad(shifted, cfg.alpha),))


def surrogate_grad(x, alpha: float = 4.0) -> np.ndarray:
    z = alpha * np.asarray(x, dtype=np.float64)
    # sigma(z) * sigma(-z) rather than sigma * (1 - sigma), which cancels for large z
    return alpha * _sigmoid(z) * _sigmoid(-z)


def or_combine(a: Tensor, b: Tensor) -> Tensor:
    """Differentiable logical OR: ``a + b - a*b``."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    out = a.data + b.data - a.data * b.data
    return _record(Tensor(out), (a, b), lambda g: (g * (1.0 - b.data), g * (1.0 - a.data)))


def add_combine(a: Tensor, b: Tensor) -> Tensor:
    """Arithmetic residual, kept for the ADD ablation."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    return _record(Tensor(a.data + b.data), (a, b), lambda g: (g, g))


def lif_membrane(u_prev: Tensor | None, current: Tensor, s_prev: Tensor | None, tau: float, u_th: float) -> Tensor:
    """``tau * u_prev + current - s_prev * u_th`` (soft reset by subtraction)."""
    out = current.data.copy()
    inputs = [current]
    if u_prev is not None:
        if u_prev.shape != current.shape:
            raise ShapeMismatch(f"membrane {u_prev.shape} vs input {current.shape}")
        out += tau * u_prev.data
    if s_prev is not None:
        out -= u_th * s_prev.data

    def adjoint(g):
        grads = [g]
        if u_prev is not None:
            grads.append(tau * g)
        if s_prev is not None:
            grads.append(-u_th * g)
        return tuple(grads)

    if u_prev is not None:
        inputs.append(u_prev)
    if s_prev is not None:
        inputs.append(s_prev)
    return _record(Tensor(out), tuple(inputs), adjoint)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _record(Tensor(s), (x,), lambda g: (g * s * (1.0 - s),))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeMismatch(f"linear bias {b.shape}")
        out = out + b.data

    def adjoint(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if b.requires_grad else None)

    return _record(Tensor(out), (x, w, b) if b is not None else (x, w), adjoint)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean cross-entropy of integer labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"logits {logits.shape} vs {labels.shape[0]} labels")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    logp = _log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def adjoint(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (float(g) / n),)

    return _record(Tensor(loss), (logits,), adjoint)


def soft_cross_entropy(logits: Tensor, target_logits: np.ndarray, temperature: float = 1.0) -> Tensor:
    """Distillation loss against temperature-softened target logits."""
    target = np.asarray(target_logits, dtype=np.float64)
    if target.shape != logits.shape:
        raise ShapeMismatch(f"target {target.shape} vs logits {logits.shape}")
    n = logits.shape[0]
    p = np.exp(_log_softmax(target / temperature))
    logq = _log_softmax(logits.data / temperature)
    loss = -(p * logq).sum() / n

    def adjoint(g):
        return ((np.exp(logq) - p) * (float(g) / (n * temperature)),)

    return _record(Tensor(loss), (logits,), adjoint)


def squared_distance(x: Tensor, anchor: np.ndarray) -> Tensor:
    """``sum((x - anchor)**2)`` with the anchor held constant."""
    diff = x.data - anchor
    return _record(Tensor(np.sum(diff * diff)), (x,), lambda g: (2.0 * float(g) * diff,))
