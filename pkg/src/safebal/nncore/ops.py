"""Neural-net primitives with explicit forward/backward pairs.

Every forward returns (output, cache); the matching backward consumes the
upstream gradient and the cache and returns exact analytic gradients.
All math is float64. Dense weights are (out, in) as serialized.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, TrainingError

BCE_CLAMP = 1e-7


def uniform_init(rng, shape, fan_in):
    """Weight init: U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, shape)


# ---------------------------------------------------------------- primitives

def dense_forward(x, W, b):
    """y = x @ W.T + b for x (n, in), W (out, in), b (out,)."""
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ContractError(f"dense: input {x.shape} incompatible with W {W.shape}")
    return x @ W.T + b, (x, W)


def dense_backward(dy, cache):
    x, W = cache
    dW = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ W
    return dx, dW, db


def relu_forward(x):
    return np.maximum(x, 0.0), (x > 0.0)


def relu_backward(dy, cache):
    return dy * cache


def sigmoid(x):
    """Numerically stable sigmoid via tanh; exact 0.5 at 0."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def sigmoid_forward(x):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(dy, cache):
    y = cache
    return dy * y * (1.0 - y)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, cache):
    y = cache
    return dy * (1.0 - y * y)


def dropout_forward(x, p, rng, training):
    """Inverted dropout: scales by 1/(1-p) at train time, identity at eval.

    p == 0 is the identity in both modes (returns x itself).
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0 or not training:
        return x, None
    mask = (rng.uniform(size=x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dy, cache):
    if cache is None:
        return dy
    return dy * cache


def multiply_forward(a, b):
    if a.shape != b.shape:
        raise ContractError(f"elementwise product: shapes {a.shape} vs {b.shape}")
    return a * b, (a, b)


def multiply_backward(dy, cache):
    a, b = cache
    return dy * b, dy * a


def concat_forward(parts, axis=-1):
    return np.concatenate(parts, axis=axis), (axis, [p.shape[axis] for p in parts])


def concat_backward(dy, cache):
    axis, sizes = cache
    return np.split(dy, np.cumsum(sizes)[:-1], axis=axis)


# --------------------------------------------------------------------- losses

def bce_with_logits(logits, targets, weights=None):
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.

    Probabilities are clamped to [BCE_CLAMP, 1-BCE_CLAMP]; the returned
    gradient is exactly zero where the clamp is active (the loss is flat
    there), so it matches finite differences everywhere.

    Returns (loss, dlogits). ``weights`` multiplies per-sample terms; the
    mean divides by n either way.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ContractError(f"bce: shapes {logits.shape} vs {targets.shape}")
    n = logits.size
    if n == 0:
        raise ContractError("bce: empty batch")
    p = sigmoid(logits)
    clamped = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    terms = -(targets * np.log(clamped) + (1.0 - targets) * np.log1p(-clamped))
    if weights is not None:
        terms = terms * weights
    loss = float(terms.sum() / n)
    active = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    dlogits = np.where(active, p - targets, 0.0) / n
    if weights is not None:
        dlogits = dlogits * weights
    return loss, dlogits


def squared_error(pred, target):
    """Mean squared error; returns (loss, dpred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"mse: shapes {pred.shape} vs {target.shape}")
    diff = pred - target
    n = pred.size
    return float((diff * diff).sum() / n), 2.0 * diff / n


def require_finite(arrays, context=""):
    """Raise TrainingError if any array contains a non-finite value."""
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise TrainingError(f"non-finite values in {name} {context}".strip())
