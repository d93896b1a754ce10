"""Dense real tensor operations used by the models.

Tensors are plain float64 ndarrays (row-major).  Everything here is
immutable-in/new-out; quantizers, not these ops, are responsible for any
grid constraints.  Shape mismatches raise rather than broadcast.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "matvec",
    "matvec_t",
    "axpy",
    "scale",
    "add",
    "sub",
    "hadamard",
    "norm2_sq",
    "softmax_logloss",
    "softmax_logloss_batch",
]


def _check_same_shape(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")


def matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """A @ x for A of shape (r, c) and x of shape (c,)."""
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {x.shape}")
    return a @ x


def matvec_t(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """A.T @ y for A of shape (r, c) and y of shape (r,)."""
    if a.ndim != 2 or y.ndim != 1 or a.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape}.T @ {y.shape}")
    return a.T @ y


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_same_shape(x, y)
    return alpha * x + y


def scale(alpha: float, x: np.ndarray) -> np.ndarray:
    return alpha * x


def add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_same_shape(x, y)
    return x + y


def sub(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_same_shape(x, y)
    return x - y


def hadamard(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_same_shape(x, y)
    return x * y


def norm2_sq(x: np.ndarray) -> float:
    return float(np.dot(x.ravel(), x.ravel()))


def softmax_logloss(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax(logits) against label, with its gradient.

    Computed via max-shifted log-sum-exp so huge logits cannot overflow.
    Returns (loss, dloss/dlogits); the gradient is softmax - onehot and
    sums to zero up to rounding.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValueError(f"logits must be a vector, got shape {logits.shape}")
    k = logits.shape[0]
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range [0, {k})")
    m = logits.max()
    ex = np.exp(logits - m)
    z = ex.sum()
    loss = float(np.log(z) + m - logits[label])
    dlogits = ex / z
    dlogits[label] -= 1.0
    return loss, dlogits


def softmax_logloss_batch(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch of logit rows.

    Returns (mean loss, dloss/dlogits) where the gradient already carries
    the 1/batch factor.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"shape mismatch: logits {logits.shape}, labels {labels.shape}")
    b, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    z = ex.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    loss = float(np.mean(np.log(z[:, 0]) + m[:, 0] - logits[rows, labels]))
    dlogits = ex / z
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / b
