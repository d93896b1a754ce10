"""Objectives and stochastic gradient oracles.

Four model families: a synthetic quadratic with controllable curvature and
gradient noise, least-squares linear regression, L2-regularized softmax
regression, and a small two-layer ReLU network whose forward/backward pass
quantizes activations, back-propagated errors, and weight gradients
per-tensor.  All gradients are plain float64; weight-side quantization is
the optimizer's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .quant import QuantizerSpec, RngStream
from .tensor import norm2_sq, softmax_logloss_batch

__all__ = [
    "QuadraticObjective",
    "LinRegDataset",
    "LogRegModel",
    "MlpModel",
    "quadratic_grad_sample",
    "quadratic_full_grad",
    "linreg_grad_sample",
    "linreg_full_grad",
    "linreg_loss",
    "linreg_solve_exact",
    "logreg_loss_grad",
    "logreg_error",
    "mlp_init",
    "mlp_forward_backward",
    "mlp_loss_error",
    "relu",
]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# quadratic objective  f(w) = (w - w*)^T A (w - w*) / 2
# ---------------------------------------------------------------------------


@dataclass
class QuadraticObjective:
    """Symmetric quadratic with smallest eigenvalue >= mu.

    noise_sigma parameterizes the total per-sample gradient noise: each
    sample adds (noise_sigma / sqrt(d)) * z with z standard normal per
    coordinate, so E||grad_sample - grad||^2 == noise_sigma**2 exactly.
    """

    a_matrix: np.ndarray
    w_star: np.ndarray
    mu: float
    noise_sigma: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"A must be square, got {a.shape}")
        if not np.allclose(a, a.T):
            raise ValueError("A must be symmetric")
        eigs = np.linalg.eigvalsh(a)
        if eigs.min() < self.mu - 1e-12:
            raise ValueError(
                f"smallest eigenvalue {eigs.min():.6g} below mu={self.mu:.6g}"
            )
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.a_matrix = a
        self.w_star = np.asarray(self.w_star, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.w_star.shape[0]


def quadratic_full_grad(obj: QuadraticObjective, w: np.ndarray) -> np.ndarray:
    return obj.a_matrix @ (w - obj.w_star)


def quadratic_grad_sample(
    obj: QuadraticObjective, w: np.ndarray, rng: RngStream
) -> np.ndarray:
    g = quadratic_full_grad(obj, w)
    if obj.noise_sigma > 0:
        g = g + (obj.noise_sigma / math.sqrt(obj.dim)) * rng.normals(obj.dim)
    return g


# ---------------------------------------------------------------------------
# linear regression  f(w) = (1/n) sum_i (w^T x_i - y_i)^2
# ---------------------------------------------------------------------------


@dataclass
class LinRegDataset:
    x: np.ndarray       # (n, d) design matrix
    y: np.ndarray       # (n,) targets
    w_init: np.ndarray  # (d,) generating weights

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.w_init = np.asarray(self.w_init, dtype=np.float64)
        if self.x.ndim != 2 or self.x.shape[0] == 0 or self.x.shape[1] == 0:
            raise ValueError(f"bad design matrix shape {self.x.shape}")
        if self.y.shape != (self.x.shape[0],):
            raise ValueError("y length must match number of rows of x")
        if not np.isfinite(self.x).all():
            raise ValueError("non-finite input")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def linreg_grad_sample(
    data: LinRegDataset, w: np.ndarray, batch: np.ndarray
) -> np.ndarray:
    """Mean over the batch of per-sample gradients 2 (w^T x_i - y_i) x_i."""
    batch = np.asarray(batch)
    if batch.size == 0:
        raise ValueError("empty batch")
    xb = data.x[batch]
    r = xb @ w - data.y[batch]
    return (2.0 / batch.size) * (xb.T @ r)


def linreg_full_grad(data: LinRegDataset, w: np.ndarray) -> np.ndarray:
    r = data.x @ w - data.y
    return (2.0 / data.n) * (data.x.T @ r)


def linreg_loss(data: LinRegDataset, w: np.ndarray) -> float:
    r = data.x @ w - data.y
    return float(np.mean(r * r))


def linreg_solve_exact(data: LinRegDataset) -> np.ndarray:
    """Least-squares optimum via Cholesky on the normal equations."""
    gram = data.x.T @ data.x
    try:
        w = cho_solve(cho_factor(gram), data.x.T @ data.y)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular system") from exc
    resid = float(np.linalg.norm(linreg_full_grad(data, w)))
    if resid >= 1e-6:
        raise ValueError(f"singular system (residual gradient norm {resid:.3g})")
    return w


# ---------------------------------------------------------------------------
# softmax regression with L2 penalty on the weight matrix (not the bias)
# ---------------------------------------------------------------------------


@dataclass
class LogRegModel:
    weights: np.ndarray  # (k, d)
    bias: np.ndarray     # (k,)
    l2: float = 0.0

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (k, d) with matching bias length")


def logreg_loss_grad(
    model: LogRegModel, images: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy + (l2/2)||W||^2 and its gradients over a batch."""
    if images.shape[0] == 0:
        raise ValueError("empty batch")
    logits = images @ model.weights.T + model.bias
    ce, dlogits = softmax_logloss_batch(logits, labels)
    loss = ce + 0.5 * model.l2 * norm2_sq(model.weights)
    gw = dlogits.T @ images + model.l2 * model.weights
    gb = dlogits.sum(axis=0)
    return loss, gw, gb


def logreg_error(model: LogRegModel, images: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of misclassified samples."""
    logits = images @ model.weights.T + model.bias
    return float(np.mean(np.argmax(logits, axis=1) != labels))


# ---------------------------------------------------------------------------
# two-layer ReLU network with per-tensor quantized forward/backward
# ---------------------------------------------------------------------------


@dataclass
class MlpModel:
    """784 -> hidden -> 10 ReLU network and its tensor quantizers.

    q_act quantizes every layer output, q_err the back-propagated error
    signals, and q_grad the weight/bias gradients; weight and momentum
    quantization happen in the optimizer.  With all three set to identity
    this is exactly standard backprop.
    """

    in_dim: int = 784
    hidden: int = 32
    out_dim: int = 10
    q_act: QuantizerSpec = field(default_factory=QuantizerSpec.identity)
    q_err: QuantizerSpec = field(default_factory=QuantizerSpec.identity)
    q_grad: QuantizerSpec = field(default_factory=QuantizerSpec.identity)


def mlp_init(model: MlpModel, rng: RngStream) -> list[np.ndarray]:
    """He-initialized parameter list [w1, b1, w2, b2]."""
    w1 = rng.normals(model.hidden * model.in_dim).reshape(model.hidden, model.in_dim)
    w1 *= math.sqrt(2.0 / model.in_dim)
    w2 = rng.normals(model.out_dim * model.hidden).reshape(model.out_dim, model.hidden)
    w2 *= math.sqrt(2.0 / model.hidden)
    return [w1, np.zeros(model.hidden), w2, np.zeros(model.out_dim)]


def _check_layer_finite(x: np.ndarray, layer: str) -> None:
    if not np.isfinite(x).all():
        raise ValueError(f"non-finite intermediate in {layer}")


def mlp_forward_backward(
    model: MlpModel,
    params: list[np.ndarray],
    images: np.ndarray,
    labels: np.ndarray,
    rng: RngStream | None = None,
) -> tuple[float, list[np.ndarray]]:
    """One quantized forward/backward pass over a batch.

    Layer outputs pass through q_act, error signals through q_err, and the
    resulting parameter gradients through q_grad.  Returns the batch loss
    (measured on the quantized activations, as trained) and gradients in
    the same order as params.
    """
    w1, b1, w2, b2 = params
    if images.shape[0] == 0:
        raise ValueError("empty batch")

    z1 = images @ w1.T + b1
    a1 = model.q_act.apply(relu(z1), rng)
    _check_layer_finite(a1, "layer 1 activations")
    z2 = a1 @ w2.T + b2
    a2 = model.q_act.apply(z2, rng)
    _check_layer_finite(a2, "layer 2 activations")

    loss, e2 = softmax_logloss_batch(a2, labels)  # top error is not quantized

    e1 = model.q_err.apply(e2 @ w2, rng)
    _check_layer_finite(e1, "layer 1 error signal")
    e1 = e1 * (z1 > 0)

    g2 = model.q_grad.apply(e2.T @ a1, rng)
    gb2 = model.q_grad.apply(e2.sum(axis=0), rng)
    g1 = model.q_grad.apply(e1.T @ images, rng)
    gb1 = model.q_grad.apply(e1.sum(axis=0), rng)
    _check_layer_finite(g1, "layer 1 gradients")
    _check_layer_finite(g2, "layer 2 gradients")
    return loss, [g1, gb1, g2, gb2]


def mlp_loss_error(
    params: list[np.ndarray], images: np.ndarray, labels: np.ndarray
) -> tuple[float, float]:
    """Plain-float loss and classification error of the stored weights."""
    w1, b1, w2, b2 = params
    a1 = relu(images @ w1.T + b1)
    logits = a1 @ w2.T + b2
    loss, _ = softmax_logloss_batch(logits, labels)
    err = float(np.mean(np.argmax(logits, axis=1) != labels))
    return loss, err
