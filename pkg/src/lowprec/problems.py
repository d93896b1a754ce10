"""Adapters that bind objectives and datasets to the training loop.

A problem owns its initial parameters, a stochastic gradient oracle, and
the metric set evaluated at checkpoints.  One problem instance serves one
run (it may hold iterator state); construct a fresh one per arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import models
from .data import MnistDataset, batch_iter
from .models import LinRegDataset, LogRegModel, MlpModel, QuadraticObjective
from .quant import QuantizerSpec, RngStream

__all__ = [
    "QuadraticProblem",
    "LinRegProblem",
    "LogRegProblem",
    "MlpProblem",
    "full_grad_norm",
]


class QuadraticProblem:
    """Noisy quadratic; metric is the squared distance to the optimum."""

    name = "quadratic"

    def __init__(
        self,
        objective: QuadraticObjective,
        w0: np.ndarray,
        q_grad: QuantizerSpec | None = None,
    ):
        self.objective = objective
        self.w0 = np.asarray(w0, dtype=np.float64)
        self.q_grad = q_grad or QuantizerSpec.identity()

    def init_params(self) -> list[np.ndarray]:
        return [self.w0.copy()]

    def grad_sample(self, params, t, rng: RngStream) -> list[np.ndarray]:
        g = models.quadratic_grad_sample(self.objective, params[0], rng)
        return [self.q_grad.apply(g, rng)]

    def full_grad_norm(self, params) -> float:
        return float(np.linalg.norm(models.quadratic_full_grad(self.objective, params[0])))

    def metrics(self, params) -> dict:
        diff = params[0] - self.objective.w_star
        return {
            "dist_sq": float(diff @ diff),
            "grad_norm": self.full_grad_norm(params),
        }


class LinRegProblem:
    """Least squares with per-step iid sample batches.

    dist_sq is measured against the exact normal-equations optimum, which
    is solved once at construction.
    """

    name = "linreg"

    def __init__(
        self,
        data: LinRegDataset,
        batch_size: int = 1,
        w0: np.ndarray | None = None,
        q_grad: QuantizerSpec | None = None,
    ):
        self.data = data
        self.batch_size = int(batch_size)
        self.w_star = models.linreg_solve_exact(data)
        self.w0 = np.zeros(data.dim) if w0 is None else np.asarray(w0, dtype=np.float64)
        self.q_grad = q_grad or QuantizerSpec.identity()

    def init_params(self) -> list[np.ndarray]:
        return [self.w0.copy()]

    def grad_sample(self, params, t, rng: RngStream) -> list[np.ndarray]:
        idx = rng.integers(0, self.data.n, self.batch_size)
        g = models.linreg_grad_sample(self.data, params[0], idx)
        return [self.q_grad.apply(g, rng)]

    def full_grad_norm(self, params) -> float:
        return float(np.linalg.norm(models.linreg_full_grad(self.data, params[0])))

    def metrics(self, params) -> dict:
        diff = params[0] - self.w_star
        return {
            "dist_sq": float(diff @ diff),
            "grad_norm": self.full_grad_norm(params),
            "train_loss": models.linreg_loss(self.data, params[0]),
        }


class LogRegProblem:
    """Softmax regression on image data, epoch-shuffled batches."""

    name = "logreg"

    def __init__(
        self,
        train: MnistDataset,
        batch_size: int = 100,
        l2: float = 1e-4,
        test: MnistDataset | None = None,
        batch_seed: int = 0,
        q_grad: QuantizerSpec | None = None,
    ):
        self.train = train
        self.test = test
        self.l2 = float(l2)
        self.n_classes = 10
        self.q_grad = q_grad or QuantizerSpec.identity()
        self._batches = batch_iter(
            train.n, batch_size, RngStream.derive(batch_seed, "logreg-batches")
        )

    def init_params(self) -> list[np.ndarray]:
        d = self.train.images.shape[1]
        return [np.zeros((self.n_classes, d)), np.zeros(self.n_classes)]

    def _model(self, params) -> LogRegModel:
        return LogRegModel(weights=params[0], bias=params[1], l2=self.l2)

    def grad_sample(self, params, t, rng: RngStream) -> list[np.ndarray]:
        idx = next(self._batches)
        _, gw, gb = models.logreg_loss_grad(
            self._model(params), self.train.images[idx], self.train.labels[idx]
        )
        return [self.q_grad.apply(gw, rng), self.q_grad.apply(gb, rng)]

    def full_grad_norm(self, params) -> float:
        _, gw, gb = models.logreg_loss_grad(
            self._model(params), self.train.images, self.train.labels
        )
        return math.sqrt(float(np.sum(gw * gw)) + float(np.sum(gb * gb)))

    def metrics(self, params) -> dict:
        model = self._model(params)
        loss, gw, gb = models.logreg_loss_grad(
            model, self.train.images, self.train.labels
        )
        out = {
            "train_loss": loss,
            "train_err": models.logreg_error(model, self.train.images, self.train.labels),
            "grad_norm": math.sqrt(float(np.sum(gw * gw)) + float(np.sum(gb * gb))),
        }
        if self.test is not None:
            out["test_err"] = models.logreg_error(model, self.test.images, self.test.labels)
        return out


class MlpProblem:
    """Two-layer ReLU network trained with quantized forward/backward."""

    name = "mlp"

    def __init__(
        self,
        train: MnistDataset,
        model: MlpModel | None = None,
        batch_size: int = 100,
        test: MnistDataset | None = None,
        init_seed: int = 0,
        batch_seed: int = 0,
    ):
        self.train = train
        self.test = test
        self.model = model or MlpModel()
        self._init_seed = init_seed
        self._batches = batch_iter(
            train.n, batch_size, RngStream.derive(batch_seed, "mlp-batches")
        )

    def init_params(self) -> list[np.ndarray]:
        return models.mlp_init(self.model, RngStream.derive(self._init_seed, "mlp-init"))

    def grad_sample(self, params, t, rng: RngStream) -> list[np.ndarray]:
        idx = next(self._batches)
        _, grads = models.mlp_forward_backward(
            self.model, params, self.train.images[idx], self.train.labels[idx], rng
        )
        return grads

    def full_grad_norm(self, params) -> float:
        ident = MlpModel(self.model.in_dim, self.model.hidden, self.model.out_dim)
        total = 0.0
        n = self.train.n
        for start in range(0, n, 1000):
            sl = slice(start, min(start + 1000, n))
            w = (sl.stop - sl.start) / n
            _, grads = models.mlp_forward_backward(
                ident, params, self.train.images[sl], self.train.labels[sl]
            )
            if start == 0:
                acc = [w * g for g in grads]
            else:
                acc = [a + w * g for a, g in zip(acc, grads)]
        for g in acc:
            total += float(np.sum(g * g))
        return math.sqrt(total)

    def metrics(self, params) -> dict:
        loss, err = models.mlp_loss_error(params, self.train.images, self.train.labels)
        out = {"train_loss": loss, "train_err": err}
        if self.test is not None:
            _, terr = models.mlp_loss_error(params, self.test.images, self.test.labels)
            out["test_err"] = terr
        return out


def full_grad_norm(problem, params) -> float:
    """Deterministic full-dataset gradient norm of the given parameters."""
    return problem.full_grad_norm(params)
