"""Linear algebra kernels and the softmax loss."""

import math

import numpy as np
import pytest

from lowprec.quant import RngStream
from lowprec.tensor import (
    add,
    axpy,
    hadamard,
    matvec,
    matvec_t,
    norm2_sq,
    scale,
    softmax_logloss,
    softmax_logloss_batch,
    sub,
)


def test_matvec_basic():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert matvec(a, np.array([1.0, 1.0])).tolist() == [3.0, 7.0]


def test_matvec_identity():
    x = np.array([0.3, -1.2, 5.0])
    assert np.array_equal(matvec(np.eye(3), x), x)


def test_matvec_t_ones():
    a = np.ones((2, 3))
    assert matvec_t(a, np.array([1.0, 1.0])).tolist() == [2.0, 2.0, 2.0]


def test_matvec_shape_errors():
    with pytest.raises(ValueError):
        matvec(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        matvec_t(np.ones((2, 3)), np.ones(3))


def test_elementwise_ops():
    x, y = np.array([1.0, 2.0]), np.array([0.0, 1.0])
    assert axpy(2.0, x, y).tolist() == [2.0, 5.0]
    assert norm2_sq(np.array([3.0, 4.0])) == 25.0
    assert np.array_equal(sub(x, x), np.zeros(2))
    assert add(x, y).tolist() == [1.0, 3.0]
    assert hadamard(x, y).tolist() == [0.0, 2.0]
    assert scale(-1.0, x).tolist() == [-1.0, -2.0]
    with pytest.raises(ValueError):
        axpy(1.0, x, np.ones(3))


class TestSoftmaxLogloss:
    def test_uniform_logits(self):
        loss, grad = softmax_logloss(np.zeros(10), 3)
        assert loss == pytest.approx(math.log(10), abs=1e-12)
        assert grad[3] == pytest.approx(0.1 - 1.0)

    def test_max_shift_stability(self):
        loss, grad = softmax_logloss(np.array([1000.0, 0.0]), 0)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(grad).all()

    def test_gradient_matches_finite_differences(self):
        rng = RngStream(42)
        logits = 3.0 * rng.normals(7)
        label = 2
        _, grad = softmax_logloss(logits, label)
        h = 1e-6
        for i in range(7):
            e = np.zeros(7)
            e[i] = h
            lp, _ = softmax_logloss(logits + e, label)
            lm, _ = softmax_logloss(logits - e, label)
            fd = (lp - lm) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_gradient_sums_to_zero_probs_to_one(self):
        rng = RngStream(4)
        logits = 5.0 * rng.normals(10)
        _, grad = softmax_logloss(logits, 0)
        probs = grad.copy()
        probs[0] += 1.0
        assert abs(probs.sum() - 1.0) < 1e-12
        assert abs(grad.sum()) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_logloss(np.zeros(4), 4)
        with pytest.raises(ValueError):
            softmax_logloss(np.zeros(4), -1)


def test_batch_loss_matches_single_sample_mean():
    rng = RngStream(8)
    logits = rng.normals(15).reshape(3, 5)
    labels = np.array([0, 4, 2])
    loss_b, grad_b = softmax_logloss_batch(logits, labels)
    singles = [softmax_logloss(logits[i], labels[i]) for i in range(3)]
    assert loss_b == pytest.approx(np.mean([s[0] for s in singles]), abs=1e-12)
    stacked = np.stack([s[1] for s in singles]) / 3
    assert np.allclose(grad_b, stacked, atol=1e-15)
