import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xfr import tensor as T
from xfr.gradcheck import check_gradient
from xfr.losses import LossConfig, arcface_loss, margin_target, mse_loss, total_loss
from xfr.optim import SGD, Adam, clip_grad_norm, cosine_lr
from xfr.tensor import Tensor


def f64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def softmax_ce(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(labels)), labels].mean()


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def test_config_validation():
    assert LossConfig() == LossConfig(1.0, 0.5, 30.0)
    for bad in [dict(lam=-1), dict(margin=math.pi / 2), dict(scale=0)]:
        with pytest.raises(ValueError):
            LossConfig(**bad)


def test_margin_free_is_plain_cross_entropy(rng):
    F, W = rng.standard_normal((5, 4)), rng.standard_normal((3, 4))
    y = np.array([0, 2, 1, 1, 0])
    got = arcface_loss(f64(F), f64(W), y, LossConfig(margin=0.0, scale=1.0)).item()
    want = softmax_ce(unit_rows(F) @ unit_rows(W).T, y)
    assert got == pytest.approx(want, rel=1e-6)


def test_single_identity_loss_is_zero(rng):
    loss = arcface_loss(f64(rng.standard_normal((4, 3))), f64(rng.standard_normal((1, 3))), [0, 0, 0, 0])
    assert loss.item() == 0


def test_two_class_closed_form():
    loss = arcface_loss(f64([[1.0, 0.0]]), f64([[1.0, 0.0], [0.0, 1.0]]), [0], LossConfig(1.0, 0.5, 30.0))
    # cos(theta_y) is clamped just below 1 before the arccos
    expected = -math.log(math.exp(30 * math.cos(0.5)) / (math.exp(30 * math.cos(0.5)) + math.exp(0.0)))
    assert loss.item() == pytest.approx(expected, rel=1e-5)


def test_zero_feature_row_rejected():
    with pytest.raises(ZeroDivisionError):
        arcface_loss(f64([[0.0, 0.0]]), f64([[1.0, 0.0], [0.0, 1.0]]), [0])


def test_labels_validated():
    with pytest.raises(ValueError):
        arcface_loss(f64([[1.0, 0.0]]), f64([[1.0, 0.0]]), [1])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.05, 1.5))
def test_margin_monotonicity(theta, m):
    if theta >= math.pi - m:
        return
    F = f64([[math.cos(theta), math.sin(theta)]])
    W = f64([[1.0, 0.0], [0.0, 1.0]])
    with_m = arcface_loss(F, W, [0], LossConfig(1.0, m, 10.0)).item()
    without = arcface_loss(F, W, [0], LossConfig(1.0, 0.0, 10.0)).item()
    assert with_m > without


def test_margin_target_decreases_over_full_range():
    # past pi - m the plain cos(theta + m) would rise again
    theta = np.linspace(0.01, math.pi - 0.01, 400)
    for m in (0.2, 0.5, 1.0):
        t = margin_target(f64(np.cos(theta)), m).data
        assert np.all(np.diff(t) < 0)
        assert np.all(t < np.cos(theta))


def test_margin_target_branches_meet_at_right_angle():
    m = 0.5
    below, above = margin_target(f64([1e-9, -1e-9]), m).data
    assert below == pytest.approx(-math.sin(m), abs=1e-8)
    assert above == pytest.approx(-math.sin(m), abs=1e-8)
    theta = np.linspace(1.6, 3.1, 20)
    penalty = np.cos(theta) - margin_target(f64(np.cos(theta)), m).data
    np.testing.assert_allclose(penalty, math.sin(m), rtol=1e-12)
    inside = np.linspace(0.1, 1.5, 20)
    np.testing.assert_allclose(margin_target(f64(np.cos(inside)), m).data, np.cos(inside + m), rtol=1e-9)


def test_arcface_gradient_in_fallback_region(rng):
    F = f64(-np.abs(rng.standard_normal((3, 4))) - 0.1, grad=True)
    W = f64(np.abs(rng.standard_normal((2, 4))) + 0.1, grad=True)
    err = check_gradient(lambda: arcface_loss(F, W, [0, 1, 0], LossConfig(1.0, 0.5, 5.0)), [F, W])
    assert err <= 1e-4


def test_mse_examples_and_gradient(rng):
    a = f64(rng.standard_normal((2, 1, 3, 3)), grad=True)
    assert mse_loss(a, a.data.copy()).item() == 0
    assert mse_loss(f64(np.zeros((2, 2))), np.full((2, 2), 1.5)).item() == pytest.approx(2.25)
    target = rng.standard_normal((2, 1, 3, 3))
    mse_loss(a, target).backward()
    np.testing.assert_allclose(a.grad, 2 * (a.data - target) / a.size, rtol=1e-12)
    b = f64(rng.standard_normal((2, 1, 3, 3)), grad=True)
    assert check_gradient(lambda: mse_loss(b, target), [b]) <= 1e-4
    with pytest.raises(ValueError):
        mse_loss(a, np.zeros((3,)))


def test_total_loss_examples():
    assert total_loss(f64(2.0), f64(3.0), 1.0).item() == 5
    assert total_loss(f64(2.0), f64(3.0), 0.0).item() == 2


def test_total_gradient_is_sum_of_terms(rng):
    w0 = rng.standard_normal((3, 4))
    x = rng.standard_normal((5, 3))
    y = np.array([0, 1, 2, 1, 0])
    head = f64(rng.standard_normal((3, 4)))
    target = rng.standard_normal((5, 4))

    def grads(use_id, use_rec):
        w = f64(w0, grad=True)
        feats = T.relu(T.matmul(f64(x), w)) + 0.1
        l_id = arcface_loss(feats, head, y)
        l_rec = mse_loss(feats, target)
        loss = total_loss(l_id if use_id else l_id * 0.0, l_rec if use_rec else l_rec * 0.0, 0.7)
        loss.backward()
        return w.grad

    np.testing.assert_allclose(grads(True, True), grads(True, False) + grads(False, True), rtol=1e-10, atol=1e-14)


def test_optimizers_with_zero_gradient_leave_parameters():
    p = f64(np.arange(4.0), grad=True)
    before = p.data.copy()
    for opt in (SGD([p], lr=0.1, momentum=0.9), Adam([p], lr=0.1)):
        p.grad = np.zeros_like(p.data)
        opt.step()
        assert np.abs(p.data - before).max() < 1e-7
    assert p.data.tobytes() == before.tobytes()


def test_sgd_momentum_update():
    p = f64([1.0], grad=True)
    opt = SGD([p], lr=0.1, momentum=0.9)
    for _ in range(2):
        p.grad = np.array([1.0])
        opt.step()
    # v1 = 1, v2 = 1.9; p = 1 - 0.1 - 0.19
    assert p.data[0] == pytest.approx(0.71)


def test_adam_first_step_is_lr_sized():
    p = f64([1.0, -2.0], grad=True)
    opt = Adam([p], lr=0.01)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    np.testing.assert_allclose(p.data, [0.99, -1.99], rtol=1e-6)


def test_clip_grad_norm():
    a, b = f64([3.0], grad=True), f64([4.0], grad=True)
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0)
    assert clip_grad_norm([a, b], 10.0) == pytest.approx(1.0)


def test_cosine_schedule():
    assert cosine_lr(0.02, 0, 100) == 0.02
    assert cosine_lr(0.02, 50, 100) == pytest.approx(0.01)
    assert cosine_lr(0.02, 100, 100) == pytest.approx(0.0)
