"""Finite-difference verification of every differentiable op at 64-bit precision.

Each case builds a random instance, reduces the op output to a scalar by a
fixed random projection, and compares the reverse-mode gradient of every
input against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import losses
from . import nn
from . import tensor as T
from .tensor import Tensor

H = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_err: float
    passed: bool


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), with 0 for two zero arrays."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numerical_gradient(f: Callable[[], Tensor], x: Tensor, h: float = H) -> np.ndarray:
    g = np.zeros_like(x.data)
    flat, gflat = x.data.reshape(-1), g.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f().item()
            flat[i] = old - h
            down = f().item()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
    return g


def check_gradient(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = H) -> float:
    """Largest relative error between analytic and numerical gradients of ``f``."""
    for x in inputs:
        x.grad = None
    f().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    return max(rel_error(a, numerical_gradient(f, x, h)) for a, x in zip(analytic, inputs))


def _leaf(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.uniform(gap, 1.5, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _off_kinks(rng, shape):
    """Values on both sides of the +-0.5 clip bounds but never near them."""
    x = rng.uniform(0.05, 0.4, shape) + rng.choice([0.0, 0.5], shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _distinct(rng, shape):
    """Random values whose pairwise gaps exceed the difference step."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.1 + rng.uniform(0, 0.05, n)).reshape(shape) - n * 0.05


def _projected(op: Callable[..., Tensor], inputs: list[Tensor], rng) -> Callable[[], Tensor]:
    """Scalar objective sum(op(*inputs) * R) for a fixed random R."""
    with T.no_grad():
        shape = op(*inputs).shape
    R = Tensor(rng.standard_normal(shape))
    return lambda: T.sum(T.mul(op(*inputs), R) if shape else T.mul(op(*inputs), R))


def _unary(op, gen):
    def make(rng):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        x = _leaf(gen(rng, shape))
        return _projected(op, [x], rng), [x]

    return make


def _binary(op, gen_b=None):
    def make(rng):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        a = _leaf(rng.standard_normal(shape))
        b = _leaf(gen_b(rng, shape) if gen_b else rng.standard_normal(shape))
        if rng.random() < 0.3:
            b = _leaf(gen_b(rng, ()) if gen_b else rng.standard_normal(()))
        return _projected(op, [a, b], rng), [a, b]

    return make


def _reduction(op):
    def make(rng):
        shape = tuple(rng.integers(2, 5, size=3))
        axis = [None, 0, 1, 2, (0, 2), (1, 2)][rng.integers(0, 6)]
        keep = bool(rng.integers(0, 2))
        x = _leaf(_distinct(rng, shape))
        return _projected(lambda a: op(a, axis, keep), [x], rng), [x]

    return make


def _case_matmul(rng):
    m, k, n = rng.integers(1, 5, size=3)
    a, b = _leaf(rng.standard_normal((m, k))), _leaf(rng.standard_normal((k, n)))
    return _projected(T.matmul, [a, b], rng), [a, b]


def _case_shape(rng):
    x = _leaf(rng.standard_normal((2, 3, 4)))
    op = lambda a: T.transpose(T.reshape(a, (6, 4)), (1, 0))
    return _projected(op, [x], rng), [x]


def _case_broadcast(rng):
    x = _leaf(rng.standard_normal((3, 1)))
    return _projected(lambda a: T.broadcast_to(a, (2, 3, 4)), [x], rng), [x]


def _case_getitem(rng):
    x = _leaf(rng.standard_normal((4, 5)))
    idx = (slice(1, 3), np.array([0, 2, 2]))
    return _projected(lambda a: T.getitem(a, idx), [x], rng), [x]


def _case_l2norm(rng):
    x = _leaf(rng.standard_normal((3, 5)))
    return _projected(lambda a: T.l2_normalize(a, axis=1), [x], rng), [x]


def _case_conv(rng):
    cin, cout = rng.integers(1, 4, size=2)
    k = int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    size = int(rng.integers(k, 7))
    x = _leaf(rng.standard_normal((2, cin, size, size)))
    w = _leaf(rng.standard_normal((cout, cin, k, k)))
    b = _leaf(rng.standard_normal(cout))
    return _projected(lambda a, ww, bb: nn.conv2d(a, ww, bb, stride, pad), [x, w, b], rng), [x, w, b]


def _case_tconv(rng):
    cin, cout = rng.integers(1, 4, size=2)
    k, stride = 4, 2
    x = _leaf(rng.standard_normal((2, cin, int(rng.integers(1, 4)), int(rng.integers(1, 4)))))
    w = _leaf(rng.standard_normal((cin, cout, k, k)))
    b = _leaf(rng.standard_normal(cout))
    return _projected(lambda a, ww, bb: nn.conv_transpose2d(a, ww, bb, stride, 1), [x, w, b], rng), [x, w, b]


def _case_gmp(rng):
    x = _leaf(_distinct(rng, (2, 3, 4, 4)))
    return _projected(nn.global_max_pool, [x], rng), [x]


def _case_arcface(rng):
    b, c, k = 4, 5, int(rng.integers(2, 5))
    F = _leaf(rng.uniform(0.1, 1.0, (b, c)))
    W = _leaf(rng.standard_normal((k, c)))
    labels = rng.integers(0, k, size=b)
    cfg = losses.LossConfig(1.0, float(rng.uniform(0, 0.6)), float(rng.uniform(1, 30)))
    return (lambda: losses.arcface_loss(F, W, labels, cfg)), [F, W]


def _case_mse(rng):
    shape = (2, 1, 3, 3)
    r, t = _leaf(rng.standard_normal(shape)), _leaf(rng.standard_normal(shape))
    return (lambda: losses.mse_loss(r, t)), [r, t]


def _case_chain(rng):
    """Three-op composite: sum(tanh(x * y) * exp(x))."""
    x, y = _leaf(rng.standard_normal((3, 4))), _leaf(rng.standard_normal((3, 4)))
    return (lambda: T.sum(T.mul(T.tanh(T.mul(x, y)), T.exp(x)))), [x, y]


def cases() -> dict[str, Callable]:
    # Resolve ops through the module at call time so patched rules are exercised.
    return {
        "add": _binary(lambda a, b: T.add(a, b)),
        "sub": _binary(lambda a, b: T.sub(a, b)),
        "mul": _binary(lambda a, b: T.mul(a, b)),
        "div": _binary(lambda a, b: T.div(a, b), _away_from_zero),
        "neg": _unary(lambda a: T.neg(a), lambda r, s: r.standard_normal(s)),
        "exp": _unary(lambda a: T.exp(a), lambda r, s: r.standard_normal(s)),
        "log": _unary(lambda a: T.log(a), lambda r, s: r.uniform(0.1, 3, s)),
        "relu": _unary(lambda a: T.relu(a), _away_from_zero),
        "abs": _unary(lambda a: T.abs(a), _away_from_zero),
        "tanh": _unary(lambda a: T.tanh(a), lambda r, s: r.standard_normal(s)),
        "sqrt": _unary(lambda a: T.sqrt(a), lambda r, s: r.uniform(0.1, 3, s)),
        "cos": _unary(lambda a: T.cos(a), lambda r, s: r.standard_normal(s)),
        "arccos": _unary(lambda a: T.arccos(a), lambda r, s: r.uniform(-0.9, 0.9, s)),
        "clip": _unary(lambda a: T.clip(a, -0.5, 0.5), _off_kinks),
        "sum": _reduction(lambda a, ax, k: T.sum(a, ax, k)),
        "mean": _reduction(lambda a, ax, k: T.mean(a, ax, k)),
        "max": _reduction(lambda a, ax, k: T.max(a, ax, k)[0]),
        "matmul": _case_matmul,
        "reshape/transpose": _case_shape,
        "broadcast_to": _case_broadcast,
        "getitem": _case_getitem,
        "l2_normalize": _case_l2norm,
        "conv2d": _case_conv,
        "conv_transpose2d": _case_tconv,
        "global_max_pool": _case_gmp,
        "arcface_loss": _case_arcface,
        "mse_loss": _case_mse,
        "chain": _case_chain,
    }


def run_suite(
    instances: int = 20, seed: int = 0, tol: float = TOLERANCE, only: Sequence[str] | None = None
) -> list[CheckResult]:
    results = []
    rng = np.random.default_rng(seed)
    for name, make in cases().items():
        if only is not None and name not in only:
            continue
        worst = 0.0
        for _ in range(instances):
            f, inputs = make(rng)
            worst = max(worst, check_gradient(f, inputs))
        results.append(CheckResult(name, instances, worst, worst <= tol))
    return results
