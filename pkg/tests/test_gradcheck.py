import time

import numpy as np
import pytest

from xfr import tensor as T
from xfr.gradcheck import TOLERANCE, cases, numerical_gradient, rel_error, run_suite
from xfr.tensor import Tensor


def test_numerical_gradient_of_square():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    g = numerical_gradient(lambda: T.sum(x * x), x)
    np.testing.assert_allclose(g, 2 * x.data, rtol=1e-8)


def test_rel_error_scale_free():
    assert rel_error(np.zeros(3), np.zeros(3)) == 0
    assert rel_error(np.array([1.0]), np.array([1.1])) == pytest.approx(rel_error(np.array([1e-6]), np.array([1.1e-6])))


def test_full_suite_passes_within_budget():
    start = time.perf_counter()
    results = run_suite()
    elapsed = time.perf_counter() - start
    assert {r.name for r in results} == set(cases())
    assert all(r.instances >= 20 for r in results)
    bad = [(r.name, r.max_rel_err) for r in results if not r.passed]
    assert not bad
    assert elapsed < 60


def test_corrupted_backward_is_caught(monkeypatch):
    good = T.tanh

    def skewed(a):
        # same forward values, gradient off by 0.1
        return good(a) + (a - Tensor(a.data)) * 0.1

    monkeypatch.setattr(T, "tanh", skewed)
    results = {r.name: r for r in run_suite(instances=3, only=["tanh", "chain", "exp"])}
    assert not results["tanh"].passed and results["tanh"].max_rel_err > TOLERANCE
    assert not results["chain"].passed
    assert results["exp"].passed
