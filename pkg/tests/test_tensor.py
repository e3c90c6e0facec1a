import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from xfr import tensor as T
from xfr.gradcheck import check_gradient, TOLERANCE
from xfr.tensor import GraphConsumedError, NonFiniteError, Tensor


def leaf(values, dtype=np.float64):
    return Tensor(np.asarray(values, dtype=dtype), requires_grad=True)


# -- elementwise ----------------------------------------------------------------


def test_relu_abs_mul_examples():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    np.testing.assert_allclose(T.abs(Tensor([-0.5, 0.3])).data, [0.5, 0.3], rtol=1e-7)
    np.testing.assert_array_equal(T.mul(Tensor([1.0, 2, 3]), Tensor([4.0, 5, 6])).data, [4, 10, 18])


def test_scalar_broadcast_both_sides():
    x = leaf([1.0, 2.0])
    y = 3.0 - x * 2.0
    np.testing.assert_array_equal(y.data, [1.0, -1.0])
    T.sum(y).backward()
    np.testing.assert_array_equal(x.grad, [-2.0, -2.0])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape mismatch"):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3,))))


def test_division_by_zero():
    with pytest.raises(ZeroDivisionError):
        T.div(Tensor([1.0, 2.0]), Tensor([1.0, 0.0]))


def test_non_finite_surfaces():
    with pytest.raises(NonFiniteError):
        T.exp(Tensor([1000.0]))
    with pytest.raises((NonFiniteError, ValueError)):
        T.log(Tensor([0.0]))


def test_integer_input_is_cast():
    assert Tensor([1, 2, 3]).dtype == np.float32


# -- reductions -----------------------------------------------------------------


def test_reduction_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert T.sum(a).item() == 10
    assert T.mean(Tensor([2.0, 4.0])).item() == 3
    val, idx = T.max(Tensor([[1.0, 5.0], [3.0, 2.0]]))
    assert val.item() == 5 and idx == (0, 1)


def test_max_ties_lowest_row_major():
    x = leaf([[2.0, 7.0], [7.0, 1.0]])
    val, idx = T.max(x)
    assert idx == (0, 1)
    val.backward()
    np.testing.assert_array_equal(x.grad, [[0, 1], [0, 0]])


def test_max_axis_indices():
    _, idx = T.max(Tensor([[1.0, 3.0, 3.0], [4.0, 4.0, 0.0]]), axis=1)
    np.testing.assert_array_equal(idx, [1, 0])


def test_invalid_axis():
    with pytest.raises((ValueError, IndexError)):
        T.sum(Tensor(np.ones((2, 2))), axis=2)


# -- backward -------------------------------------------------------------------


def test_backward_square():
    x = leaf([1.0, 2.0])
    T.sum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_relu_subgradient():
    x = leaf([-1.0, 3.0])
    T.sum(T.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_gradients_accumulate_over_reuse():
    x = leaf([1.5, -2.0])
    T.sum(x * 3.0 + x * x + x).backward()
    np.testing.assert_allclose(x.grad, 4.0 + 2 * x.data)


def test_non_scalar_root():
    with pytest.raises(ValueError, match="scalar"):
        T.backward(leaf([1.0, 2.0]) * 2.0)


def test_consumed_graph():
    x = leaf([1.0, 2.0])
    y = T.sum(T.exp(x))
    y.backward()
    with pytest.raises(GraphConsumedError):
        y.backward()


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_no_grad_is_per_thread():
    import threading

    a_inside, b_inside, a_done = threading.Event(), threading.Event(), threading.Event()

    def first():
        with T.no_grad():
            a_inside.set()
            b_inside.wait()
        a_done.set()

    def second():
        a_inside.wait()
        with T.no_grad():
            b_inside.set()
            a_done.wait()

    threads = [threading.Thread(target=f) for f in (first, second)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert T.is_grad_enabled()
    assert (leaf([1.0]) * 2.0).requires_grad


def test_random_three_op_chain_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(5):
        x, y = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((3, 4)))
        err = check_gradient(lambda: T.sum(T.tanh(x * y) * T.exp(x)), [x, y])
        assert err <= TOLERANCE


@settings(max_examples=30, deadline=None)
@given(
    hnp.arrays(np.float64, (3, 2), elements=st.floats(-3, 3)),
    st.floats(-2, 2),
    st.floats(-2, 2),
)
def test_backward_is_linear(x0, a, b):
    def grad(fn):
        x = leaf(x0.copy())
        fn(x).backward()
        return x.grad

    f = lambda x: T.sum(T.tanh(x))
    g = lambda x: T.sum(x * x * x)
    combined = grad(lambda x: f(x) * a + g(x) * b)
    np.testing.assert_allclose(combined, a * grad(f) + b * grad(g), rtol=1e-10, atol=1e-12)


def test_deterministic_bitwise():
    def run():
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((5, 7)).astype(np.float32), requires_grad=True)
        T.sum(T.tanh(T.matmul(x, T.transpose(x))) * 0.5).backward()
        return x.grad

    assert run().tobytes() == run().tobytes()


def test_broadcast_to_explicit():
    x = leaf(np.arange(3.0).reshape(3, 1))
    y = T.broadcast_to(x, (2, 3, 4))
    assert y.shape == (2, 3, 4)
    T.sum(y).backward()
    np.testing.assert_array_equal(x.grad, np.full((3, 1), 8.0))
    with pytest.raises(ValueError):
        T.broadcast_to(x, (2, 2))


def test_l2_normalize_zero_row():
    with pytest.raises(ZeroDivisionError):
        T.l2_normalize(Tensor(np.array([[0.0, 0.0], [1.0, 0.0]])), axis=1)


def test_arccos_rejects_boundary():
    with pytest.raises((ValueError, NonFiniteError)):
        T.arccos(Tensor([1.0]))
