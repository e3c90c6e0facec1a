import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from xfr import tensor as T
from xfr.explain import (
    SaliencyTriple,
    channel_residuals,
    channel_weights,
    combine,
    cosine_input_gradient,
    cosine_similarity,
    generate_saliency,
    gradient_baseline,
    mask_channel_max,
    masked_feature_stack,
    minmax_normalize,
    model_decoder,
    random_baseline,
)
from xfr.nn import conv_transpose2d
from xfr.tensor import Tensor

features = hnp.arrays(np.float64, 6, elements=st.floats(0, 5)).filter(lambda v: v.any())


# -- weights --------------------------------------------------------------------


def test_cosine_examples():
    assert cosine_similarity([2.0, 3.0], [2.0, 3.0]) == pytest.approx(1.0)
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine_similarity([1.0, 0.0], [1.0, 1.0]) == pytest.approx(0.70711, abs=1e-5)
    with pytest.raises(ZeroDivisionError):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])


def test_weight_examples():
    np.testing.assert_allclose(channel_weights([3, 4], [3, 4], 0.0).values, [0.36, 0.64])
    np.testing.assert_allclose(channel_weights([3, 4], [3, 4], 0.5).values, [-0.14, 0.14])
    with pytest.raises(ZeroDivisionError):
        channel_weights([0, 0], [1, 1])


@settings(max_examples=60, deadline=None)
@given(features, features, st.one_of(st.just("auto"), st.floats(-1, 1)))
def test_weight_identity(fa, fb, t):
    w = channel_weights(fa, fb, t)
    assert w.values.sum() + len(fa) * w.threshold == pytest.approx(cosine_similarity(fa, fb), abs=1e-5)


@settings(max_examples=30, deadline=None)
@given(features, features)
def test_auto_threshold_centres_weights_and_is_symmetric(fa, fb):
    w = channel_weights(fa, fb)
    assert w.threshold == pytest.approx(cosine_similarity(fa, fb) / len(fa))
    assert abs(w.values.sum()) < 1e-12
    assert np.array_equal(w.values, channel_weights(fb, fa).values)


# -- masking and residuals ------------------------------------------------------


def test_mask_zeroes_every_tied_maximum():
    C = np.array([[[1.0, 3.0], [3.0, 2.0]], [[5.0, 0.0], [0.0, 0.0]]])
    mask_channel_max(C, 0)
    np.testing.assert_array_equal(C[0], [[1, 0], [0, 2]])
    np.testing.assert_array_equal(C[1], [[5, 0], [0, 0]])


def test_masked_stack_modes():
    C = np.arange(12.0).reshape(3, 2, 2)
    iso = masked_feature_stack(C, [0, 1, 2], "isolated")
    cum = masked_feature_stack(C, [0, 1, 2], "cumulative")
    assert iso[2][0, 1, 1] == 3 and iso[2][2, 1, 1] == 0
    assert cum[2][0, 1, 1] == 0 and cum[2][1, 1, 1] == 0 and cum[2][2, 1, 1] == 0
    np.testing.assert_array_equal(iso[0], cum[0])
    with pytest.raises(ValueError):
        masked_feature_stack(C, [0], "bogus")


def test_minmax_cases():
    np.testing.assert_array_equal(minmax_normalize(np.zeros((2, 2))), np.zeros((2, 2)))
    np.testing.assert_array_equal(minmax_normalize(np.full((2, 2), 4.0)), np.ones((2, 2)))
    np.testing.assert_allclose(minmax_normalize(np.array([1.0, 2.0, 3.0])), [0, 0.5, 1])


def test_zero_channel_gives_zero_residual():
    C = np.zeros((2, 2, 2))
    C[1] = [[1.0, 2.0], [0.5, 0.0]]
    res = channel_residuals(C, lambda batch: np.tanh(batch.sum(axis=1, keepdims=True)))
    assert not res[0].any()
    assert res[1].max() == 1.0


def test_single_channel_identity_decoder():
    C = np.full((1, 1, 1), 5.0)
    identity = lambda batch: conv_transpose2d(Tensor(batch), Tensor(np.ones((1, 1, 1, 1))), None).data
    res = channel_residuals(C, identity)
    np.testing.assert_array_equal(res, np.ones((1, 1, 1)))


def toy_decoder(weight):
    """Two channels -> one 4x4 image via a stride-2 kernel-2 transposed conv, then tanh."""

    def decode(batch):
        return np.tanh(conv_transpose2d(Tensor(batch), Tensor(weight), Tensor(np.array([0.1])), 2, 0).data)

    return decode


def toy_forward(C, weight):
    """Direct evaluation of the toy decoder for one (2, 2, 2) feature map."""
    out = np.full((4, 4), 0.1)
    for c in range(2):
        for i in range(2):
            for j in range(2):
                out[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] += C[c, i, j] * weight[c, 0]
    return np.tanh(out)


def test_residuals_match_two_pass_forward(rng):
    weight = rng.uniform(-1, 1, (2, 1, 2, 2))
    C = rng.uniform(0, 2, (2, 2, 2))
    res = channel_residuals(C, toy_decoder(weight))
    base = toy_forward(C, weight)
    for i in range(2):
        masked = C.copy()
        masked[i][masked[i] == masked[i].max()] = 0
        np.testing.assert_allclose(res[i], minmax_normalize(np.abs(base - toy_forward(masked, weight))), atol=1e-12)


def test_channel_residuals_validates():
    with pytest.raises(ValueError, match="single"):
        channel_residuals(np.zeros((1, 2, 2, 2)), lambda b: b)
    with pytest.raises(ValueError, match="permutation"):
        channel_residuals(np.zeros((2, 2, 2)), lambda b: b[:, :1], order=[0, 0])


# -- assembly -------------------------------------------------------------------


def test_combine_example():
    H = combine(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]), np.array([0.5, -0.2]))
    sal = SaliencyTriple.from_signed(H)
    np.testing.assert_allclose(sal.H, [[0.5, -0.2]])
    np.testing.assert_allclose(sal.S, [[0.5, 0.2]])
    np.testing.assert_allclose(sal.S_pos, [[0.5, 0.0]])
    np.testing.assert_allclose(sal.S_neg, [[0.0, 0.2]])


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (4, 5), elements=st.floats(-10, 10)))
def test_decomposition_identities(H):
    sal = SaliencyTriple.from_signed(H)
    np.testing.assert_array_equal(sal.S, sal.S_pos + sal.S_neg)
    np.testing.assert_array_equal(np.minimum(sal.S_pos, sal.S_neg), 0)
    assert (sal.S >= 0).all()


def test_zero_channels_contribute_nothing(rng):
    res = rng.random((4, 3, 3))
    res[2] = 0
    w = rng.standard_normal(4)
    w2 = w.copy()
    w2[2] = 1e6
    np.testing.assert_array_equal(combine(res, w), combine(res, w2))


def test_self_pair_zero_threshold_has_empty_dissimilarity(tiny_model, rng):
    img = rng.uniform(-1, 1, (1, 32, 32)).astype(np.float32)
    exp = generate_saliency(img, img, tiny_model, threshold=0.0)
    assert (exp.weights.values >= 0).all()
    assert not exp.saliency.S_neg.any()
    assert exp.score == pytest.approx(1.0, abs=1e-6)


def test_end_to_end_matches_hand_composition(tiny_model, rng):
    a, b = rng.uniform(-1, 1, (2, 1, 32, 32)).astype(np.float32)
    exp = generate_saliency(a, b, tiny_model)
    with T.no_grad():
        fa, fb = tiny_model.encode(a[None]), tiny_model.encode(b[None])
    ua = fa.F.data[0].astype(np.float64) / np.linalg.norm(fa.F.data[0])
    ub = fb.F.data[0].astype(np.float64) / np.linalg.norm(fb.F.data[0])
    w = ua * ub - np.mean(ua * ub)
    decode = model_decoder(tiny_model)
    C = fa.C.data[0]
    base = decode(C[None])[0, 0].astype(np.float64)
    H = np.zeros((32, 32))
    for i in range(C.shape[0]):
        m = C.copy()
        m[i][m[i] == m[i].max()] = 0
        H += w[i] * minmax_normalize(np.abs(base - decode(m[None])[0, 0]))
    np.testing.assert_allclose(exp.saliency.H, H, atol=1e-12)
    np.testing.assert_allclose(exp.weights.values, w, atol=1e-7)


def test_isolated_order_and_worker_invariance(tiny_model, rng):
    C = np.abs(rng.standard_normal((8, 2, 2))).astype(np.float32)
    decode = model_decoder(tiny_model)
    ref = channel_residuals(C, decode)
    for order, chunk, workers in [(list(range(8))[::-1], 3, 1), (list(rng.permutation(8)), 2, 4), (None, 8, 2)]:
        got = channel_residuals(C, decode, order=order, chunk=chunk, workers=workers)
        assert got.tobytes() == ref.tobytes()


def test_modes_differ(tiny_model, rng):
    a, b = rng.uniform(-1, 1, (2, 1, 32, 32)).astype(np.float32)
    iso = generate_saliency(a, b, tiny_model, mode="isolated").saliency.H
    cum = generate_saliency(a, b, tiny_model, mode="cumulative").saliency.H
    assert not np.array_equal(iso, cum)


# -- baselines ------------------------------------------------------------------


def test_gradient_matches_finite_differences(tiny_model, rng):
    model = tiny_model.astype(np.float64)
    a, b = rng.uniform(-1, 1, (2, 1, 32, 32))
    g = cosine_input_gradient(a, b, model)

    def cos(img):
        fa, fb = model.features(img[None])[0], model.features(b[None])[0]
        return cosine_similarity(fa, fb)

    h = 1e-5
    for _ in range(8):
        idx = (0, int(rng.integers(32)), int(rng.integers(32)))
        up, down = a.copy(), a.copy()
        up[idx] += h
        down[idx] -= h
        num = (cos(up) - cos(down)) / (2 * h)
        assert abs(num - g[idx]) <= 1e-3 * max(abs(num), abs(g[idx]), 1e-8)


def test_gradient_baseline_range_and_zero_image(tiny_model, rng):
    a, b = rng.uniform(-1, 1, (2, 1, 32, 32)).astype(np.float32)
    s = gradient_baseline(a, b, tiny_model)
    assert s.shape == (32, 32) and s.min() >= 0 and s.max() <= 1
    assert not gradient_baseline(np.zeros_like(a), b, tiny_model).any()


def test_random_baseline():
    assert random_baseline((8, 8), 3).tobytes() == random_baseline((8, 8), 3).tobytes()
    assert not np.array_equal(random_baseline((8, 8), 3), random_baseline((8, 8), 4))
    draws = random_baseline((1000, 1000), 0).ravel()
    counts = np.histogram(draws, bins=10, range=(0, 1))[0]
    assert np.all(np.abs(counts / draws.size - 0.1) <= 0.001)
