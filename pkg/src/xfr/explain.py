"""Reconstruction-based saliency for face verification decisions.

For an image pair (A, B) the pooled features give per-channel similarity
weights (the products of the L2-normalised features, shifted by a threshold).
Each channel of A's feature map is masked at its maximum, the masked map is
decoded, and the absolute difference to the unmasked reconstruction localises
that channel on the face. Weighting those residual maps and summing yields a
signed map H whose magnitude, positive part and negative part are the
discriminative, similarity and dissimilarity maps.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from . import tensor as T
from .model import FaceModel
from .tensor import Tensor

Mode = Literal["isolated", "cumulative"]
DecodeFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class WeightVector:
    values: np.ndarray
    threshold: float


@dataclass(frozen=True)
class SaliencyTriple:
    H: np.ndarray
    S: np.ndarray
    S_pos: np.ndarray
    S_neg: np.ndarray

    @classmethod
    def from_signed(cls, H: np.ndarray) -> "SaliencyTriple":
        return cls(H, np.abs(H), np.maximum(H, 0), np.maximum(-H, 0))


@dataclass(frozen=True)
class Explanation:
    saliency: SaliencyTriple
    weights: WeightVector
    residuals: np.ndarray
    score: float


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    peak = np.abs(v).max(initial=0.0)
    if peak == 0:
        raise ZeroDivisionError("zero feature vector")
    v = v / peak  # tiny values would underflow when squared
    return v / np.sqrt(np.dot(v, v))


def cosine_similarity(f1: np.ndarray, f2: np.ndarray) -> float:
    return float(np.clip(np.dot(_unit(f1), _unit(f2)), -1.0, 1.0))


def channel_weights(f_a: np.ndarray, f_b: np.ndarray, threshold: float | str = "auto") -> WeightVector:
    """Per-channel products of the independently normalised features, minus ``threshold``.

    ``"auto"`` picks the mean product, i.e. cosine / c, which centres the
    weights at zero.
    """
    prod = _unit(f_a) * _unit(f_b)
    t = float(prod.mean()) if threshold == "auto" else float(threshold)
    return WeightVector(prod - t, t)


def minmax_normalize(r: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; an all-zero map stays zero, a constant non-zero map becomes ones."""
    lo, hi = r.min(), r.max()
    if hi > lo:
        return (r - lo) / (hi - lo)
    return np.ones_like(r) if hi > 0 else np.zeros_like(r)


def mask_channel_max(C: np.ndarray, channel: int) -> None:
    """Zero every entry of ``C[channel]`` that attains the channel maximum (in place)."""
    ch = C[channel]
    ch[ch == ch.max()] = 0


def masked_feature_stack(C: np.ndarray, channels: Sequence[int], mode: Mode) -> np.ndarray:
    """One masked copy of ``C`` per entry of ``channels``.

    Isolated mode masks only that channel on a fresh copy. Cumulative mode
    masks it on top of every channel masked before it in ascending order,
    which is what a never-restored working copy would hold at that step.
    """
    out = np.repeat(C[None], len(channels), axis=0)
    if mode == "isolated":
        for k, i in enumerate(channels):
            mask_channel_max(out[k], i)
    elif mode == "cumulative":
        running = C.copy()
        prefix = {}
        for i in range(max(channels, default=-1) + 1):
            mask_channel_max(running, i)
            prefix[i] = running.copy()
        for k, i in enumerate(channels):
            out[k] = prefix[i]
    else:
        raise ValueError(f"unknown masking mode {mode!r}")
    return out


def _color_mean(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=0) if img.ndim == 3 else img


def channel_residuals(
    C: np.ndarray,
    decode: DecodeFn,
    mode: Mode = "isolated",
    order: Sequence[int] | None = None,
    chunk: int = 32,
    workers: int = 1,
) -> np.ndarray:
    """Normalised residual maps, one per channel of a single (c, h, w) feature map.

    ``decode`` maps a (n, c, h, w) batch to (n, img_ch, H, W) images. Channels are
    processed in ``order`` (default ascending) and in chunks of ``chunk``; each
    chunk may go to a worker thread. The result is indexed by channel, so the
    processing order never leaks into it.
    """
    C = np.asarray(C)
    if C.ndim != 3:
        raise ValueError(f"expected a single (c, h, w) feature map, got {C.shape}")
    c = C.shape[0]
    order = list(range(c)) if order is None else list(order)
    if sorted(order) != list(range(c)):
        raise ValueError("order must be a permutation of the channel indices")
    base = decode(C[None])
    if base.ndim != 4 or base.shape[0] != 1:
        raise ValueError(f"decoder returned shape {base.shape} for a single feature map")
    base = base[0]

    def run(chunk_channels: list[int]) -> tuple[list[int], np.ndarray]:
        recon = decode(masked_feature_stack(C, chunk_channels, mode))
        return chunk_channels, recon

    chunks = [order[i : i + chunk] for i in range(0, c, chunk)]
    residuals = np.zeros((c,) + base.shape[1:], dtype=np.float64)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(ch) for ch in chunks]
    for chans, recon in results:
        for k, i in enumerate(chans):
            diff = np.abs(base.astype(np.float64) - recon[k].astype(np.float64))
            residuals[i] = minmax_normalize(_color_mean(diff))
    return residuals


def combine(residuals: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted residual sum, accumulated in ascending channel order."""
    if len(residuals) != len(weights):
        raise ValueError(f"{len(residuals)} residual maps but {len(weights)} weights")
    H = np.zeros(residuals.shape[1:], dtype=np.float64)
    for i in range(len(weights)):
        H += weights[i] * residuals[i]
    return H


def model_decoder(model: FaceModel) -> DecodeFn:
    def decode(C: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return model.reconstruct(C).data

    return decode


def _resize_map(m: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if m.shape == size:
        return m
    from .data import bilinear_resize

    return bilinear_resize(m[None], *size)[0]


def generate_saliency(
    image_a: np.ndarray,
    image_b: np.ndarray,
    model: FaceModel,
    threshold: float | str = "auto",
    mode: Mode = "isolated",
    **residual_kw,
) -> Explanation:
    """Explain the verification of (A, B) on image A."""
    with T.no_grad():
        fa = model.encode(np.asarray(image_a)[None])
        fb = model.encode(np.asarray(image_b)[None])
    f_a, f_b = fa.F.data[0], fb.F.data[0]
    weights = channel_weights(f_a, f_b, threshold)
    residuals = channel_residuals(fa.C.data[0], model_decoder(model), mode, **residual_kw)
    H = _resize_map(combine(residuals, weights.values), tuple(np.asarray(image_a).shape[-2:]))
    return Explanation(SaliencyTriple.from_signed(H), weights, residuals, cosine_similarity(f_a, f_b))


def cosine_input_gradient(image_a: np.ndarray, image_b: np.ndarray, model: FaceModel) -> np.ndarray:
    """d cos(F_A, F_B) / d I_A, with B held fixed."""
    with T.no_grad():
        f_b = model.encode(np.asarray(image_b)[None]).F.data
    x = Tensor(np.asarray(image_a, dtype=model.dtype)[None], requires_grad=True)
    f_a = model.encode(x).F
    fb_unit = Tensor((f_b / np.linalg.norm(f_b)).astype(model.dtype))
    cos = T.sum(T.l2_normalize(f_a, axis=1) * fb_unit)
    cos.backward()
    return x.grad[0]


def gradient_baseline(image_a: np.ndarray, image_b: np.ndarray, model: FaceModel) -> np.ndarray:
    """|I_A * grad| averaged over colour channels, min-max normalised."""
    if not np.any(image_a):
        # the product is zero whatever the gradient, which may not even exist here
        return np.zeros(np.shape(image_a)[-2:])
    g = cosine_input_gradient(image_a, image_b, model)
    sal = np.abs(np.asarray(image_a, dtype=np.float64) * g)
    return minmax_normalize(_color_mean(sal))


def random_baseline(shape: tuple[int, int], seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random(shape)
