"""Hiding-game evaluation of saliency maps and verification metrics.

The least salient pixels of the first image of each pair are replaced by the
corresponding pixels of a Gaussian-blurred copy, the pair is re-verified with
a threshold calibrated once on the unmodified pairs, and accuracy is tracked
as the hidden fraction grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import ImageCache, PairRecord
from .explain import generate_saliency, gradient_baseline, random_baseline
from .model import FaceModel

Explainer = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class HidingGameConfig:
    percentages: tuple[float, ...] = tuple(range(0, 100, 10))
    sigma: float = 4.0
    kernel_size: int | None = None
    method: str = "ours"
    seed: int = 0

    def __post_init__(self):
        p = list(self.percentages)
        if not p:
            raise ValueError("percentages must not be empty")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError("percentages must be strictly ascending")
        if p[0] < 0 or p[-1] > 100:
            raise ValueError("percentages must lie in [0, 100]")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.kernel_size is not None and self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    @property
    def kernel(self) -> int:
        return self.kernel_size if self.kernel_size is not None else default_kernel_size(self.sigma)


@dataclass
class CurveResult:
    percentages: list[float]
    accuracies: list[float]
    auc: float
    method: str
    threshold: float
    dataset: dict = field(default_factory=dict)


def default_kernel_size(sigma: float) -> int:
    return 2 * math.ceil(3 * sigma) + 1


def gaussian_kernel(sigma: float, kernel_size: int) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {kernel_size}")
    r = kernel_size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float = 4.0, kernel_size: int | None = None) -> np.ndarray:
    """Separable Gaussian blur of a (H, W) or (C, H, W) image with reflect padding.

    Padding mirrors about the edge including the edge pixel (``abc|cba``).
    """
    kernel_size = default_kernel_size(sigma) if kernel_size is None else kernel_size
    k = gaussian_kernel(sigma, kernel_size)
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    r = kernel_size // 2
    padded = np.pad(img, ((0, 0), (r, r), (r, r)), mode="symmetric")
    h, w = img.shape[1:]
    rows = np.zeros((img.shape[0], h + 2 * r, w))
    for t in range(kernel_size):
        rows += k[t] * padded[:, :, t : t + w]
    out = np.zeros_like(img)
    for t in range(kernel_size):
        out += k[t] * rows[:, t : t + h, :]
    out = out.astype(np.asarray(image).dtype if np.issubdtype(np.asarray(image).dtype, np.floating) else np.float64)
    return out[0] if squeeze else out


def hidden_indices(saliency: np.ndarray, percent: float) -> np.ndarray:
    """Flat indices of the floor(percent% * H * W) least salient pixels (ties: lowest index)."""
    if not 0 <= percent <= 100:
        raise ValueError("percent must lie in [0, 100]")
    flat = np.asarray(saliency).ravel()
    n = int(math.floor(percent / 100.0 * flat.size + 1e-9))
    return np.argsort(flat, kind="stable")[:n]


def hide_pixels(image: np.ndarray, saliency: np.ndarray, percent: float, blurred: np.ndarray) -> np.ndarray:
    """Replace the least salient pixels of ``image`` by those of ``blurred``."""
    image = np.asarray(image)
    blurred = np.asarray(blurred)
    if image.shape != blurred.shape or image.shape[-2:] != np.shape(saliency):
        raise ValueError(f"shape mismatch: image {image.shape}, blurred {blurred.shape}, saliency {np.shape(saliency)}")
    out = image.copy()
    idx = hidden_indices(saliency, percent)
    h, w = image.shape[-2:]
    flat_out = out.reshape(-1, h * w)
    flat_out[:, idx] = blurred.reshape(-1, h * w)[:, idx]
    return flat_out.reshape(image.shape)


def curve_auc(percentages: Sequence[float], accuracies: Sequence[float]) -> float:
    """Trapezoidal mean accuracy over the percentage range, scaled to [0, 100]."""
    p = np.asarray(percentages, dtype=np.float64)
    a = np.asarray(accuracies, dtype=np.float64)
    if len(p) != len(a) or len(p) == 0:
        raise ValueError("need matching, non-empty percentage and accuracy lists")
    if len(p) == 1:
        return float(100 * a[0])
    area = np.sum((p[1:] - p[:-1]) * (a[1:] + a[:-1]) / 2)
    return float(100 * area / (p[-1] - p[0]))


def cosine_scores(fa: np.ndarray, fb: np.ndarray, zero_score: float | None = None) -> np.ndarray:
    """Row-wise cosine. A zero feature row raises unless ``zero_score`` is given."""
    na = np.linalg.norm(fa, axis=1)
    nb = np.linalg.norm(fb, axis=1)
    dead = (na == 0) | (nb == 0)
    if np.any(dead) and zero_score is None:
        raise ZeroDivisionError("zero feature vector")
    denom = np.where(dead, 1.0, na * nb)
    scores = np.clip(np.sum(fa * fb, axis=1) / denom, -1.0, 1.0)
    return np.where(dead, zero_score if zero_score is not None else 0.0, scores)


def accuracy_at(scores: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    pred = (np.asarray(scores) >= threshold).astype(np.int64)
    return float(np.mean(pred == np.asarray(labels)))


def best_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Threshold maximising accuracy of ``score >= t``; returns (threshold, accuracy).

    Candidates are midpoints between consecutive distinct scores plus one
    below and one above the range; the lowest best candidate wins.
    """
    s = np.unique(np.asarray(scores, dtype=np.float64))
    cands = np.concatenate([[s[0] - 1.0], (s[:-1] + s[1:]) / 2, [s[-1] + 1.0]])
    accs = np.array([accuracy_at(scores, labels, t) for t in cands])
    i = int(np.argmax(accs))
    return float(cands[i]), float(accs[i])


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def pair_scores(pairs: Sequence[PairRecord], model: FaceModel, images: ImageCache) -> np.ndarray:
    fa = model.features(images.stack([p.path_a for p in pairs]))
    fb = model.features(images.stack([p.path_b for p in pairs]))
    return cosine_scores(fa, fb)


def verification_accuracy(pairs: Sequence[PairRecord], model: FaceModel, threshold: float, images: ImageCache | None = None) -> float:
    if not pairs:
        raise ValueError("no pairs")
    images = images or ImageCache(model.arch.img_ch)
    labels = np.array([p.label for p in pairs])
    return accuracy_at(pair_scores(pairs, model, images), labels, threshold)


# -- explainers ------------------------------------------------------------------


def ours_explainer(model: FaceModel, threshold: float | str = "auto", mode: str = "isolated") -> Explainer:
    def explain(a, b, index):
        return generate_saliency(a, b, model, threshold, mode).saliency.S

    return explain


def gradient_explainer(model: FaceModel) -> Explainer:
    def explain(a, b, index):
        return gradient_baseline(a, b, model)

    return explain


def random_explainer(seed: int) -> Explainer:
    def explain(a, b, index):
        return random_baseline(a.shape[-2:], np.random.SeedSequence([seed, index]))

    return explain


def make_explainer(method: str, model: FaceModel, seed: int = 0, threshold: float | str = "auto", mode: str = "isolated") -> Explainer:
    if method == "ours":
        return ours_explainer(model, threshold, mode)
    if method == "gradient":
        return gradient_explainer(model)
    if method == "random":
        return random_explainer(seed)
    raise ValueError(f"unknown method {method!r} (expected ours, gradient or random)")


def compute_saliencies(pairs: Sequence[PairRecord], explainer: Explainer, images: ImageCache) -> list[np.ndarray]:
    return [np.asarray(explainer(images(p.path_a), images(p.path_b), i)) for i, p in enumerate(pairs)]


def run_hiding_game(
    pairs: Sequence[PairRecord],
    model: FaceModel,
    explainer: Explainer | None = None,
    cfg: HidingGameConfig = HidingGameConfig(),
    images: ImageCache | None = None,
    saliencies: Sequence[np.ndarray] | None = None,
) -> CurveResult:
    """Accuracy-vs-hidden-percentage curve for one saliency method.

    Precomputed ``saliencies`` (one map per pair) can replace ``explainer``.
    """
    if not pairs:
        raise ValueError("empty pair list")
    labels = np.array([p.label for p in pairs])
    if len(np.unique(labels)) < 2:
        raise ValueError("pair list must contain both matching and non-matching pairs")
    images = images or ImageCache(model.arch.img_ch)
    if saliencies is None:
        explainer = explainer or make_explainer(cfg.method, model, cfg.seed)
        saliencies = compute_saliencies(pairs, explainer, images)

    imgs_a = images.stack([p.path_a for p in pairs])
    fb = model.features(images.stack([p.path_b for p in pairs]))
    blurred = np.stack([gaussian_blur(a, cfg.sigma, cfg.kernel) for a in imgs_a])

    base_scores = cosine_scores(model.features(imgs_a), fb)
    threshold, _ = best_threshold(base_scores, labels)

    accs = []
    for pct in cfg.percentages:
        hidden = np.stack([hide_pixels(a, s, pct, bl) for a, s, bl in zip(imgs_a, saliencies, blurred)])
        # hiding can silence every channel; such a pair carries no match evidence
        scores = cosine_scores(model.features(hidden), fb, zero_score=0.0)
        accs.append(accuracy_at(scores, labels, threshold))
    return CurveResult(
        list(map(float, cfg.percentages)),
        accs,
        curve_auc(cfg.percentages, accs),
        cfg.method,
        threshold,
        {"n_pairs": len(pairs), "n_match": int(labels.sum())},
    )
