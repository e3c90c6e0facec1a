"""Additive angular margin loss, reconstruction MSE and the joint objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import ClassHead
from .tensor import Tensor

COS_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    margin: float = 0.5
    scale: float = 30.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 <= self.margin < math.pi / 2:
            raise ValueError("margin must lie in [0, pi/2)")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")


def cosine_logits(F: Tensor, W: Tensor) -> Tensor:
    """Cosines between L2-normalised feature rows and class weight rows, (batch, classes)."""
    return T.matmul(T.l2_normalize(F, axis=1), T.transpose(T.l2_normalize(W, axis=1)))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; the max shift is treated as a constant."""
    b, k = logits.shape
    onehot = np.zeros((b, k), dtype=logits.dtype)
    onehot[np.arange(b), labels] = 1
    shift = Tensor(logits.data.max(axis=1, keepdims=True).repeat(k, axis=1))
    z = logits - shift
    lse = T.log(T.sum(T.exp(z), axis=1))
    true = T.sum(z * Tensor(onehot), axis=1)
    return T.mean(lse - true)


def margin_target(cos: Tensor, m: float) -> Tensor:
    """cos(theta + m) for theta <= pi/2, else the linear continuation cos(theta) - sin(m).

    Pooled features are non-negative, so all of them can be pushed past pi/2
    together; there cos(theta + m) flattens and its margin penalty vanishes
    as theta nears pi, which rewards rotating every class weight away from
    the data. The linear branch keeps a constant penalty and meets the
    angular one at pi/2.
    """
    inside = (cos.data > 0).astype(cos.dtype)
    shifted = T.cos(T.arccos(cos) + m)
    linear = cos - math.sin(m)
    return shifted * Tensor(inside) + linear * Tensor(1 - inside)


def arcface_loss(F: Tensor, head: ClassHead | Tensor, labels: Sequence[int], cfg: LossConfig = LossConfig()) -> Tensor:
    """Softmax cross-entropy over s*cos(theta_j), with s*cos(theta_y + m) for the true class.

    For theta_y > pi/2 the true-class logit uses :func:`margin_target`'s linear branch.
    """
    W = head.W if isinstance(head, ClassHead) else head
    labels = np.asarray(labels, dtype=np.int64)
    if F.ndim != 2 or labels.shape != (F.shape[0],):
        raise ValueError(f"features {F.shape} do not match labels {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= W.shape[0]:
        raise ValueError(f"labels must lie in [0, {W.shape[0]})")
    if np.any(np.sum(F.data * F.data, axis=1) == 0):
        raise ZeroDivisionError("arcface_loss: zero-norm feature row")

    cos = T.clip(cosine_logits(F, W), -1 + COS_EPS, 1 - COS_EPS)
    onehot = np.zeros(cos.shape, dtype=cos.dtype)
    onehot[np.arange(len(labels)), labels] = 1
    if cfg.margin:
        target = margin_target(cos, cfg.margin)
        logits = target * Tensor(onehot) + cos * Tensor(1 - onehot)
    else:
        logits = cos
    return cross_entropy(logits * cfg.scale, labels)


def mse_loss(recon: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=recon.dtype))
    if recon.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {recon.shape} vs {target.shape}")
    d = recon - target
    return T.mean(d * d)


def total_loss(l_id: Tensor, l_rec: Tensor, lam: float) -> Tensor:
    return l_id + l_rec * lam
