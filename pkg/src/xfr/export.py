"""Writing saliency maps to disk: 8-bit PNGs, float32 sidecars and heat overlays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .explain import Explanation

OVERLAY_ALPHA = 0.5
MAP_NAMES = {"S": "discriminative", "S_pos": "similarity", "S_neg": "dissimilarity"}


def to_uint8(m: np.ndarray) -> np.ndarray:
    """Linear map of [0, max] onto [0, 255]; an all-zero map stays black."""
    top = float(m.max())
    if top <= 0:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.round(np.clip(m / top, 0, 1) * 255).astype(np.uint8)


def overlay(image: np.ndarray, m: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """RGB uint8 heat overlay of map ``m`` on a (C, H, W) image in [-1, 1]."""
    from matplotlib import colormaps

    base = (np.clip(image, -1, 1) + 1) / 2
    base = np.repeat(base, 3, axis=0) if base.shape[0] == 1 else base
    base = base.transpose(1, 2, 0)
    top = float(m.max())
    heat = colormaps["jet"](m / top if top > 0 else np.zeros_like(m))[..., :3]
    return np.round(((1 - alpha) * base + alpha * heat) * 255).astype(np.uint8)


def write_map(out_dir: Path, name: str, image: np.ndarray, m: np.ndarray) -> None:
    Image.fromarray(to_uint8(m), mode="L").save(out_dir / f"{name}.png")
    np.save(out_dir / f"{name}.npy", m.astype("<f4"))
    Image.fromarray(overlay(image, m)).save(out_dir / f"{name}_overlay.png")


def write_explanation(out_dir: str | Path, image_a: np.ndarray, exp: Explanation) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sal = exp.saliency
    for name in MAP_NAMES:
        write_map(out, name, image_a, getattr(sal, name))
    np.save(out / "H.npy", sal.H.astype("<f4"))
    np.save(out / "weights.npy", exp.weights.values.astype("<f8"))
    (out / "score.txt").write_text(f"{exp.score:.9f}\n")
    (out / "threshold.txt").write_text(f"{exp.weights.threshold:.9g}\n")
    return out
