"""Procedural grayscale face generator for desk-scale experiments.

Each identity is a fixed draw of fine facial detail: eye placement and
shape, iris tone, brows, nose, mouth, a freckle pattern and optional
glasses or mole. Coarse appearance (face outline, skin and hair tone, hair
style, beard) is redrawn for every image together with rigid motion,
expression, lighting, background and sensor noise, so identity lives at the
scale of facial features and does not survive a strong blur.

The output follows the one-directory-per-identity layout that
:class:`xfr.data.FaceDataset` scans.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class IdentityParams:
    eye_dx: float
    eye_y: float
    eye_rx: float
    eye_ry: float
    iris: float
    brow_gap: float
    brow_thick: float
    brow_tilt: float
    nose_len: float
    nose_w: float
    mouth_y: float
    mouth_w: float
    lip: float
    glasses: bool
    mole: tuple[float, float] | None
    freckles: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class Appearance:
    """Per-image coarse appearance; carries no identity information."""

    face_w: float
    face_h: float
    skin: float
    hair: float
    hair_style: int
    hairline: float
    beard: float


def sample_identity(rng: np.random.Generator) -> IdentityParams:
    n_freckles = int(rng.integers(0, 7))
    return IdentityParams(
        eye_dx=rng.uniform(0.18, 0.32),
        eye_y=rng.uniform(-0.22, -0.04),
        eye_rx=rng.uniform(0.06, 0.12),
        eye_ry=rng.uniform(0.03, 0.065),
        iris=rng.uniform(0.0, 0.4),
        brow_gap=rng.uniform(0.06, 0.16),
        brow_thick=rng.uniform(0.02, 0.05),
        brow_tilt=rng.uniform(-0.3, 0.3),
        nose_len=rng.uniform(0.12, 0.28),
        nose_w=rng.uniform(0.04, 0.11),
        mouth_y=rng.uniform(0.28, 0.44),
        mouth_w=rng.uniform(0.12, 0.28),
        lip=rng.uniform(0.015, 0.045),
        glasses=bool(rng.random() < 0.25),
        mole=(float(rng.uniform(-0.35, 0.35)), float(rng.uniform(-0.1, 0.35))) if rng.random() < 0.35 else None,
        freckles=tuple((float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-0.05, 0.3))) for _ in range(n_freckles)),
    )


def sample_appearance(rng: np.random.Generator) -> Appearance:
    return Appearance(
        face_w=rng.uniform(0.52, 0.64),
        face_h=rng.uniform(0.70, 0.80),
        skin=rng.uniform(0.5, 0.8),
        hair=rng.uniform(0.05, 0.45),
        hair_style=int(rng.integers(0, 3)),
        hairline=rng.uniform(-0.62, -0.48),
        beard=float(rng.uniform(0.1, 0.3)) if rng.random() < 0.2 else 0.0,
    )


def _soft(d: np.ndarray, aa: float) -> np.ndarray:
    """Coverage of a shape from its signed distance (negative inside)."""
    return np.clip(0.5 - d / aa, 0.0, 1.0)


def _ellipse(x, y, cx, cy, rx, ry):
    r = np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2)
    return (r - 1.0) * min(rx, ry)


def _paint(canvas: np.ndarray, mask: np.ndarray, value) -> np.ndarray:
    return canvas * (1 - mask) + value * mask


def render_face(p: IdentityParams, rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Render one image of identity ``p`` in [0, 1] with fresh nuisance draws."""
    look = sample_appearance(rng)
    ss = 2
    n = size * ss
    lin = (np.arange(n) + 0.5) / n * 2 - 1
    gy, gx = np.meshgrid(lin, lin, indexing="ij")
    aa = 2.5 / n

    # background: base tone plus a smooth random gradient
    bg = rng.uniform(0.3, 0.7)
    a, b = rng.normal(0, 0.05, 2)
    img = bg + a * gx + b * gy

    # rigid motion of the face frame
    ang = np.deg2rad(rng.uniform(-6, 6))
    scale = rng.uniform(0.93, 1.07)
    tx, ty = rng.uniform(-0.04, 0.04, 2)
    ca, sa = np.cos(ang), np.sin(ang)
    x = (ca * (gx - tx) + sa * (gy - ty)) / scale
    y = (-sa * (gx - tx) + ca * (gy - ty)) / scale

    smile = rng.uniform(-0.3, 1.0)
    openness = rng.uniform(0.55, 1.0)
    light = rng.normal(0, 0.08)

    hair_d = _ellipse(x, y, 0, -0.08, look.face_w + 0.08, look.face_h + 0.08)
    if look.hair_style == 1:
        hair_d = np.minimum(hair_d, _ellipse(x, y, 0, 0.1, look.face_w + 0.14, look.face_h + 0.1))
    if look.hair_style != 2:
        img = _paint(img, _soft(hair_d, aa), look.hair)

    face = _soft(_ellipse(x, y, 0, 0.02, look.face_w, look.face_h), aa)
    shade = look.skin + light * x
    img = _paint(img, face, shade)

    if look.hair_style != 2:
        fringe = _soft(y - look.hairline - 0.04 * np.cos(6 * x), aa) * face
        img = _paint(img, fringe, look.hair)

    if look.beard > 0:
        jaw = _soft(_ellipse(x, y, 0, 0.45, look.face_w * 0.8, 0.35), aa) * face
        img = _paint(img, jaw, np.clip(look.skin - look.beard, 0, 1))

    for side in (-1, 1):
        ex = side * p.eye_dx
        eye = _soft(_ellipse(x, y, ex, p.eye_y, p.eye_rx, p.eye_ry * openness), aa)
        img = _paint(img, eye, 0.95)
        iris = _soft(_ellipse(x, y, ex, p.eye_y, p.eye_ry * 1.1, p.eye_ry * 1.1), aa) * eye
        img = _paint(img, iris, p.iris)
        by = p.eye_y - p.eye_ry - p.brow_gap
        bx = x - ex
        brow_y = by + side * p.brow_tilt * bx
        brow = _soft(np.maximum(np.abs(y - brow_y) - p.brow_thick / 2, np.abs(bx) - p.eye_rx * 1.2), aa)
        img = _paint(img, brow, look.hair * 0.8)
        if p.glasses:
            ring = _soft(np.abs(_ellipse(x, y, ex, p.eye_y, p.eye_rx * 1.6, p.eye_ry * 2.6)) - 0.012, aa)
            img = _paint(img, ring, 0.05)
    if p.glasses:
        bridge = _soft(np.maximum(np.abs(y - p.eye_y) - 0.012, np.abs(x) - (p.eye_dx - p.eye_rx * 1.6)), aa)
        img = _paint(img, bridge, 0.05)

    ny0 = p.eye_y + 0.04
    t = np.clip((y - ny0) / p.nose_len, 0, 1)
    nose = _soft(np.maximum(np.abs(x) - p.nose_w * (0.3 + 0.7 * t), np.maximum(ny0 - y, y - ny0 - p.nose_len)), aa)
    img = _paint(img, nose * 0.5, shade - 0.15 - light * x)
    nostril = _soft(_ellipse(x, y, 0, ny0 + p.nose_len, p.nose_w, 0.025), aa)
    img = _paint(img, nostril, np.clip(look.skin - 0.3, 0, 1))

    curve = 0.06 * smile * (1 - (x / max(p.mouth_w, 1e-3)) ** 2)
    mouth = _soft(np.maximum(np.abs(y - p.mouth_y + curve) - p.lip, np.abs(x) - p.mouth_w), aa)
    img = _paint(img, mouth, np.clip(look.skin - 0.35, 0, 1))

    for fx, fy in p.freckles:
        dot = _soft(_ellipse(x, y, fx, fy, 0.02, 0.02), aa) * face
        img = _paint(img, dot, np.clip(look.skin - 0.25, 0, 1))

    if p.mole is not None:
        mole = _soft(_ellipse(x, y, p.mole[0], p.mole[1], 0.03, 0.03), aa) * face
        img = _paint(img, mole, 0.1)

    img = img.reshape(size, ss, size, ss).mean(axis=(1, 3))
    contrast = rng.uniform(0.85, 1.15)
    img = (img - 0.5) * contrast + 0.5 + rng.uniform(-0.08, 0.08)
    img = img + rng.normal(0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_dataset(out_dir: str | Path, n_identities: int = 50, per_identity: int = 10, seed: int = 0, size: int = 64) -> Path:
    """Write ``n_identities`` folders of ``per_identity`` PNG faces under ``out_dir``."""
    if n_identities < 2 or per_identity < 1:
        raise ValueError("need at least 2 identities and 1 image per identity")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    for k, child in enumerate(root.spawn(n_identities)):
        rng = np.random.default_rng(child)
        params = sample_identity(rng)
        folder = out / f"id{k:04d}"
        folder.mkdir(exist_ok=True)
        for j in range(per_identity):
            img = render_face(params, rng, size)
            Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(folder / f"{j:03d}.png")
    return out


def identity_summary(seed: int, n_identities: int) -> list[dict]:
    root = np.random.SeedSequence(seed)
    return [asdict(sample_identity(np.random.default_rng(c))) for c in root.spawn(n_identities)]
