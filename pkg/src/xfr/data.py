"""Dataset scanning, image loading, pair generation and pair CSV files."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

IMAGE_SIZE = 64
LUMA = (0.299, 0.587, 0.114)
IMAGE_SUFFIXES = (".png", ".pgm")


class ImageFormatError(ValueError):
    pass


class PairsFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientDataError(ValueError):
    pass


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) with half-pixel-centre bilinear interpolation and edge clamping."""
    _, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    rows = img[:, y0, :] * (1 - fy)[None, :, None] + img[:, y1, :] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx


def _decode(path: Path) -> np.ndarray:
    """Return a float64 (C, H, W) array in [0, 1] with C in {1, 3}."""
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ImageFormatError(f"{path}: unsupported format (expected PNG or PGM)")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                peak = 65535.0 if arr.max(initial=0) > 255 or im.mode.startswith("I;16") else 255.0
                return (arr / peak)[None]
            if im.mode == "L":
                return (np.asarray(im, dtype=np.float64) / 255.0)[None]
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            return rgb.transpose(2, 0, 1)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc


def load_image(path: str | Path, img_ch: int = 1, size: int = IMAGE_SIZE) -> np.ndarray:
    """Read a PNG/PGM face crop as a float32 (img_ch, size, size) array in [-1, 1]."""
    if img_ch not in (1, 3):
        raise ValueError("img_ch must be 1 or 3")
    path = Path(path)
    if not path.is_file():
        raise ImageFormatError(f"{path}: not a readable file")
    arr = _decode(path)
    if img_ch == 1 and arr.shape[0] == 3:
        arr = np.tensordot(np.asarray(LUMA), arr, axes=1)[None]
    elif img_ch == 3 and arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    arr = bilinear_resize(arr, size, size)
    return np.clip(arr * 2.0 - 1.0, -1.0, 1.0).astype(np.float32)


def preprocess(arr: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Resize an in-memory (C, H, W) image already in [-1, 1]; no-op at the target size."""
    return np.clip(bilinear_resize(np.asarray(arr, dtype=np.float64), size, size), -1, 1).astype(np.float32)


def save_image(path: str | Path, arr: np.ndarray) -> None:
    """Write a (C, H, W) or (H, W) array in [-1, 1] as an 8-bit PNG."""
    arr = np.asarray(arr)
    if arr.ndim == 3:
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    u8 = np.round((np.clip(arr, -1, 1) + 1) * 127.5).astype(np.uint8)
    Image.fromarray(u8).save(path)


@dataclass
class FaceDataset:
    """Identity-labelled images under ``root/<identity>/<image>``."""

    root: Path
    identities: list[tuple[str, list[Path]]]
    split: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.identities) < 2:
            raise InsufficientDataError(f"dataset needs at least 2 identities, found {len(self.identities)}")

    @classmethod
    def scan(cls, root: str | Path) -> "FaceDataset":
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"dataset root {root} is not a directory")
        identities = []
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            images = sorted(p for p in sub.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
            if images:
                identities.append((sub.name, images))
        return cls(root, identities)

    @property
    def num_images(self) -> int:
        return sum(len(imgs) for _, imgs in self.identities)

    def items(self) -> list[tuple[Path, int]]:
        return [(p, label) for label, (_, imgs) in enumerate(self.identities) for p in imgs]

    def split_by_identity(self, val_fraction: float, seed: int) -> tuple["FaceDataset", "FaceDataset"]:
        """Disjoint train/val datasets holding different identities."""
        n = len(self.identities)
        n_val = max(2, int(round(n * val_fraction)))
        if n - n_val < 2:
            raise InsufficientDataError(f"cannot split {n} identities into two sets of >= 2")
        order = np.random.default_rng(seed).permutation(n)
        val_idx = sorted(order[:n_val].tolist())
        train_idx = sorted(order[n_val:].tolist())
        desc = {"val_fraction": val_fraction, "seed": seed}
        train = FaceDataset(self.root, [self.identities[i] for i in train_idx], {**desc, "part": "train"})
        val = FaceDataset(self.root, [self.identities[i] for i in val_idx], {**desc, "part": "val"})
        return train, val

    def to_manifest(self) -> dict:
        return {
            "root": str(self.root),
            "identities": [{"id": name, "images": [str(p.relative_to(self.root)) for p in imgs]} for name, imgs in self.identities],
            "split": self.split,
        }

    def save_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest(), indent=2))

    @classmethod
    def load_manifest(cls, path: str | Path) -> "FaceDataset":
        doc = json.loads(Path(path).read_text())
        root = Path(doc["root"])
        ids = [(e["id"], [root / p for p in e["images"]]) for e in doc["identities"]]
        return cls(root, ids, doc.get("split", {}))

    def load_arrays(self, img_ch: int = 1) -> tuple[np.ndarray, np.ndarray]:
        items = self.items()
        x = np.stack([load_image(p, img_ch) for p, _ in items])
        y = np.array([label for _, label in items], dtype=np.int64)
        return x, y


@dataclass(frozen=True)
class PairRecord:
    path_a: str
    path_b: str
    label: int  # 1 = match, 0 = non-match

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"pair label must be 0 or 1, got {self.label!r}")


def generate_pairs(dataset: FaceDataset, n_pairs: int, seed: int) -> list[PairRecord]:
    """Deterministic balanced pairs: ``n_pairs // 2`` matching, the rest non-matching.

    Pairs are unordered and drawn without replacement; only when the dataset
    has fewer distinct pairs of a kind than requested are repeats allowed.
    """
    if n_pairs < 2:
        raise ValueError("n_pairs must be at least 2")
    rng = np.random.default_rng(seed)
    n_match = n_pairs // 2
    n_non = n_pairs - n_match

    match_pool = [(a, b) for _, imgs in dataset.identities for i, a in enumerate(imgs) for b in imgs[i + 1 :]]
    if not match_pool:
        raise InsufficientDataError("no identity has two images; cannot form matching pairs")
    if len(match_pool) >= n_match:
        pick = rng.choice(len(match_pool), size=n_match, replace=False)
    else:
        logger.warning("only %d distinct matching pairs for %d requested; repeating", len(match_pool), n_match)
        extra = rng.choice(len(match_pool), size=n_match - len(match_pool), replace=True)
        pick = np.concatenate([rng.permutation(len(match_pool)), extra])
    matches = [PairRecord(str(match_pool[i][0]), str(match_pool[i][1]), 1) for i in pick]

    flat = [(p, k) for k, (_, imgs) in enumerate(dataset.identities) for p in imgs]
    sizes = np.array([len(imgs) for _, imgs in dataset.identities])
    n_distinct = int((sizes.sum() ** 2 - (sizes**2).sum()) // 2)
    seen: set[tuple[int, int]] = set()
    nonmatches = []
    while len(nonmatches) < n_non:
        i, j = rng.integers(0, len(flat), size=2)
        if flat[i][1] == flat[j][1]:
            continue
        key = (min(i, j), max(i, j))
        if key in seen and len(seen) < n_distinct:
            continue
        seen.add(key)
        a, b = (flat[i][0], flat[j][0]) if i < j else (flat[j][0], flat[i][0])
        nonmatches.append(PairRecord(str(a), str(b), 0))

    pairs = matches + nonmatches
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def write_pairs_csv(path: str | Path, pairs: Iterable[PairRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for p in pairs:
            writer.writerow([p.path_a, p.path_b, p.label])


def read_pairs_csv(path: str | Path) -> list[PairRecord]:
    """Parse ``path_a,path_b,label`` lines; LF or CRLF endings; blank lines skipped."""
    text = Path(path).read_bytes().decode("utf-8")
    pairs = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text, newline="")), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise PairsFormatError(lineno, f"expected 3 columns, got {len(row)}")
        label = row[2].strip()
        if label not in ("0", "1"):
            raise PairsFormatError(lineno, f"label must be 0 or 1, got {label!r}")
        pairs.append(PairRecord(row[0], row[1], int(label)))
    return pairs


class ImageCache:
    """Load each path once; relative paths resolve against ``base``."""

    def __init__(self, img_ch: int = 1, base: str | Path | None = None):
        self.img_ch = img_ch
        self.base = Path(base) if base is not None else None
        self._cache: dict[str, np.ndarray] = {}

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.base is not None:
            p = self.base / p
        return p

    def __call__(self, path: str) -> np.ndarray:
        if path not in self._cache:
            self._cache[path] = load_image(self.resolve(path), self.img_ch)
        return self._cache[path]

    def stack(self, paths: Sequence[str]) -> np.ndarray:
        return np.stack([self(p) for p in paths])
