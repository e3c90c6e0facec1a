"""Joint training of the recognition and reconstruction streams."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .losses import LossConfig, arcface_loss, mse_loss, total_loss
from .model import Architecture, FaceModel
from .optim import SGD, Adam, clip_grad_norm, cosine_lr
from .tensor import NonFiniteError, Tensor

logger = logging.getLogger(__name__)

# sub-seed offsets derived from the single run seed
INIT_SEED_OFFSET = 0
SHUFFLE_SEED_OFFSET = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch: int = 8
    lr_sgd: float = 0.02
    momentum: float = 0.9
    lr_adam: float = 2e-4
    lam: float = 1.0
    margin: float = 0.5
    scale: float = 30.0
    seed: int = 0
    val_fraction: float = 0.2
    grad_clip: float = 3.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")
        if self.lr_sgd <= 0 or self.lr_adam <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning rates must be > 0 and momentum in [0, 1)")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0 (0 disables clipping)")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        LossConfig(self.lam, self.margin, self.scale)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(self.lam, self.margin, self.scale)


@dataclass
class EpochLosses:
    epoch: int
    l_id: float
    l_rec: float
    total: float


@dataclass
class TrainResult:
    model: FaceModel
    history: list[EpochLosses] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def train_step(
    model: FaceModel, x: np.ndarray, y: np.ndarray, cfg: LossConfig, sgd: SGD, adam: Adam, grad_clip: float = 0.0
) -> tuple[float, float, float]:
    """One joint update. The encoder sees both losses but is stepped by SGD only."""
    sgd.zero_grad()
    adam.zero_grad()
    feats = model.encode(x)
    l_id = arcface_loss(feats.F, model.head, y, cfg)
    recon = model.reconstruct(feats.C)
    l_rec = mse_loss(recon, x)
    loss = total_loss(l_id, l_rec, cfg.lam)
    loss.backward()
    if grad_clip:
        clip_grad_norm(sgd.params, grad_clip)
    sgd.step()
    adam.step()
    return l_id.item(), l_rec.item(), loss.item()


def write_losses_csv(path: str | Path, history: list[EpochLosses]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_id", "L_rec", "total"])
        for h in history:
            w.writerow([h.epoch, f"{h.l_id:.9g}", f"{h.l_rec:.9g}", f"{h.total:.9g}"])


def train(
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    arch: Architecture | None = None,
    out_dir: str | Path | None = None,
    metadata: dict | None = None,
) -> TrainResult:
    """Train encoder, class head and reconstructor jointly.

    ``images`` is (N, img_ch, res, res) in [-1, 1]; ``labels`` are identity
    indices in [0, num_identities). One checkpoint per epoch and ``losses.csv``
    are written under ``out_dir`` when given.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("empty training set")
    n_ids = int(labels.max()) + 1
    if len(np.unique(labels)) < 2:
        raise ValueError("training needs at least 2 identities")
    if arch is None:
        arch = Architecture(img_ch=images.shape[1], resolution=images.shape[2], num_identities=n_ids)
    elif arch.num_identities < n_ids:
        raise ValueError(f"architecture has {arch.num_identities} identities, labels need {n_ids}")

    model = FaceModel.create(arch, seed=cfg.seed + INIT_SEED_OFFSET)
    sgd = SGD(model.encoder.parameters() + model.head.parameters(), lr=cfg.lr_sgd, momentum=cfg.momentum)
    adam = Adam(model.reconstructor.parameters(), lr=cfg.lr_adam)
    rng = np.random.default_rng(cfg.seed + SHUFFLE_SEED_OFFSET)

    n = len(images)
    steps_per_epoch = math.ceil(n / cfg.batch)
    total_steps = steps_per_epoch * cfg.epochs
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    loss_cfg = cfg.loss
    result = TrainResult(model)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(3)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch : (b + 1) * cfg.batch]
            sgd.lr = cosine_lr(cfg.lr_sgd, step, total_steps)
            try:
                vals = train_step(model, images[idx], labels[idx], loss_cfg, sgd, adam, cfg.grad_clip)
            except (NonFiniteError, ZeroDivisionError) as exc:
                raise TrainingDivergedError(f"training diverged at epoch {epoch}, step {step}: {exc}") from exc
            if not all(math.isfinite(v) for v in vals):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}: {vals}")
            sums += np.array(vals) * len(idx)
            step += 1
        l_id, l_rec, tot = (sums / n).tolist()
        result.history.append(EpochLosses(epoch, l_id, l_rec, tot))
        logger.info("epoch %d/%d  L_id=%.4f  L_rec=%.5f  total=%.4f  (%.1fs)", epoch, cfg.epochs, l_id, l_rec, tot, time.perf_counter() - t0)
        if out is not None:
            meta = {
                **(metadata or {}),
                "epoch": epoch,
                "seed": cfg.seed,
                "train_config": asdict(cfg),
                "loss_history": [asdict(h) for h in result.history],
            }
            result.checkpoints.append(save_checkpoint(out / f"epoch_{epoch:03d}.xfrc", model, meta))
            write_losses_csv(out / "losses.csv", result.history)
    return result


def smoothed(values: list[float], window: int = 5) -> np.ndarray:
    """Trailing moving average (valid part only)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    return np.convolve(v, np.ones(window) / window, mode="valid")
