"""Two-stream face model: recognition encoder, face reconstructor and class head."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvTranspose2d, global_max_pool, init_parameters, init_uniform
from .tensor import Tensor


class FeatureBundle(NamedTuple):
    C: Tensor  # (batch, c, h, w) convolutional feature map
    F: Tensor  # (batch, c) per-channel spatial maxima of C


@dataclass(frozen=True)
class Architecture:
    img_ch: int = 1
    resolution: int = 64
    enc_widths: tuple[int, ...] = (32, 64, 128, 128)
    enc_kernel: int = 3
    enc_padding: int = 1
    dec_widths: tuple[int, ...] = (128, 64, 32)
    dec_kernel: int = 4
    dec_padding: int = 1
    stride: int = 2
    num_identities: int = 2

    def __post_init__(self):
        if self.img_ch not in (1, 3):
            raise ValueError("img_ch must be 1 or 3")
        if self.num_identities < 1:
            raise ValueError("num_identities must be >= 1")
        if len(self.enc_widths) != len(self.dec_widths) + 1:
            raise ValueError("decoder needs one block per encoder stage (last width is img_ch)")

    @property
    def channels(self) -> int:
        return self.enc_widths[-1]

    @property
    def feature_size(self) -> int:
        s = self.resolution
        for _ in self.enc_widths:
            s = (s + 2 * self.enc_padding - self.enc_kernel) // self.stride + 1
        return s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_widths"] = list(self.enc_widths)
        d["dec_widths"] = list(self.dec_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["enc_widths"] = tuple(d["enc_widths"])
        d["dec_widths"] = tuple(d["dec_widths"])
        return cls(**d)


class Encoder:
    """Strided conv+ReLU stages followed by a global max pool."""

    def __init__(self, arch: Architecture, dtype=np.float32):
        self.arch = arch
        widths = (arch.img_ch,) + tuple(arch.enc_widths)
        self.layers = [
            Conv2d(cin, cout, arch.enc_kernel, arch.stride, arch.enc_padding, dtype=dtype)
            for cin, cout in zip(widths[:-1], widths[1:])
        ]

    def __call__(self, image: Tensor) -> FeatureBundle:
        return self.encode(image)

    def encode(self, image: Tensor) -> FeatureBundle:
        a = self.arch
        if image.ndim != 4 or image.shape[1:] != (a.img_ch, a.resolution, a.resolution):
            raise ValueError(f"encoder expects (batch, {a.img_ch}, {a.resolution}, {a.resolution}), got {image.shape}")
        h = image
        for layer in self.layers:
            h = T.relu(layer(h))
        return FeatureBundle(h, global_max_pool(h))

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


class Reconstructor:
    """Transposed conv stages back to image resolution; ReLU between, tanh at the end."""

    def __init__(self, arch: Architecture, dtype=np.float32):
        self.arch = arch
        widths = (arch.channels,) + tuple(arch.dec_widths) + (arch.img_ch,)
        self.layers = [
            ConvTranspose2d(cin, cout, arch.dec_kernel, arch.stride, arch.dec_padding, dtype=dtype)
            for cin, cout in zip(widths[:-1], widths[1:])
        ]

    def __call__(self, C: Tensor) -> Tensor:
        return self.reconstruct(C)

    def reconstruct(self, C: Tensor) -> Tensor:
        a = self.arch
        fs = a.feature_size
        if C.ndim != 4 or C.shape[1:] != (a.channels, fs, fs):
            raise ValueError(f"reconstructor expects (batch, {a.channels}, {fs}, {fs}), got {C.shape}")
        h = C
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            h = T.tanh(h) if i == last else T.relu(h)
        return h

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


class ClassHead:
    """Per-identity weight vectors for the margin loss (training only)."""

    def __init__(self, num_identities: int, channels: int, dtype=np.float32):
        self.W = Tensor(np.zeros((num_identities, channels), dtype), requires_grad=True)

    def init(self, rng: np.random.Generator) -> None:
        self.W.data = init_uniform(self.W.data, self.W.shape[1], rng)

    def parameters(self) -> list[Tensor]:
        return [self.W]


@dataclass
class FaceModel:
    arch: Architecture
    encoder: Encoder = field(init=False)
    reconstructor: Reconstructor = field(init=False)
    head: ClassHead = field(init=False)
    dtype: type = np.float32

    def __post_init__(self):
        self.encoder = Encoder(self.arch, self.dtype)
        self.reconstructor = Reconstructor(self.arch, self.dtype)
        self.head = ClassHead(self.arch.num_identities, self.arch.channels, self.dtype)

    @classmethod
    def create(cls, arch: Architecture, seed: int = 0, dtype=np.float32) -> "FaceModel":
        model = cls(arch, dtype=dtype)
        rng = np.random.default_rng(seed)
        for layer in model.encoder.layers + model.reconstructor.layers:
            init_parameters(layer, rng)
        model.head.init(rng)
        return model

    def encode(self, image) -> FeatureBundle:
        return self.encoder.encode(_as_input(image, self.dtype))

    def reconstruct(self, C) -> Tensor:
        return self.reconstructor.reconstruct(_as_input(C, self.dtype))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.encoder.layers):
            out += [(f"encoder.{i}.weight", layer.weight), (f"encoder.{i}.bias", layer.bias)]
        for i, layer in enumerate(self.reconstructor.layers):
            out += [(f"reconstructor.{i}.weight", layer.weight), (f"reconstructor.{i}.bias", layer.bias)]
        out.append(("head.W", self.head.W))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def astype(self, dtype) -> "FaceModel":
        """Copy with every parameter cast to ``dtype`` (e.g. float64 for gradient checks)."""
        other = FaceModel(self.arch, dtype=dtype)
        for (_, src), (_, dst) in zip(self.named_parameters(), other.named_parameters()):
            dst.data = src.data.astype(dtype)
        return other

    def features(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Pooled features for a stack of images, without recording a graph."""
        out = []
        with T.no_grad():
            for i in range(0, len(images), batch_size):
                out.append(self.encode(images[i : i + batch_size]).F.data)
        return np.concatenate(out)


def _as_input(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))
