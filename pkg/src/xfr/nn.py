"""Convolution, transposed convolution and global max pooling layers.

Convolutions use the cross-correlation convention (no kernel flip) with zero
padding. Both directions go through the same im2col/col2im pair, so the
transposed convolution is the exact adjoint of :func:`conv2d` for the same
stride, padding and kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import Tensor


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def tconv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """(B, C, H, W) -> (B*oh*ow, C*kh*kw), rows in row-major output order."""
    b, c, h, w = x.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    return cols, oh, ow


def _col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back onto the image."""
    b, c, h, w = x_shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    taps = np.ascontiguousarray(cols.reshape(b, oh * ow, c * kh * kw).transpose(0, 2, 1))
    return _scatter_taps(taps.reshape(b, c, kh, kw, oh, ow), x_shape, stride, padding)


def _scatter_taps(taps: np.ndarray, x_shape: tuple, stride: int, padding: int) -> np.ndarray:
    """Sum taps (B, C, kh, kw, oh, ow) onto a (B, C, H, W) image.

    Taps go into one dense plane per stride phase, which are then interleaved;
    each output element still sums its taps in row-major kernel order.
    """
    b, c, h, w = x_shape
    _, _, kh, kw, oh, ow = taps.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ph = max(oh + (kh - 1) // stride, -(-hp // stride))
    pw = max(ow + (kw - 1) // stride, -(-wp // stride))
    planes = np.zeros((stride, stride, b, c, ph, pw), dtype=taps.dtype)
    for i in range(kh):
        qi, ri = divmod(i, stride)
        for j in range(kw):
            qj, rj = divmod(j, stride)
            planes[ri, rj, :, :, qi : qi + oh, qj : qj + ow] += taps[:, :, i, j]
    out = np.empty((b, c, hp, wp), dtype=taps.dtype)
    for ri in range(stride):
        for rj in range(stride):
            dst = out[:, :, ri::stride, rj::stride]
            dst[...] = planes[ri, rj, :, :, : dst.shape[2], : dst.shape[3]]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def _rows(y: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C)."""
    return y.transpose(0, 2, 3, 1).reshape(-1, y.shape[1])


def _unrows(m: np.ndarray, b: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(m.reshape(b, h, w, -1).transpose(0, 3, 1, 2))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B, Cin, H, W) with ``weight`` (Cout, Cin, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape}, {weight.shape}")
    cout, cin, kh, kw = weight.shape
    b, c, h, w = x.shape
    if c != cin:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {cin}")
    if conv_output_size(h, kh, stride, padding) < 1 or conv_output_size(w, kw, stride, padding) < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{w} with padding {padding}")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    wm = weight.data.reshape(cout, -1)
    out = cols @ wm.T
    if bias is not None:
        out = out + bias.data
    y = _unrows(out, b, oh, ow)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = _rows(g)
        gx = _col2im(g2 @ wm, x.shape, kh, kw, stride, padding) if x.requires_grad else None
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return T.make_node(y, parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of ``x`` (B, Cin, H, W) with ``weight`` (Cin, Cout, kh, kw).

    Without bias this is the adjoint of ``conv2d(., weight, None, stride, padding)``
    mapping Cout channels to Cin channels.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-d input and weight, got {x.shape}, {weight.shape}")
    cin, cout, kh, kw = weight.shape
    b, c, h, w = x.shape
    if c != cin:
        raise ValueError(f"conv_transpose2d: input has {c} channels, weight expects {cin}")
    oh = tconv_output_size(h, kh, stride, padding)
    ow = tconv_output_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ValueError("conv_transpose2d: non-positive output size")
    if conv_output_size(oh, kh, stride, padding) != h or conv_output_size(ow, kw, stride, padding) != w:
        raise ValueError("conv_transpose2d: geometry has no matching forward convolution")
    out_shape = (b, cout, oh, ow)
    wm = weight.data.reshape(cin, -1)
    # per-sample GEMM: each image's output is independent of its batch-mates
    taps = np.matmul(wm.T, x.data.reshape(b, cin, h * w))
    y = _scatter_taps(taps.reshape(b, cout, kh, kw, h, w), out_shape, stride, padding)
    if bias is not None:
        y += bias.data.reshape(1, -1, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        cols, _, _ = _im2col(g, kh, kw, stride, padding)
        gx = _unrows(cols @ wm.T, b, h, w) if x.requires_grad else None
        gw = (_rows(x.data).T @ cols).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return T.make_node(y, parents, bw, "conv_transpose2d")


def global_max_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial maximum; gradient goes to the first argmax."""
    if x.ndim != 4:
        raise ValueError(f"global_max_pool expects (B, C, H, W), got {x.shape}")
    return T.max(x, axis=(2, 3))[0]


def init_uniform(weight: np.ndarray, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=weight.shape).astype(weight.dtype)


@dataclass
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0
    dtype: type = np.float32
    weight: Tensor = field(init=False)
    bias: Tensor = field(init=False)

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError("kernel and stride must be >= 1, padding >= 0")
        self.weight = Tensor(np.zeros((self.out_ch, self.in_ch, self.kernel, self.kernel), self.dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(self.out_ch, self.dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def output_size(self, size: int) -> int:
        return conv_output_size(size, self.kernel, self.stride, self.padding)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class ConvTranspose2d:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0
    dtype: type = np.float32
    weight: Tensor = field(init=False)
    bias: Tensor = field(init=False)

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError("kernel and stride must be >= 1, padding >= 0")
        self.weight = Tensor(np.zeros((self.in_ch, self.out_ch, self.kernel, self.kernel), self.dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(self.out_ch, self.dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)

    def output_size(self, size: int) -> int:
        return tconv_output_size(size, self.kernel, self.stride, self.padding)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def init_parameters(layer: Conv2d | ConvTranspose2d, rng_seed: int | np.random.Generator) -> None:
    """Uniform(-b, b) weights with b = sqrt(1 / (in_ch * kh * kw)); zero bias."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    fan_in = layer.in_ch * layer.kernel * layer.kernel
    layer.weight.data = init_uniform(layer.weight.data, fan_in, rng)
    layer.bias.data = np.zeros_like(layer.bias.data)
