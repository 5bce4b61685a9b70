"""Primitive differentiable operators: grouped conv, resize, transposed
depthwise conv, GELU and per-channel affine.

Every operator is a pure function of float64 ``(n, c, h, w)`` arrays and comes
with an explicit vector-Jacobian product.  Reductions inside a convolution run
in a fixed order (input channel, then kernel row, then kernel column) and
never go through BLAS, so results are bit-reproducible regardless of how the
output channels are split across worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import InvalidGeometryError, ShapeError
from .tensor import Shape2

ResizeMode = Literal["bilinear", "nearest"]

_num_threads = 1


def set_num_threads(n: int) -> None:
    """Split convolution output channels across ``n`` worker threads.

    Results are bit-identical for every ``n``.
    """
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


@dataclass
class ConvKernel:
    """Grouped square 2-D convolution weights plus geometry.

    ``weight`` has shape ``(out_channels, in_channels // groups, k, k)``.
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: Optional[int] = None
    groups: int = 1

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ShapeError(f"kernel must be (oc, ic/g, k, k), got {self.weight.shape}")
        if self.k % 2 != 1:
            raise ShapeError(f"kernel side must be odd, got {self.k}")
        if self.stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {self.stride}")
        if self.padding is None:
            self.padding = self.k // 2
        if self.groups < 1 or self.out_channels % self.groups:
            raise ShapeError("out_channels must be divisible by groups")
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.out_channels,):
                raise ShapeError("bias length must equal out_channels")

    @classmethod
    def depthwise(cls, weight, stride=1, bias=None):
        weight = np.asarray(weight, dtype=np.float64)
        return cls(weight, bias=bias, stride=stride, groups=weight.shape[0])

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def k(self) -> int:
        return self.weight.shape[2]

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    def output_size(self, n: int) -> int:
        return (n + 2 * self.padding - self.k) // self.stride + 1


def _window(i: int, n_out: int, stride: int) -> slice:
    return slice(i, i + stride * (n_out - 1) + 1, stride)


def _chunks(n: int):
    parts = min(_num_threads, n)
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run(fn, n: int) -> None:
    chunks = _chunks(n)
    if len(chunks) == 1:
        fn(*chunks[0])
        return
    with ThreadPoolExecutor(len(chunks)) as pool:
        list(pool.map(lambda ab: fn(*ab), chunks))


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _check_conv(x: np.ndarray, kern: ConvKernel):
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got shape {x.shape}")
    if x.shape[1] != kern.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, kernel expects {kern.in_channels}"
        )
    ho, wo = kern.output_size(x.shape[2]), kern.output_size(x.shape[3])
    if ho < 1 or wo < 1:
        raise InvalidGeometryError(
            f"conv output would be {ho}x{wo} for input {x.shape[2]}x{x.shape[3]}"
        )
    return ho, wo


def conv2d(x: np.ndarray, kern: ConvKernel) -> np.ndarray:
    """Zero-padded grouped cross-correlation (no kernel flip)."""
    ho, wo = _check_conv(x, kern)
    k, s = kern.k, kern.stride
    w = kern.weight
    xp = _pad(x, kern.padding)
    out = np.zeros((x.shape[0], kern.out_channels, ho, wo))
    icg = w.shape[1]
    ocg = kern.out_channels // kern.groups

    def work(lo, hi):
        # output channels [lo, hi); each one reads icg inputs of its own group
        for o in range(lo, hi):
            g = o // ocg
            acc = out[:, o]
            for ci in range(icg):
                src = xp[:, g * icg + ci]
                for i in range(k):
                    for j in range(k):
                        acc += w[o, ci, i, j] * src[:, _window(i, ho, s), _window(j, wo, s)]

    def work_depthwise(lo, hi):
        # vectorised over channels; same per-element accumulation order
        acc = out[:, lo:hi]
        src = xp[:, lo:hi]
        for i in range(k):
            for j in range(k):
                acc += w[lo:hi, 0, i, j][None, :, None, None] * src[:, :, _window(i, ho, s), _window(j, wo, s)]

    _run(work_depthwise if kern.is_depthwise else work, kern.out_channels)
    if kern.bias is not None:
        out += kern.bias[None, :, None, None]
    return out


def conv2d_vjp(x: np.ndarray, kern: ConvKernel, g_out: np.ndarray):
    """Return ``(g_x, g_weight, g_bias)``; ``g_bias`` is None without a bias."""
    ho, wo = _check_conv(x, kern)
    if g_out.shape != (x.shape[0], kern.out_channels, ho, wo):
        raise ShapeError(f"cotangent shape {g_out.shape} does not match conv output")
    k, s, p = kern.k, kern.stride, kern.padding
    w = kern.weight
    xp = _pad(x, p)
    g_xp = np.zeros_like(xp)
    g_w = np.zeros_like(w)
    icg = w.shape[1]
    ocg = kern.out_channels // kern.groups

    if kern.is_depthwise:
        def work(lo, hi):
            gx = g_xp[:, lo:hi]
            src = xp[:, lo:hi]
            go = g_out[:, lo:hi]
            for i in range(k):
                for j in range(k):
                    win = (slice(None), slice(None), _window(i, ho, s), _window(j, wo, s))
                    gx[win] += w[lo:hi, 0, i, j][None, :, None, None] * go
                    g_w[lo:hi, 0, i, j] = (go * src[win]).sum(axis=(0, 2, 3))

        _run(work, kern.out_channels)
    else:
        # input channels are independent for g_x; output channels for g_w
        def work_x(lo, hi):
            for c in range(lo, hi):
                g, ci = divmod(c, icg)
                go = g_out[:, g * ocg:(g + 1) * ocg]
                for i in range(k):
                    for j in range(k):
                        taps = w[g * ocg:(g + 1) * ocg, ci, i, j][None, :, None, None]
                        g_xp[:, c, _window(i, ho, s), _window(j, wo, s)] += (taps * go).sum(axis=1)

        def work_w(lo, hi):
            for o in range(lo, hi):
                g = o // ocg
                go = g_out[:, o]
                for ci in range(icg):
                    src = xp[:, g * icg + ci]
                    for i in range(k):
                        for j in range(k):
                            g_w[o, ci, i, j] = (go * src[:, _window(i, ho, s), _window(j, wo, s)]).sum()

        _run(work_x, kern.in_channels)
        _run(work_w, kern.out_channels)

    g_x = g_xp[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else g_xp
    g_b = g_out.sum(axis=(0, 2, 3)) if kern.bias is not None else None
    return np.ascontiguousarray(g_x), g_w, g_b


# --- resize -----------------------------------------------------------------

def _bilinear_axis(n_in: int, n_out: int):
    i = np.arange(n_out, dtype=np.float64)
    src = (i + 0.5) * (n_in / n_out) - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    # clamped neighbours are equal, so the fraction is irrelevant there
    frac[i0 == i1] = 0.0
    return i0, i1, frac


def _nearest_axis(n_in: int, n_out: int) -> np.ndarray:
    i = np.arange(n_out, dtype=np.int64)
    # floor((i + 0.5) * in / out) in exact integer arithmetic
    idx = ((2 * i + 1) * n_in) // (2 * n_out)
    return np.clip(idx, 0, n_in - 1).astype(np.intp)


def _check_target(target) -> Shape2:
    target = Shape2(int(target[0]), int(target[1]))
    if target.h < 1 or target.w < 1:
        raise ShapeError(f"resize target must be >= 1x1, got {target}")
    return target


def resize(x: np.ndarray, target, mode: ResizeMode = "bilinear") -> np.ndarray:
    """Half-pixel-centred resize to ``target`` (h, w).

    Bilinear source coordinates are ``(i + 0.5) * in / out - 0.5`` clamped at
    zero, interpolated as ``a + t * (b - a)`` so constant fields stay exact.
    """
    th, tw = _check_target(target)
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got shape {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if mode == "nearest":
        return np.ascontiguousarray(x[:, :, _nearest_axis(h, th)][:, :, :, _nearest_axis(w, tw)])
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    r0, r1, fr = _bilinear_axis(h, th)
    a = x[:, :, r0, :]
    t = a + fr[:, None] * (x[:, :, r1, :] - a)
    c0, c1, fc = _bilinear_axis(w, tw)
    a = t[:, :, :, c0]
    return a + fc * (t[:, :, :, c1] - a)


def resize_vjp(x_shape, target, mode: ResizeMode, g_out: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`resize` for an input of spatial size ``x_shape``."""
    th, tw = _check_target(target)
    h, w = int(x_shape[0]), int(x_shape[1])
    if g_out.ndim != 4 or g_out.shape[2:] != (th, tw):
        raise ShapeError(f"cotangent shape {g_out.shape} does not match target {(th, tw)}")
    n, c = g_out.shape[:2]
    if mode == "nearest":
        g_t = np.zeros((n, c, th, w))
        np.add.at(g_t, (slice(None), slice(None), slice(None), _nearest_axis(w, tw)), g_out)
        g_x = np.zeros((n, c, h, w))
        np.add.at(g_x, (slice(None), slice(None), _nearest_axis(h, th)), g_t)
        return g_x
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    c0, c1, fc = _bilinear_axis(w, tw)
    g_t = np.zeros((n, c, th, w))
    np.add.at(g_t, (slice(None), slice(None), slice(None), c0), g_out * (1.0 - fc))
    np.add.at(g_t, (slice(None), slice(None), slice(None), c1), g_out * fc)
    r0, r1, fr = _bilinear_axis(h, th)
    g_x = np.zeros((n, c, h, w))
    np.add.at(g_x, (slice(None), slice(None), r0), g_t * (1.0 - fr)[:, None])
    np.add.at(g_x, (slice(None), slice(None), r1), g_t * fr[:, None])
    return g_x


# --- transposed depthwise conv ----------------------------------------------

def _check_transposed(x: np.ndarray, kern: ConvKernel, target) -> Shape2:
    if not kern.is_depthwise or kern.stride != 2:
        raise ShapeError("transposed_dwconv needs a stride-2 depthwise kernel")
    if x.ndim != 4 or x.shape[1] != kern.out_channels:
        raise ShapeError(f"input shape {x.shape} does not match kernel channels")
    th, tw = _check_target(target)
    if th > 2 * x.shape[2] or tw > 2 * x.shape[3]:
        raise InvalidGeometryError(
            f"target {th}x{tw} exceeds the producible extent "
            f"{2 * x.shape[2]}x{2 * x.shape[3]}"
        )
    return Shape2(th, tw)


def _full_extent(n: int, k: int) -> int:
    return 2 * (n - 1) + k


def transposed_dwconv(x: np.ndarray, kern: ConvKernel, target) -> np.ndarray:
    """Stride-2 transposed depthwise conv, cropped to ``target``.

    The crop window starts at ``padding`` so the result is the exact adjoint
    of ``conv2d(., kern)`` on a ``target``-sized input.
    """
    th, tw = _check_transposed(x, kern, target)
    n, c, h, w = x.shape
    k, p = kern.k, kern.padding
    fh, fw = _full_extent(h, k), _full_extent(w, k)
    full = np.zeros((n, c, max(fh, p + th), max(fw, p + tw)))
    wt = kern.weight[:, 0]
    for i in range(k):
        for j in range(k):
            full[:, :, _window(i, h, 2), _window(j, w, 2)] += wt[:, i, j][None, :, None, None] * x
    return np.ascontiguousarray(full[:, :, p:p + th, p:p + tw])


def transposed_dwconv_vjp(x: np.ndarray, kern: ConvKernel, target, g_out: np.ndarray):
    """Return ``(g_x, g_weight)``."""
    th, tw = _check_transposed(x, kern, target)
    if g_out.shape != (x.shape[0], x.shape[1], th, tw):
        raise ShapeError(f"cotangent shape {g_out.shape} does not match target")
    n, c, h, w = x.shape
    k, p = kern.k, kern.padding
    full = np.zeros((n, c, max(_full_extent(h, k), p + th), max(_full_extent(w, k), p + tw)))
    full[:, :, p:p + th, p:p + tw] = g_out
    wt = kern.weight[:, 0]
    g_x = np.zeros_like(x)
    g_w = np.zeros_like(kern.weight)
    for i in range(k):
        for j in range(k):
            win = full[:, :, _window(i, h, 2), _window(j, w, 2)]
            g_x += wt[:, i, j][None, :, None, None] * win
            g_w[:, 0, i, j] = (win * x).sum(axis=(0, 2, 3))
    return g_x, g_w


# --- pointwise nonlinearity and affine --------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximated GELU."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def gelu_vjp(x: np.ndarray, g_out: np.ndarray) -> np.ndarray:
    if g_out.shape != x.shape:
        raise ShapeError(f"cotangent shape {g_out.shape} does not match {x.shape}")
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return g_out * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _check_affine(x, scale, shift):
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got shape {x.shape}")
    if np.shape(scale) != (x.shape[1],) or np.shape(shift) != (x.shape[1],):
        raise ShapeError(f"scale/shift must have length {x.shape[1]}")


def channel_affine(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Inference-mode batch norm folded into ``scale * x + shift`` per channel."""
    _check_affine(x, scale, shift)
    return scale[None, :, None, None] * x + shift[None, :, None, None]


def channel_affine_vjp(x, scale, shift, g_out):
    """Return ``(g_x, g_scale, g_shift)``."""
    _check_affine(x, scale, shift)
    if g_out.shape != x.shape:
        raise ShapeError(f"cotangent shape {g_out.shape} does not match {x.shape}")
    return (
        scale[None, :, None, None] * g_out,
        (g_out * x).sum(axis=(0, 2, 3)),
        g_out.sum(axis=(0, 2, 3)),
    )
