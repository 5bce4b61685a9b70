"""Straight-line reference implementations used as test oracles.

Nothing here shares code with :mod:`recconv.nn` or :mod:`recconv.recursive`:
convolution goes through ``scipy.ndimage.correlate`` and bilinear resizing
through dense per-axis interpolation matrices.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage


def depthwise_conv(x: np.ndarray, weight: np.ndarray, stride: int = 1) -> np.ndarray:
    """Zero-padded same-size depthwise correlation, optionally subsampled."""
    out = np.empty_like(x)
    for n in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[n, c] = ndimage.correlate(x[n, c], weight[c, 0], mode="constant", cval=0.0)
    return out[:, :, ::stride, ::stride] if stride > 1 else out


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` matrix of half-pixel bilinear weights."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        lo = min(int(np.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        t = src - lo if hi != lo else 0.0
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        m[i, min(int(np.floor((i + 0.5) * n_in / n_out)), n_in - 1)] = 1.0
    return m


def resize(x: np.ndarray, target, mode: str = "bilinear") -> np.ndarray:
    make = bilinear_matrix if mode == "bilinear" else nearest_matrix
    mh = make(x.shape[2], target[0])
    mw = make(x.shape[3], target[1])
    return np.einsum("ih,nchw,jw->ncij", mh, x, mw)


def stride2_conv_matrix(weight2d: np.ndarray, h: int, w: int) -> np.ndarray:
    """Dense matrix of a single-channel stride-2 same-padded correlation
    mapping a flattened ``h x w`` image to its ``ceil(h/2) x ceil(w/2)`` output."""
    k = weight2d.shape[0]
    p = k // 2
    ho, wo = (h + 1) // 2, (w + 1) // 2
    m = np.zeros((ho * wo, h * w))
    for oy in range(ho):
        for ox in range(wo):
            for i in range(k):
                for j in range(k):
                    iy, ix = 2 * oy + i - p, 2 * ox + j - p
                    if 0 <= iy < h and 0 <= ix < w:
                        m[oy * wo + ox, iy * w + ix] += weight2d[i, j]
    return m


def recconv_parallel(x: np.ndarray, down: np.ndarray, levels, mode: str = "bilinear") -> np.ndarray:
    """Parallel aggregation written out level by level.

    ``down`` and ``levels[i]`` are ``(C, 1, k, k)`` weight arrays with the
    deepest level first, as in :class:`recconv.RecConvWeights`.
    """
    level = len(levels) - 1
    scales = [x]
    for _ in range(level):
        scales.append(depthwise_conv(scales[-1], down, stride=2))
    # fused[d] is the map entering the level-d conv
    fused = [None] * (level + 1)
    fused[level] = scales[level]
    for d in range(level, 0, -1):
        filtered = depthwise_conv(fused[d], levels[level - d])
        fused[d - 1] = scales[d - 1] + resize(filtered, scales[d - 1].shape[2:], mode)
    return depthwise_conv(fused[0], levels[level])
