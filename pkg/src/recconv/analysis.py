"""Complexity accounting and receptive-field measurement.

MACs count one multiply-accumulate per kernel tap per output element.  The
published complexity table labels the same quantity "FLOPs".  Resize cost is
left out unless asked for, matching the convention of counting convolutions
only.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from .blocks import ChannelMixer, DownsampleBlock, MetaNeXtBlock, Model, Stem
from .errors import InvalidGeometryError, ShapeError
from .nn import ConvKernel
from .recursive import (
    RecConv,
    RecConvConfig,
    RecConvWeights,
    recconv_forward,
    recconv_param_count,
    recconv_vjp,
    upsample_param_count,
)

_UPSAMPLE_PARAM = re.compile(r"(^|\.)up\.\d+$")


# --- parameters --------------------------------------------------------------

def _params_of(obj) -> Dict[str, np.ndarray]:
    if isinstance(obj, ConvKernel):
        out = {"weight": obj.weight}
        if obj.bias is not None:
            out["bias"] = obj.bias
        return out
    return obj.params()


def count_params(obj) -> Dict[str, int]:
    """Enumerate the stored arrays of ``obj`` by role.

    Keys: ``conv_weights`` (every conv kernel except transposed upsample
    kernels), ``upsample``, ``biases``, ``norm`` and ``total``.
    """
    out = {"conv_weights": 0, "upsample": 0, "biases": 0, "norm": 0}
    for name, arr in _params_of(obj).items():
        if arr is None:
            continue
        if name.endswith("bias"):
            out["biases"] += arr.size
        elif name.endswith(("scale", "shift")):
            out["norm"] += arr.size
        elif _UPSAMPLE_PARAM.search(name):
            out["upsample"] += arr.size
        else:
            out["conv_weights"] += arr.size
    out["total"] = sum(out.values())
    return out


def model_param_count_closed_form(model_or_cfg) -> int:
    """Total parameter count of a model derived from its config alone."""
    cfg = model_or_cfg.cfg if isinstance(model_or_cfg, Model) else model_or_cfg
    r = cfg.expansion
    c0 = cfg.stages[0].channels
    mid = c0 // 2
    total = cfg.in_channels * mid * 9 + mid + mid * c0 * 9 + c0

    def mixer(c):
        return 2 * r * c * c + r * c + c

    for s, st in enumerate(cfg.stages):
        c = st.channels
        if s > 0:
            p = c // 2
            total += 49 * p + p * c + 2 * c + mixer(c)
        rc = cfg.recconv_config(st)
        total += st.depth * (recconv_param_count(rc) + upsample_param_count(rc) + 2 * c + mixer(c))
    return total


# --- MACs --------------------------------------------------------------------

def _conv_macs(kern: ConvKernel, h: int, w: int):
    ho, wo = kern.output_size(h), kern.output_size(w)
    if ho < 1 or wo < 1:
        raise InvalidGeometryError(f"conv output would be {ho}x{wo}")
    return kern.out_channels * kern.weight.shape[1] * kern.k ** 2 * ho * wo, ho, wo


class _MacCounter:
    def __init__(self, include_resize: bool):
        self.include_resize = include_resize
        self.counts = {"conv": 0, "upsample_conv": 0, "resize": 0}

    def conv(self, kern, h, w):
        m, ho, wo = _conv_macs(kern, h, w)
        self.counts["conv"] += m
        return ho, wo

    def recconv(self, cfg: RecConvConfig, w: RecConvWeights, h: int, wd: int):
        if min(h, wd) < cfg.min_side:
            raise InvalidGeometryError(
                f"level {cfg.level} needs spatial sides >= {cfg.min_side}, got {h}x{wd}",
                minimum=cfg.min_side,
            )
        shapes = [(h, wd)]
        for _ in range(cfg.level):
            shapes.append(self.conv(w.down, *shapes[-1]))

        def upsample(depth):
            src, dst = shapes[depth], shapes[depth - 1]
            if cfg.upsample == "transposed_dwconv":
                self.counts["upsample_conv"] += cfg.channels * cfg.kernel ** 2 * src[0] * src[1]
            elif cfg.upsample == "bilinear" and self.include_resize:
                self.counts["resize"] += 4 * cfg.channels * dst[0] * dst[1]

        if cfg.aggregation == "parallel":
            for i in range(cfg.level):
                depth = cfg.level - i
                self.conv(w.levels[i], *shapes[depth])
                upsample(depth)
            self.conv(w.levels[cfg.level], h, wd)
        else:
            for depth in range(cfg.level, 0, -1):
                self.conv(w.b, *shapes[depth])
                if depth < cfg.level:
                    self.conv(w.a, *shapes[depth])
                upsample(depth)
            self.conv(w.c, h, wd)
            self.conv(w.d, h, wd)
        return h, wd

    def visit(self, obj, h, w):
        if isinstance(obj, ConvKernel):
            return self.conv(obj, h, w)
        if isinstance(obj, RecConv):
            return self.recconv(obj.cfg, obj.weights, h, w)
        if isinstance(obj, ChannelMixer):
            return self.conv(obj.down, *self.conv(obj.up, h, w))
        if isinstance(obj, MetaNeXtBlock):
            return self.visit(obj.mixer, *self.visit(obj.token, h, w))
        if isinstance(obj, DownsampleBlock):
            h, w = self.conv(obj.expand, *self.conv(obj.spatial, h, w))
            return self.visit(obj.mixer, h, w)
        if isinstance(obj, Stem):
            return self.conv(obj.conv2, *self.conv(obj.conv1, h, w))
        if isinstance(obj, Model):
            obj.shape_ledger(h, w)
            for _, layer in obj.layers():
                h, w = self.visit(layer, h, w)
            return h, w
        raise TypeError(f"cannot count MACs of {type(obj).__name__}")


def count_macs(obj, input_hw: Tuple[int, int], include_resize: bool = False) -> Dict[str, int]:
    """Walk ``obj``'s dataflow for an ``input_hw`` input (batch 1).

    Keys: ``conv`` (base convolutions), ``upsample_conv`` (transposed
    upsample kernels), ``resize`` (bilinear at 4 MACs per output element,
    only with ``include_resize``) and ``total``.
    """
    counter = _MacCounter(include_resize)
    counter.visit(obj, int(input_hw[0]), int(input_hw[1]))
    out = dict(counter.counts)
    out["total"] = sum(out.values())
    return out


def mac_factor_closed_form(level: int) -> Fraction:
    """``1 + 2 * sum_{n=1..level} 4**-n``; strictly below 5/3 for every level."""
    if level < 0:
        raise ValueError("level must be >= 0")
    return 1 + 2 * sum((Fraction(1, 4 ** n) for n in range(1, level + 1)), Fraction(0))


def recurrent_mac_factor_closed_form(level: int) -> Fraction:
    """Conv MACs of recurrent aggregation relative to one full-resolution conv.

    Two full-resolution convs, the shared downsampler and the input kernel at
    every depth, and the hidden-state kernel at all but the deepest.
    """
    if level < 1:
        raise ValueError("recurrent aggregation needs level >= 1")
    geo = lambda top: sum((Fraction(1, 4 ** n) for n in range(1, top + 1)), Fraction(0))
    return 2 + 2 * geo(level) + geo(level - 1)


def base_macs(cfg: RecConvConfig, h: int, w: int) -> int:
    """MACs of one stride-1 depthwise ``k x k`` conv on an ``h x w`` map."""
    return cfg.kernel ** 2 * cfg.channels * h * w


def nominal_erf(k: int, level: int) -> int:
    return k * 2 ** level


# --- receptive fields --------------------------------------------------------

def support_box(values: np.ndarray) -> Optional[Tuple[int, int, int, int]]:
    """Inclusive ``(top, left, bottom, right)`` of the nonzero entries."""
    rows = np.flatnonzero(np.any(values != 0, axis=1))
    cols = np.flatnonzero(np.any(values != 0, axis=0))
    if rows.size == 0:
        return None
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


@dataclass
class ERFMap:
    """``|d(sum_c y[c, center]) / dx|`` summed over input channels."""

    values: np.ndarray
    center: Tuple[int, int]  # input-grid reference point (h // 2, w // 2)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    def box(self) -> Optional[Tuple[int, int, int, int]]:
        return support_box(self.values)

    def relative_box(self) -> Optional[Tuple[int, int, int, int]]:
        """Support box as offsets from ``center``."""
        b = self.box()
        if b is None:
            return None
        cy, cx = self.center
        return b[0] - cy, b[1] - cx, b[2] - cy, b[3] - cx

    def support_size(self) -> Tuple[int, int]:
        b = self.box()
        if b is None:
            return 0, 0
        return b[2] - b[0] + 1, b[3] - b[1] + 1

    def support_area(self) -> int:
        h, w = self.support_size()
        return h * w

    def energy_side(self, fraction: float = 0.95) -> int:
        """Side of the smallest centred square holding ``fraction`` of the mass."""
        total = self.values.sum()
        if total == 0:
            return 0
        cy, cx = self.center
        for r in range(max(self.h, self.w)):
            win = self.values[max(cy - r, 0):cy + r + 1, max(cx - r, 0):cx + r + 1]
            if win.sum() >= fraction * total:
                return 2 * r + 1
        return 2 * max(self.h, self.w) - 1


def erf_map(op, x: np.ndarray, upto: Optional[int] = None) -> ERFMap:
    """Backpropagate a one-hot cotangent at the spatial centre of the output.

    ``op`` is a :class:`RecConv`, a block, or a :class:`Model` (``upto``
    stops the model after that stage).
    """
    if isinstance(op, Model):
        y, _, caches = op.forward(x, upto=upto)
        back = lambda g: op.vjp(caches, g)[0]
    else:
        y, cache = op.forward(x)
        back = lambda g: op.vjp(cache, g)[0]
    g = np.zeros_like(y)
    g[:, :, y.shape[2] // 2, y.shape[3] // 2] = 1.0
    gx = back(g)
    return ERFMap(np.abs(gx).sum(axis=(0, 1)), (x.shape[2] // 2, x.shape[3] // 2))


@lru_cache(maxsize=None)
def structural_box(cfg: RecConvConfig) -> Tuple[int, int, int, int]:
    """Exact support of one output pixel, as offsets from that pixel.

    Brute force: with every weight equal to 1 no cancellation can occur, so
    the nonzero set of the input gradient of the centre output is exactly the
    set of inputs that influence it.  The probe grows until the support no
    longer touches the border.
    """
    probe = dataclasses.replace(cfg, channels=1)
    w = RecConvWeights.constant(probe, 1.0)
    side = 1
    while side < max(4 * cfg.nominal_erf, cfg.min_side):
        side *= 2
    while True:
        x = np.zeros((1, 1, side, side))
        y, trace = recconv_forward(x, probe, w)
        g = np.zeros_like(y)
        c = side // 2
        g[0, 0, c, c] = 1.0
        gx, _ = recconv_vjp(trace, probe, w, g)
        top, left, bottom, right = support_box(gx[0, 0])
        if top > 0 and left > 0 and bottom < side - 1 and right < side - 1:
            return top - c, left - c, bottom - c, right - c
        side *= 2


def structural_rf(cfg: RecConvConfig) -> int:
    """Side length of :func:`structural_box` (the box is square)."""
    top, left, bottom, right = structural_box(cfg)
    h, w = bottom - top + 1, right - left + 1
    if h != w:
        raise ShapeError(f"structural support is not square: {h}x{w}")
    return h


# --- reports -----------------------------------------------------------------

@dataclass
class StageComplexity:
    name: str
    cfg: RecConvConfig
    input_hw: Tuple[int, int]
    blocks: int
    params_measured: int
    params_closed_form: int
    upsample_params: int
    macs_measured: int
    macs_closed_form: Fraction
    base_macs: int
    upsample_macs: int
    resize_macs: int
    nominal_erf: int
    structural_rf: int

    @property
    def mac_factor(self) -> Fraction:
        return Fraction(self.macs_measured, self.base_macs)

    @property
    def mac_factor_closed_form(self) -> Fraction:
        return self.macs_closed_form / self.base_macs

    @property
    def macs_exact(self) -> bool:
        """Whether every decomposition level halves exactly, making the
        closed-form MAC count contractual."""
        step = 2 ** self.cfg.level
        return self.input_hw[0] % step == 0 and self.input_hw[1] % step == 0

    @property
    def ok(self) -> bool:
        if self.params_measured != self.params_closed_form:
            return False
        if not self.macs_exact:
            # ceil-halved pyramids are relatively larger; the closed form and
            # its 5/3 bound only hold when every level halves exactly
            return True
        if self.macs_measured != self.macs_closed_form:
            return False
        return self.cfg.aggregation != "parallel" or self.mac_factor < Fraction(5, 3)


@dataclass
class ComplexityReport:
    stages: List[StageComplexity]
    params_measured: int
    params_closed_form: int
    macs_total: int
    include_resize_macs: bool

    @property
    def ok(self) -> bool:
        return self.params_measured == self.params_closed_form and all(s.ok for s in self.stages)


def _stage_complexity(name, rc: RecConv, hw, blocks, include_resize, structural=True):
    cfg = rc.cfg
    macs = count_macs(rc, hw, include_resize)
    base = base_macs(cfg, *hw)
    factor = (mac_factor_closed_form(cfg.level) if cfg.aggregation == "parallel"
              else recurrent_mac_factor_closed_form(cfg.level))
    params = count_params(rc)
    return StageComplexity(
        name=name, cfg=cfg, input_hw=tuple(hw), blocks=blocks,
        params_measured=params["conv_weights"],
        params_closed_form=recconv_param_count(cfg),
        upsample_params=params["upsample"],
        macs_measured=macs["conv"],
        macs_closed_form=base * factor,
        base_macs=base,
        upsample_macs=macs["upsample_conv"],
        resize_macs=macs["resize"],
        nominal_erf=cfg.nominal_erf,
        structural_rf=structural_rf(cfg) if structural else 0,
    )


def complexity_report(op, input_hw, include_resize: bool = False, structural: bool = True) -> ComplexityReport:
    """Measured vs closed-form parameters and MACs for a RecConv or a model.

    For a model there is one row per stage, describing a single RecConv of
    that stage at its feature-map size.
    """
    hw = (int(input_hw[0]), int(input_hw[1]))
    if isinstance(op, RecConv):
        st = _stage_complexity("recconv", op, hw, 1, include_resize, structural)
        return ComplexityReport([st], st.params_measured, st.params_closed_form,
                                count_macs(op, hw, include_resize)["total"], include_resize)
    if not isinstance(op, Model):
        raise TypeError(f"cannot report on {type(op).__name__}")
    ledger = dict(op.shape_ledger(*hw))
    rows = []
    for s, blocks in enumerate(op.stages):
        if not blocks:
            continue
        _, h, w = ledger[f"stage{s + 1}"]
        rows.append(_stage_complexity(f"stage{s + 1}", blocks[0].token, (h, w), len(blocks),
                                      include_resize, structural))
    return ComplexityReport(
        rows,
        count_params(op)["total"],
        model_param_count_closed_form(op),
        count_macs(op, hw, include_resize)["total"],
        include_resize,
    )
