"""The recursive multi-scale convolution operator.

The input is halved ``level`` times by one shared stride-2 depthwise conv.
Each coarse map is filtered by its own small depthwise conv, upsampled to the
next finer scale and added in, and a last conv runs at full resolution.  The
recurrent variant instead folds a fixed set of five kernels over the scale
sequence like an RNN over time steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, InvalidGeometryError, ShapeError
from .nn import ConvKernel
from .rng import SplitMix64
from .tensor import Shape2, spatial

Aggregation = Literal["parallel", "recurrent"]
Upsample = Literal["bilinear", "nearest", "transposed_dwconv"]

AGGREGATIONS = ("parallel", "recurrent")
UPSAMPLES = ("bilinear", "nearest", "transposed_dwconv")
RECURRENT_KERNELS = ("a", "b", "c", "d")


@dataclass(frozen=True)
class RecConvConfig:
    channels: int
    kernel: int = 5
    level: int = 1
    aggregation: Aggregation = "parallel"
    upsample: Upsample = "bilinear"

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be a positive odd integer, got {self.kernel}")
        if self.level < 0:
            raise ConfigError(f"level must be >= 0, got {self.level}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.upsample not in UPSAMPLES:
            raise ConfigError(f"unknown upsample mode {self.upsample!r}")
        if self.aggregation == "recurrent" and self.level < 1:
            raise ConfigError("recurrent aggregation requires level >= 1")

    @property
    def nominal_erf(self) -> int:
        return self.kernel * 2 ** self.level

    @property
    def min_side(self) -> int:
        """Smallest input side accepted by the forward pass."""
        return 2 ** self.level


@dataclass
class RecConvWeights:
    """Kernels of one operator.

    ``levels[i]`` is applied at depth ``level - i`` (deepest first), so
    ``levels[-1]`` is the full-resolution conv.  ``up[j - 1]`` upsamples from
    depth ``j`` and exists only in ``transposed_dwconv`` mode.
    """

    down: ConvKernel
    levels: List[ConvKernel] = field(default_factory=list)
    a: Optional[ConvKernel] = None
    b: Optional[ConvKernel] = None
    c: Optional[ConvKernel] = None
    d: Optional[ConvKernel] = None
    up: List[ConvKernel] = field(default_factory=list)

    @classmethod
    def build(cls, cfg: RecConvConfig, make) -> "RecConvWeights":
        """Allocate every kernel, calling ``make(shape)`` for each weight array
        in a fixed order: down, level kernels (or a, b, c, d), upsample kernels.
        """
        shape = (cfg.channels, 1, cfg.kernel, cfg.kernel)
        down = ConvKernel.depthwise(make(shape), stride=2)
        if cfg.aggregation == "parallel":
            levels = [ConvKernel.depthwise(make(shape)) for _ in range(cfg.level + 1)]
            w = cls(down, levels=levels)
        else:
            kw = {name: ConvKernel.depthwise(make(shape)) for name in RECURRENT_KERNELS}
            w = cls(down, **kw)
        if cfg.upsample == "transposed_dwconv":
            w.up = [ConvKernel.depthwise(make(shape), stride=2) for _ in range(cfg.level)]
        return w

    @classmethod
    def random(cls, cfg: RecConvConfig, rng) -> "RecConvWeights":
        """Uniform(-1/k, 1/k) weights (``1/sqrt(fan_in)`` for a depthwise kernel).

        ``rng`` is a :class:`SplitMix64` or an integer seed.
        """
        if not isinstance(rng, SplitMix64):
            rng = SplitMix64(rng)
        bound = 1.0 / cfg.kernel
        return cls.build(cfg, lambda s: rng.symmetric(s, bound))

    @classmethod
    def constant(cls, cfg: RecConvConfig, value: float = 1.0) -> "RecConvWeights":
        return cls.build(cfg, lambda s: np.full(s, float(value)))

    def base_kernels(self) -> Dict[str, ConvKernel]:
        out = {"down": self.down}
        out.update({f"levels.{i}": k for i, k in enumerate(self.levels)})
        for name in RECURRENT_KERNELS:
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        return out

    def upsample_kernels(self) -> Dict[str, ConvKernel]:
        return {f"up.{i}": k for i, k in enumerate(self.up)}

    def params(self) -> Dict[str, np.ndarray]:
        """Live weight arrays by name (mutating them mutates the operator)."""
        out = {name: k.weight for name, k in self.base_kernels().items()}
        out.update({name: k.weight for name, k in self.upsample_kernels().items()})
        return out

    def matches(self, cfg: RecConvConfig) -> bool:
        shape = (cfg.channels, 1, cfg.kernel, cfg.kernel)
        n_levels = cfg.level + 1 if cfg.aggregation == "parallel" else 0
        n_up = cfg.level if cfg.upsample == "transposed_dwconv" else 0
        has_abcd = cfg.aggregation == "recurrent"
        return (
            len(self.levels) == n_levels
            and len(self.up) == n_up
            and all((getattr(self, n) is not None) == has_abcd for n in RECURRENT_KERNELS)
            and all(p.shape == shape for p in self.params().values())
        )


def recconv_param_count(cfg: RecConvConfig) -> int:
    """Closed-form conv-weight count, biases and upsample kernels excluded."""
    per_kernel = cfg.kernel ** 2 * cfg.channels
    if cfg.aggregation == "parallel":
        return (cfg.level + 2) * per_kernel
    return 5 * per_kernel


def upsample_param_count(cfg: RecConvConfig) -> int:
    if cfg.upsample != "transposed_dwconv":
        return 0
    return cfg.level * cfg.kernel ** 2 * cfg.channels


@dataclass
class RecConvTrace:
    """Activations recorded by :func:`recconv_forward` for the backward pass."""

    cfg: RecConvConfig
    x: np.ndarray
    feats: List[np.ndarray]        # feats[j - 1] is the depth-j map, j = 1..level
    shapes: List[Shape2]           # shapes[j] is the spatial size at depth j
    conv_in: Dict[str, np.ndarray]
    up_in: Dict[int, np.ndarray]   # pre-upsample activation, keyed by source depth


def _check_input(x: np.ndarray, cfg: RecConvConfig, w: RecConvWeights) -> None:
    if x.ndim != 4 or x.shape[1] != cfg.channels:
        raise ShapeError(f"input shape {x.shape} does not have {cfg.channels} channels")
    if not w.matches(cfg):
        raise ContractError("weights do not match the config")
    h, wd = x.shape[2], x.shape[3]
    if min(h, wd) < cfg.min_side:
        raise InvalidGeometryError(
            f"level {cfg.level} needs spatial sides >= {cfg.min_side}, got {h}x{wd}",
            minimum=cfg.min_side,
        )


def _upsample(cfg, w, x, target, depth):
    if cfg.upsample == "transposed_dwconv":
        return nn.transposed_dwconv(x, w.up[depth - 1], target)
    return nn.resize(x, target, cfg.upsample)


def _upsample_vjp(cfg, w, x, target, depth, g):
    if cfg.upsample == "transposed_dwconv":
        return nn.transposed_dwconv_vjp(x, w.up[depth - 1], target, g)
    return nn.resize_vjp(spatial(x), target, cfg.upsample, g), None


def recconv_forward(x: np.ndarray, cfg: RecConvConfig, w: RecConvWeights):
    """Return ``(y, trace)``; ``y`` has the shape of ``x``."""
    _check_input(x, cfg, w)
    shapes = [spatial(x)]
    feats = []
    cur = x
    for _ in range(cfg.level):
        cur = nn.conv2d(cur, w.down)
        feats.append(cur)
        shapes.append(spatial(cur))
    trace = RecConvTrace(cfg, x, feats, shapes, {}, {})

    if cfg.aggregation == "parallel":
        carry = None
        for i in range(cfg.level):
            depth = cfg.level - i
            f = feats[depth - 1]
            z = f if carry is None else f + carry
            trace.conv_in[f"levels.{i}"] = z
            u = nn.conv2d(z, w.levels[i])
            trace.up_in[depth] = u
            carry = _upsample(cfg, w, u, shapes[depth - 1], depth)
        z = x if carry is None else x + carry
        trace.conv_in[f"levels.{cfg.level}"] = z
        return nn.conv2d(z, w.levels[cfg.level]), trace

    h = None
    for depth in range(cfg.level, 0, -1):
        f = feats[depth - 1]
        u = nn.conv2d(f, w.b)
        if h is not None:
            trace.conv_in[f"a.{depth}"] = h
            u = nn.conv2d(h, w.a) + u
        trace.up_in[depth] = u
        h = _upsample(cfg, w, u, shapes[depth - 1], depth)
    trace.conv_in["c"] = h
    return nn.conv2d(h, w.c) + nn.conv2d(x, w.d), trace


def recconv_vjp(trace: RecConvTrace, cfg: RecConvConfig, w: RecConvWeights, g_out: np.ndarray):
    """Return ``(g_x, grads)`` with ``grads`` keyed like ``w.params()``."""
    if trace.cfg != cfg or not w.matches(cfg):
        raise ContractError("trace was recorded with a different config")
    x = trace.x
    if g_out.shape != x.shape:
        raise ShapeError(f"cotangent shape {g_out.shape} does not match {x.shape}")
    grads = {name: np.zeros_like(p) for name, p in w.params().items()}
    # cotangents of the depth-j feature maps, index 0 is the input itself
    g_feat = [np.zeros_like(x)] + [np.zeros_like(f) for f in trace.feats]

    def up_back(depth, g):
        g_u, g_wu = _upsample_vjp(cfg, w, trace.up_in[depth], trace.shapes[depth - 1], depth, g)
        if g_wu is not None:
            grads[f"up.{depth - 1}"] += g_wu
        return g_u

    if cfg.aggregation == "parallel":
        top = f"levels.{cfg.level}"
        g_z, g_w, _ = nn.conv2d_vjp(trace.conv_in[top], w.levels[cfg.level], g_out)
        grads[top] += g_w
        g_feat[0] += g_z
        g_carry = g_z
        for i in range(cfg.level - 1, -1, -1):
            depth = cfg.level - i
            g_u = up_back(depth, g_carry)
            name = f"levels.{i}"
            g_z, g_w, _ = nn.conv2d_vjp(trace.conv_in[name], w.levels[i], g_u)
            grads[name] += g_w
            g_feat[depth] += g_z
            g_carry = g_z
    else:
        g_h, g_w, _ = nn.conv2d_vjp(trace.conv_in["c"], w.c, g_out)
        grads["c"] += g_w
        g_x, g_w, _ = nn.conv2d_vjp(x, w.d, g_out)
        grads["d"] += g_w
        g_feat[0] += g_x
        for depth in range(1, cfg.level + 1):
            g_u = up_back(depth, g_h)
            g_f, g_w, _ = nn.conv2d_vjp(trace.feats[depth - 1], w.b, g_u)
            grads["b"] += g_w
            g_feat[depth] += g_f
            if depth < cfg.level:
                g_h, g_w, _ = nn.conv2d_vjp(trace.conv_in[f"a.{depth}"], w.a, g_u)
                grads["a"] += g_w

    # the shared downsampler collects one contribution per application
    for depth in range(cfg.level, 0, -1):
        src = x if depth == 1 else trace.feats[depth - 2]
        g_in, g_w, _ = nn.conv2d_vjp(src, w.down, g_feat[depth])
        grads["down"] += g_w
        g_feat[depth - 1] += g_in
    return g_feat[0], grads


def recconv(x: np.ndarray, cfg: RecConvConfig, w: RecConvWeights) -> np.ndarray:
    return recconv_forward(x, cfg, w)[0]


class RecConv:
    """Config and weights bundled as a callable token mixer."""

    def __init__(self, cfg: RecConvConfig, weights: Optional[RecConvWeights] = None, seed: int = 0):
        self.cfg = cfg
        self.weights = weights if weights is not None else RecConvWeights.random(cfg, seed)
        if not self.weights.matches(cfg):
            raise ContractError("weights do not match the config")

    def __call__(self, x):
        return recconv_forward(x, self.cfg, self.weights)[0]

    def forward(self, x):
        return recconv_forward(x, self.cfg, self.weights)

    def vjp(self, trace, g_out):
        return recconv_vjp(trace, self.cfg, self.weights, g_out)

    def params(self):
        return self.weights.params()
