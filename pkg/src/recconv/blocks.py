"""Macro architecture: MetaNeXt blocks, downsampling blocks, stem and a
four-stage feature backbone with seeded initialisation.

Every block exposes ``forward(x) -> (y, cache)``, ``vjp(cache, g) ->
(g_x, grads)`` and ``params()`` returning live arrays keyed by name.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .errors import ConfigError, InvalidGeometryError, ShapeError
from .nn import ConvKernel
from .recursive import AGGREGATIONS, UPSAMPLES, RecConv, RecConvConfig, RecConvWeights
from .rng import SplitMix64


def _init(rng: SplitMix64, shape) -> np.ndarray:
    fan_in = shape[1] * shape[2] * shape[3]
    return rng.symmetric(shape, 1.0 / np.sqrt(fan_in))


def _pointwise(rng: SplitMix64, cin: int, cout: int) -> ConvKernel:
    return ConvKernel(_init(rng, (cout, cin, 1, 1)), bias=np.zeros(cout))


def _prefixed(prefix: str, params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in params.items()}


class ChannelMixer:
    """Pointwise expand, GELU, pointwise squeeze."""

    def __init__(self, up: ConvKernel, down: ConvKernel):
        if up.k != 1 or down.k != 1:
            raise ShapeError("channel mixer kernels must be 1x1")
        if up.out_channels != down.in_channels or up.in_channels != down.out_channels:
            raise ShapeError("channel mixer kernels do not chain")
        self.up = up
        self.down = down

    def forward(self, x):
        u = nn.conv2d(x, self.up)
        return nn.conv2d(nn.gelu(u), self.down), (x, u)

    def vjp(self, cache, g):
        x, u = cache
        a = nn.gelu(u)
        g_a, g_wd, g_bd = nn.conv2d_vjp(a, self.down, g)
        g_u = nn.gelu_vjp(u, g_a)
        g_x, g_wu, g_bu = nn.conv2d_vjp(x, self.up, g_u)
        return g_x, {"up.weight": g_wu, "up.bias": g_bu, "down.weight": g_wd, "down.bias": g_bd}

    def params(self):
        return {
            "up.weight": self.up.weight, "up.bias": self.up.bias,
            "down.weight": self.down.weight, "down.bias": self.down.bias,
        }


class Norm:
    """Per-channel affine standing in for a folded inference-mode batch norm."""

    def __init__(self, channels: int):
        self.scale = np.ones(channels)
        self.shift = np.zeros(channels)

    def forward(self, x):
        return nn.channel_affine(x, self.scale, self.shift), x

    def vjp(self, x, g):
        g_x, g_s, g_b = nn.channel_affine_vjp(x, self.scale, self.shift, g)
        return g_x, {"scale": g_s, "shift": g_b}

    def params(self):
        return {"scale": self.scale, "shift": self.shift}


class MetaNeXtBlock:
    """``y = x + mixer(norm(recconv(x)))``."""

    def __init__(self, token: RecConv, norm: Norm, mixer: ChannelMixer):
        c = token.cfg.channels
        if norm.scale.shape != (c,) or mixer.up.in_channels != c:
            raise ShapeError("block components disagree on the channel count")
        self.token = token
        self.norm = norm
        self.mixer = mixer

    @classmethod
    def init(cls, cfg: RecConvConfig, expansion: int, rng: SplitMix64) -> "MetaNeXtBlock":
        token = RecConv(cfg, RecConvWeights.random(cfg, rng))
        norm = Norm(cfg.channels)
        hidden = expansion * cfg.channels
        mixer = ChannelMixer(_pointwise(rng, cfg.channels, hidden), _pointwise(rng, hidden, cfg.channels))
        return cls(token, norm, mixer)

    @property
    def channels(self) -> int:
        return self.token.cfg.channels

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"block expects {self.channels} channels, got shape {x.shape}")
        t, t_cache = self.token.forward(x)
        n, n_cache = self.norm.forward(t)
        m, m_cache = self.mixer.forward(n)
        return x + m, (t_cache, n_cache, m_cache)

    def vjp(self, cache, g):
        t_cache, n_cache, m_cache = cache
        g_n, g_mix = self.mixer.vjp(m_cache, g)
        g_t, g_norm = self.norm.vjp(n_cache, g_n)
        g_x, g_tok = self.token.vjp(t_cache, g_t)
        grads = _prefixed("token", g_tok)
        grads.update(_prefixed("norm", g_norm))
        grads.update(_prefixed("mixer", g_mix))
        return g_x + g, grads

    def params(self):
        out = _prefixed("token", self.token.params())
        out.update(_prefixed("norm", self.norm.params()))
        out.update(_prefixed("mixer", self.mixer.params()))
        return out


class DownsampleBlock:
    """Stride-2 7x7 depthwise conv and pointwise C -> 2C expansion, then
    ``y = xh + mixer(xh)`` with ``xh`` the normalised result."""

    def __init__(self, spatial: ConvKernel, expand: ConvKernel, norm: Norm, mixer: ChannelMixer):
        if not spatial.is_depthwise or spatial.stride != 2:
            raise ShapeError("downsample spatial kernel must be stride-2 depthwise")
        if expand.k != 1 or expand.in_channels != spatial.out_channels:
            raise ShapeError("expansion must be pointwise over the spatial output")
        self.spatial = spatial
        self.expand = expand
        self.norm = norm
        self.mixer = mixer

    @classmethod
    def init(cls, channels: int, expansion: int, rng: SplitMix64, kernel: int = 7) -> "DownsampleBlock":
        spatial = ConvKernel.depthwise(_init(rng, (channels, 1, kernel, kernel)), stride=2)
        expand = ConvKernel(_init(rng, (2 * channels, channels, 1, 1)))
        norm = Norm(2 * channels)
        hidden = expansion * 2 * channels
        mixer = ChannelMixer(_pointwise(rng, 2 * channels, hidden), _pointwise(rng, hidden, 2 * channels))
        return cls(spatial, expand, norm, mixer)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.spatial.in_channels:
            raise ShapeError(f"downsample expects {self.spatial.in_channels} channels, got {x.shape}")
        s = nn.conv2d(x, self.spatial)
        e = nn.conv2d(s, self.expand)
        xh, n_cache = self.norm.forward(e)
        m, m_cache = self.mixer.forward(xh)
        return xh + m, (x, s, n_cache, m_cache)

    def vjp(self, cache, g):
        x, s, n_cache, m_cache = cache
        g_xh, g_mix = self.mixer.vjp(m_cache, g)
        g_xh = g_xh + g
        g_e, g_norm = self.norm.vjp(n_cache, g_xh)
        g_s, g_we, _ = nn.conv2d_vjp(s, self.expand, g_e)
        g_x, g_ws, _ = nn.conv2d_vjp(x, self.spatial, g_s)
        grads = {"spatial.weight": g_ws, "expand.weight": g_we}
        grads.update(_prefixed("norm", g_norm))
        grads.update(_prefixed("mixer", g_mix))
        return g_x, grads

    def params(self):
        out = {"spatial.weight": self.spatial.weight, "expand.weight": self.expand.weight}
        out.update(_prefixed("norm", self.norm.params()))
        out.update(_prefixed("mixer", self.mixer.params()))
        return out


class Stem:
    """Two 3x3 stride-2 standard convs with a GELU between them."""

    def __init__(self, conv1: ConvKernel, conv2: ConvKernel):
        self.conv1 = conv1
        self.conv2 = conv2

    @classmethod
    def init(cls, in_channels: int, channels: int, rng: SplitMix64) -> "Stem":
        mid = channels // 2
        conv1 = ConvKernel(_init(rng, (mid, in_channels, 3, 3)), bias=np.zeros(mid), stride=2)
        conv2 = ConvKernel(_init(rng, (channels, mid, 3, 3)), bias=np.zeros(channels), stride=2)
        return cls(conv1, conv2)

    def forward(self, x):
        u = nn.conv2d(x, self.conv1)
        a = nn.gelu(u)
        return nn.conv2d(a, self.conv2), (x, u, a)

    def vjp(self, cache, g):
        x, u, a = cache
        g_a, g_w2, g_b2 = nn.conv2d_vjp(a, self.conv2, g)
        g_x, g_w1, g_b1 = nn.conv2d_vjp(x, self.conv1, nn.gelu_vjp(u, g_a))
        return g_x, {"conv1.weight": g_w1, "conv1.bias": g_b1, "conv2.weight": g_w2, "conv2.bias": g_b2}

    def params(self):
        return {
            "conv1.weight": self.conv1.weight, "conv1.bias": self.conv1.bias,
            "conv2.weight": self.conv2.weight, "conv2.bias": self.conv2.bias,
        }


@dataclass(frozen=True)
class StageConfig:
    channels: int
    depth: int
    kernel: int
    level: int


@dataclass(frozen=True)
class ModelConfig:
    stages: Tuple[StageConfig, ...]
    expansion: int = 2
    seed: int = 0
    aggregation: str = "parallel"
    upsample: str = "bilinear"
    in_channels: int = 3

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("a model needs at least one stage")
        if self.stages[0].channels < 2 or self.stages[0].channels % 2:
            raise ConfigError("first-stage channels must be even (the stem halves them)")
        for prev, nxt in zip(self.stages, self.stages[1:]):
            if nxt.channels != 2 * prev.channels:
                raise ConfigError(
                    f"channels must double between stages, got {prev.channels} -> {nxt.channels}"
                )
        for i, st in enumerate(self.stages, 1):
            if st.depth < 0:
                raise ConfigError(f"stage{i} depth must be >= 0")
            try:
                self.recconv_config(st)
            except ConfigError as exc:
                raise ConfigError(f"stage{i}: {exc}") from None
        if self.expansion < 1:
            raise ConfigError("expansion must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.aggregation not in AGGREGATIONS or self.upsample not in UPSAMPLES:
            raise ConfigError("unknown aggregation or upsample mode")

    @classmethod
    def from_lists(cls, channels: Sequence[int], depths: Sequence[int], kernel, levels: Sequence[int], **kw):
        if not len(channels) == len(depths) == len(levels):
            raise ConfigError("channels, depths and levels must have the same length")
        kernels = list(kernel) if isinstance(kernel, (list, tuple)) else [kernel] * len(channels)
        if len(kernels) != len(channels):
            raise ConfigError("kernel list must match the number of stages")
        stages = tuple(StageConfig(int(c), int(d), int(k), int(l))
                       for c, d, k, l in zip(channels, depths, kernels, levels))
        return cls(stages, **kw)

    def recconv_config(self, stage: StageConfig) -> RecConvConfig:
        return RecConvConfig(stage.channels, stage.kernel, stage.level, self.aggregation, self.upsample)


DESK_CONFIG = ModelConfig.from_lists([16, 32, 64, 128], [1, 1, 2, 1], 5, [4, 3, 2, 1], expansion=2)


@dataclass
class Model:
    cfg: ModelConfig
    stem: Stem
    downsamples: List[DownsampleBlock]     # downsamples[i] precedes stage i + 2
    stages: List[List[MetaNeXtBlock]] = field(default_factory=list)

    def layers(self):
        """``(name, layer)`` pairs in execution order."""
        yield "stem", self.stem
        for s, blocks in enumerate(self.stages):
            if s > 0:
                yield f"stage{s + 1}.downsample", self.downsamples[s - 1]
            for b, block in enumerate(blocks):
                yield f"stage{s + 1}.block{b}", block

    def params(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers():
            out.update(_prefixed(name, layer.params()))
        return out

    def shape_ledger(self, h: int, w: int, upto: Optional[int] = None):
        """Per-stage ``(name, (c, h, w))`` entries for an ``h`` x ``w`` input.

        Raises :class:`InvalidGeometryError` naming the first stage whose
        recursive decomposition does not fit.
        """
        ledger = []
        for _ in range(2):
            h, w = (h + 1) // 2, (w + 1) // 2
        ledger.append(("stem", (self.cfg.stages[0].channels, h, w)))
        n = len(self.stages) if upto is None else upto
        for s, st in enumerate(self.cfg.stages[:n]):
            if s > 0:
                h, w = (h + 1) // 2, (w + 1) // 2
            need = 2 ** st.level
            if st.depth > 0 and min(h, w) < need:
                raise InvalidGeometryError(
                    f"stage{s + 1}: feature map {h}x{w} is smaller than the {need}x{need} "
                    f"required by level {st.level}",
                    stage=f"stage{s + 1}",
                    minimum=need,
                )
            ledger.append((f"stage{s + 1}", (st.channels, h, w)))
        return ledger

    def min_input_side(self, upto: Optional[int] = None) -> int:
        side = 1
        while True:
            try:
                self.shape_ledger(side, side, upto)
                return side
            except InvalidGeometryError:
                side += 1

    def forward(self, x: np.ndarray, upto: Optional[int] = None):
        """Return ``(features, ledger, caches)``, stopping after stage ``upto``."""
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"model expects {self.cfg.in_channels} input channels, got {x.shape}")
        ledger = self.shape_ledger(x.shape[2], x.shape[3], upto)
        n = len(self.stages) if upto is None else upto
        caches = []
        for name, layer in self.layers():
            if name.startswith("stage") and int(name[5:].split(".")[0]) > n:
                break
            x, cache = layer.forward(x)
            caches.append((layer, cache))
        return x, ledger, caches

    def vjp(self, caches, g):
        """Return ``(g_x, grads)`` for the layers recorded in ``caches``."""
        names = {id(layer): name for name, layer in self.layers()}
        grads = {}
        for layer, cache in reversed(caches):
            g, lg = layer.vjp(cache, g)
            grads.update(_prefixed(names[id(layer)], lg))
        return g, grads


def build_model(cfg: ModelConfig) -> Model:
    """Deterministically initialise a model from ``cfg.seed``.

    Weights are drawn from one SplitMix64 stream as uniform(-b, b) with
    ``b = 1/sqrt(fan_in)``, in execution order: stem conv1, stem conv2, then
    per stage the downsample block (spatial, expand, mixer up, mixer down) and
    each MetaNeXt block (RecConv kernels in their allocation order, mixer up,
    mixer down).  Biases start at zero and norms at scale 1, shift 0; neither
    consumes random words.
    """
    rng = SplitMix64(cfg.seed)
    stem = Stem.init(cfg.in_channels, cfg.stages[0].channels, rng)
    downsamples, stages = [], []
    for s, st in enumerate(cfg.stages):
        if s > 0:
            downsamples.append(DownsampleBlock.init(cfg.stages[s - 1].channels, cfg.expansion, rng))
        rc = cfg.recconv_config(st)
        stages.append([MetaNeXtBlock.init(rc, cfg.expansion, rng) for _ in range(st.depth)])
    return Model(cfg, stem, downsamples, stages)


def model_forward(model: Model, x: np.ndarray):
    """Final-stage feature map and the per-stage shape ledger."""
    y, ledger, _ = model.forward(x)
    return y, ledger


def metanext_forward(x, block: MetaNeXtBlock):
    return block.forward(x)[0]


def downsample_forward(x, block: DownsampleBlock):
    return block.forward(x)[0]
