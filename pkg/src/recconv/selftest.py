"""Self-contained verification suites behind ``recconv selftest``.

Each suite returns ``(passed, detail)``; :func:`run_selftest` prints one line
per suite.  Output contains no timings so two runs are byte-identical.
"""
from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import nn, reference
from .analysis import (
    count_macs,
    count_params,
    erf_map,
    mac_factor_closed_form,
    nominal_erf,
    structural_box,
    structural_rf,
)
from .blocks import DownsampleBlock, MetaNeXtBlock
from .gradcheck import GradcheckReport, fd_gradcheck
from .nn import ConvKernel
from .recursive import RecConv, RecConvConfig, RecConvWeights, recconv_forward, recconv_vjp
from .rng import SplitMix64

GRID_K = (3, 5, 7)
GRID_LEVEL = (0, 1, 2, 3, 4)
GRID_C = (8, 16)


def _rand(rng: SplitMix64, *shape, scale: float = 1.0) -> np.ndarray:
    return rng.symmetric(shape, scale)


# --- gradient-check cases -----------------------------------------------------

def _conv_case(rng, kern, x):
    inputs = {"x": x, "weight": kern.weight}
    if kern.bias is not None:
        inputs["bias"] = kern.bias

    def vjp(g):
        gx, gw, gb = nn.conv2d_vjp(x, kern, g)
        out = {"x": gx, "weight": gw}
        if gb is not None:
            out["bias"] = gb
        return out

    return lambda: nn.conv2d(x, kern), vjp, inputs


def _recconv_case(rng, cfg, shape):
    w = RecConvWeights.random(cfg, rng)
    x = _rand(rng, *shape)
    inputs = {"x": x, **w.params()}

    def vjp(g):
        _, trace = recconv_forward(x, cfg, w)
        gx, grads = recconv_vjp(trace, cfg, w, g)
        return {"x": gx, **grads}

    return lambda: recconv_forward(x, cfg, w)[0], vjp, inputs


def _block_case(block, x):
    inputs = {"x": x, **block.params()}

    def vjp(g):
        gx, grads = block.vjp(block.forward(x)[1], g)
        return {"x": gx, **grads}

    return lambda: block.forward(x)[0], vjp, inputs


def _randomise_block(block, rng):
    # norms and biases start at 1/0; perturb them so their gradients are exercised
    for name, arr in block.params().items():
        if name.endswith(("scale", "shift", "bias")):
            arr[...] = (1.0 if name.endswith("scale") else 0.0) + _rand(rng, *arr.shape, scale=0.5)


def gradcheck_cases(seed: int = 0) -> Dict[str, Callable[[], Tuple]]:
    """Builders of ``(forward, vjp, inputs)`` for every differentiable operator."""
    rng = SplitMix64(seed)

    def conv_dw():
        k = ConvKernel.depthwise(_rand(rng, 2, 1, 3, 3), stride=2, bias=_rand(rng, 2))
        return _conv_case(rng, k, _rand(rng, 1, 2, 6, 6))

    def conv_dense():
        k = ConvKernel(_rand(rng, 4, 3, 3, 3), bias=_rand(rng, 4), stride=2)
        return _conv_case(rng, k, _rand(rng, 1, 3, 7, 7))

    def conv_grouped():
        k = ConvKernel(_rand(rng, 4, 2, 3, 3), stride=1, groups=2)
        return _conv_case(rng, k, _rand(rng, 2, 4, 5, 5))

    def resize_case(mode):
        def build():
            x = _rand(rng, 1, 2, 5, 7)
            vjp = lambda g: {"x": nn.resize_vjp((5, 7), (9, 11), mode, g)}
            return lambda: nn.resize(x, (9, 11), mode), vjp, {"x": x}
        return build

    def transposed():
        k = ConvKernel.depthwise(_rand(rng, 2, 1, 3, 3), stride=2)
        x = _rand(rng, 1, 2, 3, 4)

        def vjp(g):
            gx, gw = nn.transposed_dwconv_vjp(x, k, (6, 7), g)
            return {"x": gx, "weight": gw}

        return lambda: nn.transposed_dwconv(x, k, (6, 7)), vjp, {"x": x, "weight": k.weight}

    def gelu():
        x = _rand(rng, 1, 2, 6, 6, scale=3.0)
        x[np.abs(x) < 0.1] += 0.5
        return lambda: nn.gelu(x), lambda g: {"x": nn.gelu_vjp(x, g)}, {"x": x}

    def affine():
        x, s, b = _rand(rng, 2, 3, 4, 4), _rand(rng, 3), _rand(rng, 3)

        def vjp(g):
            gx, gs, gb = nn.channel_affine_vjp(x, s, b, g)
            return {"x": gx, "scale": gs, "shift": gb}

        return lambda: nn.channel_affine(x, s, b), vjp, {"x": x, "scale": s, "shift": b}

    def rc(level, **kw):
        return lambda: _recconv_case(rng, RecConvConfig(2, 3, level, **kw), (1, 2, 16, 16))

    def metanext():
        block = MetaNeXtBlock.init(RecConvConfig(8, 3, 2), 2, rng)
        _randomise_block(block, rng)
        return _block_case(block, _rand(rng, 1, 8, 32, 32))

    def downsample():
        block = DownsampleBlock.init(8, 2, rng)
        _randomise_block(block, rng)
        return _block_case(block, _rand(rng, 1, 8, 14, 14))

    return {
        "conv2d_depthwise_stride2": conv_dw,
        "conv2d_dense_stride2": conv_dense,
        "conv2d_grouped": conv_grouped,
        "resize_bilinear": resize_case("bilinear"),
        "resize_nearest": resize_case("nearest"),
        "transposed_dwconv": transposed,
        "gelu": gelu,
        "channel_affine": affine,
        "recconv_l1": rc(1),
        "recconv_l2": rc(2),
        "recconv_l2_nearest": rc(2, upsample="nearest"),
        "recconv_l2_transposed": rc(2, upsample="transposed_dwconv"),
        "recconv_l2_recurrent": rc(2, aggregation="recurrent"),
        "metanext_block": metanext,
        "downsample_block": downsample,
    }


def run_gradchecks(seed: int = 0, n_coords: int = 200) -> Dict[str, GradcheckReport]:
    out = {}
    for name, build in gradcheck_cases(seed).items():
        forward, vjp, inputs = build()
        out[name] = fd_gradcheck(forward, vjp, inputs, seed=seed, n_coords=n_coords)
    return out


# --- suites ------------------------------------------------------------------

def suite_param_law(corrupt: bool = False):
    bad = []
    for k, level, c in itertools.product(GRID_K, GRID_LEVEL, GRID_C):
        cfg = RecConvConfig(c, k, level)
        measured = count_params(RecConvWeights.constant(cfg))["conv_weights"] + int(corrupt)
        if measured != (level + 2) * k * k * c:
            bad.append(f"k={k} l={level} C={c}: {measured}")
    n = len(GRID_K) * len(GRID_LEVEL) * len(GRID_C)
    return not bad, f"{n - len(bad)}/{n} configs" + (f"; first failure {bad[0]}" if bad else "")


def suite_mac_law():
    bad = []
    cases = 0
    for k, level, c, side in itertools.product(GRID_K, GRID_LEVEL, GRID_C, (64, 128)):
        cfg = RecConvConfig(c, k, level)
        op = RecConv(cfg, RecConvWeights.constant(cfg))
        ratio = Fraction(count_macs(op, (side, side))["conv"], k * k * c * side * side)
        cases += 1
        if ratio != mac_factor_closed_form(level) or not ratio < Fraction(5, 3):
            bad.append(f"k={k} l={level} C={c} {side}x{side}: {ratio}")
    return not bad, f"{cases - len(bad)}/{cases} configs"


def suite_degenerate(trials: int = 50):
    rng = SplitMix64(11)
    for t in range(trials):
        c = 1 + t % 4
        k = (3, 5, 7)[t % 3]
        cfg = RecConvConfig(c, k, 0)
        w = RecConvWeights.random(cfg, rng)
        x = _rand(rng, 1 + t % 2, c, 5 + t % 7, 6 + t % 5)
        y = recconv_forward(x, cfg, w)[0]
        if not np.array_equal(y, nn.conv2d(x, w.levels[0])):
            return False, f"mismatch on trial {t}"
    return True, f"{trials}/{trials} inputs bit-identical"


def suite_gradcheck():
    reports = run_gradchecks(seed=0)
    failed = [n for n, r in reports.items() if not r.passed]
    worst = max(r.max_rel_err for r in reports.values())
    return not failed, f"{len(reports)} operators, worst rel err {worst:.3e}" + (
        f"; failed {', '.join(failed)}" if failed else "")


def oracle_configs(n: int = 20, seed: int = 5):
    """Random ``(cfg, input shape)`` pairs with ``level <= 3``, odd sizes included."""
    rng = np.random.default_rng(seed)
    sizes = [(37, 53), (32, 32), (29, 31), (40, 24), (17, 45)]
    out = []
    for i in range(n):
        level = int(rng.integers(0, 4))
        k = int(rng.choice([1, 3, 5, 7]))
        mode = "nearest" if i % 4 == 3 else "bilinear"
        out.append((RecConvConfig(int(rng.integers(1, 4)), k, level, upsample=mode), (1,) + sizes[i % len(sizes)]))
    return out


def suite_oracle(tol: float = 1e-12):
    rng = SplitMix64(17)
    worst = 0.0
    for cfg, (n, h, w) in oracle_configs():
        wts = RecConvWeights.random(cfg, rng)
        x = _rand(rng, n, cfg.channels, h, w)
        y = recconv_forward(x, cfg, wts)[0]
        ref = reference.recconv_parallel(x, wts.down.weight, [k.weight for k in wts.levels], cfg.upsample)
        worst = max(worst, float(np.max(np.abs(y - ref))))
    return worst <= tol, f"20 configs, max abs diff {worst:.3e}"


def suite_receptive_field():
    erfs = [nominal_erf(3, l) for l in (4, 3, 2, 1)]
    if erfs != [48, 24, 12, 6]:
        return False, f"nominal ERF {erfs}"
    rng = SplitMix64(23)
    for k in (3, 5, 7):
        sides = [structural_rf(RecConvConfig(1, k, l)) for l in range(4)]
        if any(b <= a for a, b in zip(sides, sides[1:])):
            return False, f"k={k}: structural RF not increasing {sides}"
        if any(s < nominal_erf(k, l) for l, s in enumerate(sides) if l >= 1):
            return False, f"k={k}: structural RF below nominal {sides}"
    for k, level in ((3, 1), (3, 2), (5, 2)):
        cfg = RecConvConfig(2, k, level)
        op = RecConv(cfg, RecConvWeights.random(cfg, rng))
        m = erf_map(op, np.zeros((1, 2, 128, 128)))
        if m.relative_box() != structural_box(cfg):
            return False, f"k={k} l={level}: gradient support {m.relative_box()} != {structural_box(cfg)}"
    return True, "nominal [48, 24, 12, 6]; structural RF monotone; support == oracle box"


def suite_constants():
    rng = SplitMix64(29)
    for mode in ("bilinear", "nearest"):
        for (h, w), target in (((5, 7), (9, 11)), ((8, 8), (3, 5)), ((2, 3), (2, 3))):
            c = float(_rand(rng, 1)[0])
            y = nn.resize(np.full((1, 2, h, w), c), target, mode)
            if not np.all(y == c):
                return False, f"{mode} constant not preserved"
    yy, xx = np.meshgrid(np.arange(16.0), np.arange(12.0), indexing="ij")
    x = (0.3 * yy - 1.7 * xx + 2.0)[None, None]
    y = nn.resize(x, (32, 24), "bilinear")
    oy, ox = np.meshgrid((np.arange(32) + 0.5) / 2 - 0.5, (np.arange(24) + 0.5) / 2 - 0.5, indexing="ij")
    exact = 0.3 * oy - 1.7 * ox + 2.0
    err = float(np.max(np.abs(y[0, 0, 1:-1, 1:-1] - exact[1:-1, 1:-1])))
    return err <= 1e-12, f"constants exact; affine interior error {err:.3e}"


SUITES = (
    ("param_law", suite_param_law),
    ("mac_law", suite_mac_law),
    ("degenerate_level0", suite_degenerate),
    ("gradcheck", suite_gradcheck),
    ("oracle_equivalence", suite_oracle),
    ("receptive_field", suite_receptive_field),
    ("constant_preservation", suite_constants),
)


def run_selftest(corrupt_param_count: bool = False) -> Tuple[bool, List[str]]:
    lines = []
    ok = True
    for name, suite in SUITES:
        passed, detail = suite(corrupt_param_count) if name == "param_law" else suite()
        ok &= passed
        lines.append(f"{'PASS' if passed else 'FAIL'}  {name:<24} {detail}")
    lines.append(f"selftest: {'PASS' if ok else 'FAIL'}")
    return ok, lines
