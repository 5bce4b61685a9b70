"""Acceptance gate: each test is one criterion, checked at its stated tolerance
and wall-clock budget.  A per-criterion PASS/FAIL line is printed at the end of
the pytest run."""
import itertools
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

import recconv
from recconv import nn, reference
from recconv.analysis import (
    count_macs,
    count_params,
    erf_map,
    mac_factor_closed_form,
    nominal_erf,
    structural_box,
    structural_rf,
)
from recconv.blocks import DESK_CONFIG, build_model
from recconv.cli import main
from recconv.errors import InvalidGeometryError
from recconv.gradcheck import fd_gradcheck
from recconv.recursive import RecConv, RecConvConfig, RecConvWeights, recconv_forward
from recconv.rng import SplitMix64
from recconv.selftest import gradcheck_cases, oracle_configs

DESK = str(Path(recconv.__file__).parent / "configs" / "desk_model.json")
GRID = list(itertools.product((3, 5, 7), (0, 1, 2, 3, 4), (8, 16)))


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f} s, budget {self.seconds} s"


@pytest.mark.criterion(1, "parameter law (l+2)k^2C, integer equality")
def test_parameter_law():
    with Budget(1):
        for k, level, c in GRID:
            cfg = RecConvConfig(c, k, level)
            assert count_params(RecConv(cfg))["conv_weights"] == (level + 2) * k * k * c


@pytest.mark.criterion(2, "MAC law 1 + 2 sum 4^-n, exact rationals, < 5/3")
def test_mac_law():
    with Budget(1):
        for (k, level, c), side in itertools.product(GRID, (64, 128)):
            cfg = RecConvConfig(c, k, level)
            measured = count_macs(RecConv(cfg, RecConvWeights.constant(cfg)), (side, side))["conv"]
            ratio = Fraction(measured, k * k * c * side * side)
            closed = 1 + 2 * sum((Fraction(1, 4 ** n) for n in range(1, level + 1)), Fraction(0))
            assert ratio == closed == mac_factor_closed_form(level)
            assert ratio < Fraction(5, 3)


@pytest.mark.criterion(3, "level 0 bit-identical to one depthwise conv, 50 inputs")
def test_degenerate_equivalence():
    rng = SplitMix64(101)
    with Budget(5):
        for t in range(50):
            c, k = 1 + t % 5, (1, 3, 5, 7)[t % 4]
            cfg = RecConvConfig(c, k, 0)
            w = RecConvWeights.random(cfg, rng)
            x = rng.symmetric((1 + t % 3, c, 4 + t % 9, 3 + t % 11), 10.0)
            assert np.array_equal(recconv_forward(x, cfg, w)[0], nn.conv2d(x, w.levels[0]))


@pytest.mark.criterion(4, "finite-difference gradients, max rel err <= 1e-5")
def test_gradient_correctness():
    required = {"conv2d_depthwise_stride2", "resize_bilinear", "resize_nearest", "transposed_dwconv", "gelu",
                "channel_affine", "recconv_l1", "recconv_l2", "metanext_block", "downsample_block"}
    cases = gradcheck_cases(seed=0)
    assert required <= set(cases)
    with Budget(60):
        worst = {}
        for name, build in cases.items():
            forward, vjp, inputs = build()
            rep = fd_gradcheck(forward, vjp, inputs, seed=0, n_coords=200, tol=1e-5)
            worst[name] = rep.max_rel_err
    assert all(v <= 1e-5 for v in worst.values()), worst


@pytest.mark.criterion(5, "straight-line oracle within 1e-12 on 20 configs")
def test_oracle_equivalence():
    rng = SplitMix64(303)
    configs = oracle_configs()
    assert len(configs) == 20 and any(s[1:] == (37, 53) for _, s in configs)
    assert all(cfg.level <= 3 for cfg, _ in configs)
    with Budget(10):
        for cfg, (n, h, w) in configs:
            wts = RecConvWeights.random(cfg, rng)
            x = rng.symmetric((n, cfg.channels, h, w), 1.0)
            ref = reference.recconv_parallel(x, wts.down.weight, [k.weight for k in wts.levels], cfg.upsample)
            assert np.max(np.abs(recconv_forward(x, cfg, wts)[0] - ref)) <= 1e-12


@pytest.mark.criterion(6, "receptive fields: nominal [48,24,12,6], structural monotone, support == oracle")
def test_receptive_field_accounting():
    with Budget(30):
        assert [nominal_erf(3, l) for l in (4, 3, 2, 1)] == [48, 24, 12, 6]
        assert [RecConvConfig(8, 3, l).nominal_erf for l in (4, 3, 2, 1)] == [48, 24, 12, 6]
        for k in (3, 5, 7):
            rfs = [structural_rf(RecConvConfig(1, k, l)) for l in range(5)]
            assert all(a < b for a, b in zip(rfs, rfs[1:])), rfs
            assert all(rf >= nominal_erf(k, l) for l, rf in enumerate(rfs) if l >= 1), rfs
        rng = SplitMix64(404)
        for k, level, mode in ((3, 1, "bilinear"), (3, 2, "nearest"), (5, 2, "bilinear"), (3, 3, "bilinear")):
            cfg = RecConvConfig(2, k, level, upsample=mode)
            op = RecConv(cfg, RecConvWeights.random(cfg, rng))
            m = erf_map(op, rng.symmetric((1, 2, 160, 160), 1.0))
            assert m.relative_box() == structural_box(cfg)


@pytest.mark.criterion(7, "resize keeps constants exactly, bilinear ramps to 1e-12")
def test_constant_preservation():
    rng = SplitMix64(505)
    with Budget(1):
        for mode in ("bilinear", "nearest"):
            for (h, w), target in (((5, 7), (9, 11)), ((8, 8), (3, 5)), ((3, 2), (16, 16)), ((7, 7), (7, 7))):
                c = float(rng.symmetric((1,), 100.0)[0])
                assert np.all(nn.resize(np.full((2, 3, h, w), c), target, mode) == c)
        for axis in (0, 1):
            yy, xx = np.meshgrid(np.arange(11.0), np.arange(13.0), indexing="ij")
            ramp = (2.5 * (yy if axis == 0 else xx) - 3.0)[None, None]
            out = nn.resize(ramp, (24, 29), "bilinear")
            sy = (np.arange(24) + 0.5) * 11 / 24 - 0.5
            sx = (np.arange(29) + 0.5) * 13 / 29 - 0.5
            src = sy[:, None] + 0 * sx[None, :] if axis == 0 else 0 * sy[:, None] + sx[None, :]
            inside = (sy[:, None] >= 0) & (sy[:, None] <= 10) & (sx[None, :] >= 0) & (sx[None, :] <= 12)
            assert np.max(np.abs(out[0, 0] - (2.5 * src - 3.0))[inside]) <= 1e-12


@pytest.mark.criterion(8, "forward and selftest byte-identical across runs and thread counts")
def test_determinism(capsys, tmp_path):
    def run(*argv):
        code = main(list(argv))
        return code, capsys.readouterr().out

    with Budget(30):
        forwards = []
        for i, threads in enumerate(("1", "1", "4")):
            dump = tmp_path / f"y{i}.raw"
            code, out = run("--threads", threads, "forward", DESK, "--seed", "42", "--out", str(dump))
            assert code == 0
            forwards.append((out, dump.read_bytes()))
        assert forwards[0] == forwards[1] == forwards[2]
        selftests = [run("--threads", t, "selftest") for t in ("1", "3")]
        assert selftests[0] == selftests[1]
        assert selftests[0][0] == 0


@pytest.mark.criterion(9, "desk model 1x3x224x224 -> 1x128x7x7 with ledger; undersized input names stage")
def test_shape_schedule():
    with Budget(5):
        model = build_model(DESK_CONFIG)
        x = SplitMix64(9).uniform(3 * 224 * 224).reshape(1, 3, 224, 224)
        y, ledger, _ = model.forward(x)
        assert y.shape == (1, 128, 7, 7)
        assert ledger == [("stem", (16, 56, 56)), ("stage1", (16, 56, 56)), ("stage2", (32, 28, 28)),
                          ("stage3", (64, 14, 14)), ("stage4", (128, 7, 7))]
        for side in (32, 48, 60):
            with pytest.raises(InvalidGeometryError) as exc:
                model.forward(np.zeros((1, 3, side, side)))
            assert exc.value.stage == "stage1" and "stage1" in str(exc.value)
