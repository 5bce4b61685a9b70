from fractions import Fraction

import numpy as np
import pytest

from recconv import nn
from recconv.analysis import (
    complexity_report,
    count_macs,
    count_params,
    erf_map,
    mac_factor_closed_form,
    nominal_erf,
    recurrent_mac_factor_closed_form,
    structural_box,
    structural_rf,
    support_box,
)
from recconv.blocks import DESK_CONFIG, ModelConfig, build_model
from recconv.gradcheck import fd_gradcheck
from recconv.nn import ConvKernel
from recconv.recursive import RecConv, RecConvConfig, RecConvWeights, recconv

from conftest import rand


# --- parameters and MACs ----------------------------------------------------------

def test_count_params_examples():
    assert count_params(ConvKernel.depthwise(np.zeros((4, 1, 3, 3))))["total"] == 36
    assert count_params(RecConv(RecConvConfig(8, 5, 1)))["conv_weights"] == 600
    t = count_params(RecConv(RecConvConfig(8, 3, 2, upsample="transposed_dwconv")))
    assert t["conv_weights"] == 4 * 9 * 8 and t["upsample"] == 2 * 9 * 8
    assert count_params(ConvKernel(np.zeros((8, 4, 1, 1)), bias=np.zeros(8)))["total"] == 40


def test_count_macs_examples():
    # one 5x5 depthwise conv over 8 x 64 x 64
    assert count_macs(ConvKernel.depthwise(np.zeros((8, 1, 5, 5))), (64, 64))["total"] == 819200
    assert count_macs(RecConv(RecConvConfig(8, 5, 1)), (64, 64))["total"] == 1228800
    assert count_macs(RecConv(RecConvConfig(8, 5, 0)), (64, 64))["total"] == 819200


def test_include_resize_macs():
    m = count_macs(RecConv(RecConvConfig(8, 5, 1)), (64, 64), include_resize=True)
    assert m["resize"] == 4 * 8 * 64 * 64 == 131072
    assert m["total"] == 1228800 + 131072
    n = count_macs(RecConv(RecConvConfig(8, 5, 1, upsample="nearest")), (64, 64), include_resize=True)
    assert n["resize"] == 0


def test_mac_factor_closed_form():
    assert mac_factor_closed_form(0) == 1
    assert mac_factor_closed_form(1) == Fraction(3, 2)
    assert mac_factor_closed_form(2) == Fraction(13, 8)
    assert mac_factor_closed_form(3) == Fraction(53, 32)
    assert all(mac_factor_closed_form(n) < Fraction(5, 3) for n in range(17))


@pytest.mark.parametrize("level", [1, 2, 3, 4])
@pytest.mark.parametrize("hw", [(64, 64), (128, 96)])
def test_measured_mac_factor_is_exact(level, hw):
    for agg, closed in (("parallel", mac_factor_closed_form), ("recurrent", recurrent_mac_factor_closed_form)):
        cfg = RecConvConfig(8, 3, level, agg)
        m = count_macs(RecConv(cfg), hw)["conv"]
        assert Fraction(m, 9 * 8 * hw[0] * hw[1]) == closed(level)


def test_non_divisible_sizes_count_ceil_pyramid():
    # every level conv and the downsampler run once per pyramid map of ceil-halved size
    for hw in [(37, 53), (61, 61), (100, 115)]:
        for level in range(4):
            sizes, (h, w) = [], hw
            for _ in range(level):
                h, w = -(-h // 2), -(-w // 2)
                sizes.append(h * w)
            expect = 9 * 8 * (hw[0] * hw[1] + 2 * sum(sizes))
            rep = complexity_report(RecConv(RecConvConfig(8, 3, level)), hw, structural=False)
            st = rep.stages[0]
            assert st.macs_measured == expect
            assert st.macs_exact == (level == 0) and rep.ok


def test_ceil_pyramid_can_exceed_divisible_bound():
    st = complexity_report(RecConv(RecConvConfig(8, 3, 3)), (37, 53), structural=False).stages[0]
    assert st.mac_factor == Fraction(1961 + 2 * 688, 1961) > Fraction(5, 3)


def test_nominal_erf_examples():
    assert [nominal_erf(3, l) for l in (4, 3, 2, 1)] == [48, 24, 12, 6]
    assert nominal_erf(5, 0) == 5


# --- receptive fields -----------------------------------------------------------------

def brute_force_box(cfg, side):
    """Perturb every input pixel of a positive-weight operator and watch the centre."""
    w = RecConvWeights.build(cfg, lambda s: np.random.default_rng(0).uniform(0.5, 1.5, size=s))
    base = recconv(np.zeros((1, 1, side, side)), cfg, w)
    c = side // 2
    hits = np.zeros((side, side), bool)
    for i in range(side):
        for j in range(side):
            x = np.zeros((1, 1, side, side))
            x[0, 0, i, j] = 1.0
            hits[i, j] = recconv(x, cfg, w)[0, 0, c, c] != base[0, 0, c, c]
    t, l, b, r = support_box(hits)
    return t - c, l - c, b - c, r - c


def test_structural_rf_hand_derived():
    # 3 (down) -> 7 after the level conv -> 9 after bilinear -> 11 after the final conv
    assert structural_rf(RecConvConfig(1, 3, 1)) == 11
    assert [structural_rf(RecConvConfig(1, 3, l)) for l in range(4)] == [3, 11, 27, 55]


@pytest.mark.parametrize("k,level", [(3, 1), (3, 2), (5, 1)])
def test_structural_box_matches_forward_perturbation(k, level):
    cfg = RecConvConfig(1, k, level)
    assert structural_box(cfg) == brute_force_box(cfg, 64)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_structural_rf_monotone_and_above_nominal(k):
    rfs = [structural_rf(RecConvConfig(1, k, l)) for l in range(5)]
    assert rfs[0] == k
    assert all(a < b for a, b in zip(rfs, rfs[1:]))
    assert all(rf >= k * 2 ** l for l, rf in enumerate(rfs) if l >= 1)


@pytest.mark.parametrize("level", [1, 2, 3])
@pytest.mark.parametrize("mode", ["bilinear", "nearest"])
def test_signed_weight_gradient_support_equals_oracle_box(level, mode):
    cfg = RecConvConfig(3, 3, level, upsample=mode)
    m = erf_map(RecConv(cfg, seed=level), rand(0, 1, 3, 128, 128))
    assert m.relative_box() == structural_box(cfg)


def test_erf_zero_weights_and_level_zero():
    cfg = RecConvConfig(2, 3, 2)
    m = erf_map(RecConv(cfg, RecConvWeights.constant(cfg, 0.0)), rand(0, 1, 2, 32, 32))
    assert m.box() is None and m.support_area() == 0 and m.energy_side() == 0
    m0 = erf_map(RecConv(RecConvConfig(2, 5, 0), seed=1), rand(0, 1, 2, 32, 32))
    assert m0.support_size() == (5, 5)
    assert m0.relative_box() == (-2, -2, 2, 2)


def test_desk_support_grows_with_levels():
    flat = ModelConfig.from_lists([16, 32, 64, 128], [1, 1, 2, 1], 5, [1, 1, 1, 1])
    x = rand(3, 1, 3, 224, 224)
    deep = erf_map(build_model(DESK_CONFIG), x, upto=1)
    shallow = erf_map(build_model(flat), x, upto=1)
    assert shallow.support_area() < deep.support_area()


def test_desk_report_columns():
    cfg = ModelConfig.from_lists([16, 32, 64, 128], [1, 1, 2, 1], 3, [4, 3, 2, 1])
    rep = complexity_report(build_model(cfg), (224, 224))
    assert rep.ok
    assert [s.nominal_erf for s in rep.stages] == [48, 24, 12, 6]
    assert [s.structural_rf for s in rep.stages] == [111, 55, 27, 11]
    assert rep.params_measured == rep.params_closed_form == 220080


# --- gradient checker --------------------------------------------------------------------

def test_gradcheck_linear_and_gelu():
    a = rand(1, 3, 4)
    x = rand(2, 4)
    rep = fd_gradcheck(lambda: a @ x, lambda g: {"x": a.T @ g}, {"x": x})
    assert rep.passed and rep.max_rel_err <= 1e-7 and rep.n_coords == 4
    z = rand(3, 1, 1, 6, 6, scale=3.0)
    rep = fd_gradcheck(lambda: nn.gelu(z), lambda g: {"x": nn.gelu_vjp(z, g)}, {"x": z})
    assert rep.max_rel_err <= 1e-6


def test_gradcheck_detects_wrong_gradient():
    a = rand(1, 3, 4)
    x = rand(2, 4)
    rep = fd_gradcheck(lambda: a @ x, lambda g: {"x": 1.01 * a.T @ g}, {"x": x})
    assert not rep.passed


def test_gradcheck_step_outliers_are_round_off():
    # a near-zero gradient coordinate fails at the fixed 1e-6 step only because of
    # round-off; a larger step removes the discrepancy, so the analytic value is right
    cfg = RecConvConfig(2, 3, 2, upsample="transposed_dwconv")
    op = RecConv(cfg, seed=4)
    x = rand(5, 1, 2, 16, 16)
    y, tr = op.forward(x)
    g = rand(0, *y.shape)
    _, grads = op.vjp(tr, g)
    w = op.params()["up.1"].reshape(-1)
    an = grads["up.1"].reshape(-1)[16]
    assert abs(an) < 1e-6

    def fd(h):
        orig = w[16]
        w[16] = orig + h
        yp = op(x)
        w[16] = orig - h
        ym = op(x)
        w[16] = orig
        return float(np.sum((yp - ym) * g)) / (2 * h)

    err = lambda h: abs(fd(h) - an) / abs(an)
    assert err(1e-6) > 1e-5
    assert err(1e-2) < 1e-6
