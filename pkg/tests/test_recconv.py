import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recconv import nn, reference
from recconv.errors import ConfigError, ContractError, InvalidGeometryError, ShapeError
from recconv.gradcheck import fd_gradcheck
from recconv.nn import ConvKernel
from recconv.recursive import (
    RecConv,
    RecConvConfig,
    RecConvWeights,
    recconv,
    recconv_forward,
    recconv_param_count,
    recconv_vjp,
    upsample_param_count,
)

from conftest import rand


def weights_arrays(w):
    return w.down.weight, [k.weight for k in w.levels]


def test_level_zero_is_single_conv_bit_for_bit():
    cfg = RecConvConfig(4, kernel=5, level=0)
    w = RecConvWeights.random(cfg, 3)
    for seed in range(5):
        x = rand(seed, 2, 4, 9, 7)
        assert np.array_equal(recconv(x, cfg, w), nn.conv2d(x, w.levels[0]))


def test_nominal_erf_examples():
    assert RecConvConfig(8, 3, 0).nominal_erf == 3
    assert RecConvConfig(8, 3, 4).nominal_erf == 48
    assert RecConvConfig(8, 5, 1).nominal_erf == 10
    assert RecConvConfig(8, 7, 3).nominal_erf == 56


@pytest.mark.parametrize("k,level,hw", [(5, 2, (32, 32)), (3, 3, (37, 53)), (1, 1, (5, 4)), (7, 1, (2, 2))])
@pytest.mark.parametrize("mode", ["bilinear", "nearest"])
def test_matches_straight_line_oracle(k, level, hw, mode):
    cfg = RecConvConfig(4, k, level, upsample=mode)
    w = RecConvWeights.random(cfg, 11)
    x = rand(12, 1, 4, *hw)
    down, levels = weights_arrays(w)
    expect = reference.recconv_parallel(x, down, levels, mode)
    assert np.max(np.abs(recconv(x, cfg, w) - expect)) <= 1e-12


def test_records_pyramid_shapes_for_odd_sizes():
    cfg = RecConvConfig(2, 3, 3)
    _, trace = recconv_forward(rand(1, 1, 2, 37, 53), cfg, RecConvWeights.random(cfg, 0))
    assert trace.shapes == [(37, 53), (19, 27), (10, 14), (5, 7)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.sampled_from([1, 3, 5]), st.integers(0, 12), st.integers(0, 12),
       st.sampled_from(["parallel", "recurrent"]),
       st.sampled_from(["bilinear", "nearest", "transposed_dwconv"]))
def test_output_shape_equals_input_shape(level, k, dh, dw, agg, mode):
    if agg == "recurrent" and level == 0:
        level = 1
    cfg = RecConvConfig(3, k, level, agg, mode)
    h, w = 2 ** level + dh, 2 ** level + dw
    x = rand(dh * 13 + dw, 1, 3, h, w)
    assert recconv(x, cfg, RecConvWeights.random(cfg, 1)).shape == x.shape


def test_bilinear_and_nearest_agree_on_constant_field():
    outs = []
    for mode in ("bilinear", "nearest"):
        cfg = RecConvConfig(2, 1, 3, upsample=mode)
        outs.append(recconv(np.full((1, 2, 16, 24), 1.5), cfg, RecConvWeights.constant(cfg, 0.5)))
    assert np.array_equal(outs[0], outs[1])


def test_recurrent_reduces_to_parallel_level_one():
    # a = 0, b = L0, c = d = L1 gives L1(x + up(L0(down x))); integer data keeps every sum exact
    par = RecConvConfig(2, 3, 1)
    rec = RecConvConfig(2, 3, 1, aggregation="recurrent")
    r = np.random.default_rng(5)
    wp = RecConvWeights.build(par, lambda s: r.integers(-3, 4, size=s).astype(float))
    wr = RecConvWeights(
        wp.down, a=ConvKernel.depthwise(np.zeros((2, 1, 3, 3))),
        b=wp.levels[0], c=wp.levels[1], d=wp.levels[1],
    )
    x = r.integers(-8, 9, size=(1, 2, 12, 10)).astype(float)
    assert np.array_equal(recconv(x, rec, wr), recconv(x, par, wp))


def test_recurrent_differs_from_parallel_in_general():
    x = rand(2, 1, 3, 16, 16)
    p = RecConvConfig(3, 3, 2)
    r = RecConvConfig(3, 3, 2, aggregation="recurrent")
    assert not np.allclose(recconv(x, p, RecConvWeights.random(p, 0)), recconv(x, r, RecConvWeights.random(r, 0)))


@pytest.mark.parametrize("cfg", [
    RecConvConfig(2, 3, 2),
    RecConvConfig(2, 3, 2, upsample="nearest"),
    RecConvConfig(2, 3, 2, upsample="transposed_dwconv"),
    RecConvConfig(2, 3, 2, aggregation="recurrent"),
    RecConvConfig(2, 5, 1),
])
def test_vjp_finite_differences(cfg):
    op = RecConv(cfg, seed=0)
    x = rand(5, 1, 2, 16, 16)
    trace = {}

    def forward():
        y, trace["t"] = op.forward(x)
        return y

    def vjp(g):
        gx, grads = op.vjp(trace["t"], g)
        return {"x": gx, **grads}

    forward()
    rep = fd_gradcheck(forward, vjp, {"x": x, **op.params()}, n_coords=200)
    assert rep.max_rel_err <= 1e-5, rep.worst


def test_vjp_zero_cotangent_and_level_zero():
    cfg = RecConvConfig(2, 3, 2)
    w = RecConvWeights.random(cfg, 0)
    x = rand(1, 1, 2, 8, 8)
    y, tr = recconv_forward(x, cfg, w)
    gx, grads = recconv_vjp(tr, cfg, w, np.zeros_like(y))
    assert not gx.any() and not any(g.any() for g in grads.values())
    cfg0 = RecConvConfig(2, 3, 0)
    w0 = RecConvWeights.random(cfg0, 0)
    g = rand(2, 1, 2, 8, 8)
    _, tr0 = recconv_forward(x, cfg0, w0)
    gx0, grads0 = recconv_vjp(tr0, cfg0, w0, g)
    ex, ew, _ = nn.conv2d_vjp(x, w0.levels[0], g)
    assert np.array_equal(gx0, ex) and np.array_equal(grads0["levels.0"], ew)
    assert not grads0["down"].any()


def test_parameter_counts():
    assert recconv_param_count(RecConvConfig(8, 5, 1)) == 600
    assert recconv_param_count(RecConvConfig(16, 3, 4)) == 864
    assert recconv_param_count(RecConvConfig(8, 5, 3, aggregation="recurrent")) == 5 * 25 * 8
    assert upsample_param_count(RecConvConfig(8, 3, 2, upsample="transposed_dwconv")) == 2 * 9 * 8
    assert upsample_param_count(RecConvConfig(8, 3, 2)) == 0
    for k in (3, 5, 7):
        for level in range(5):
            for c in (8, 16):
                for agg in ("parallel", "recurrent"):
                    if agg == "recurrent" and level == 0:
                        continue
                    cfg = RecConvConfig(c, k, level, agg)
                    params = RecConvWeights.random(cfg, 0).params()
                    assert sum(p.size for p in params.values()) == recconv_param_count(cfg)


def test_weights_are_seed_deterministic():
    cfg = RecConvConfig(4, 3, 2)
    a, b = RecConvWeights.random(cfg, 9).params(), RecConvWeights.random(cfg, 9).params()
    assert all(np.array_equal(a[n], b[n]) for n in a)
    assert all(np.all(np.abs(p) <= 1 / 3) for p in a.values())


def test_errors():
    with pytest.raises(ConfigError):
        RecConvConfig(8, 4, 1)
    with pytest.raises(ConfigError):
        RecConvConfig(0, 3, 1)
    with pytest.raises(ConfigError):
        RecConvConfig(8, 3, -1)
    with pytest.raises(ConfigError):
        RecConvConfig(8, 3, 0, aggregation="recurrent")
    with pytest.raises(ConfigError):
        RecConvConfig(8, 3, 1, upsample="cubic")
    cfg = RecConvConfig(2, 3, 3)
    w = RecConvWeights.random(cfg, 0)
    with pytest.raises(InvalidGeometryError):
        recconv(np.zeros((1, 2, 7, 16)), cfg, w)
    with pytest.raises(ShapeError):
        recconv(np.zeros((1, 3, 16, 16)), cfg, w)
    with pytest.raises(ContractError):
        RecConv(RecConvConfig(2, 3, 2), w)
