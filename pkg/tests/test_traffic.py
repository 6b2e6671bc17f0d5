from fractions import Fraction

import pytest
from hypothesis import assume, given, strategies as st

from convperf.conv_gemm import ConfigError, ConvLayerConfig, Tiling, im2col_address, im2col_shape
from convperf.traffic import (
    L1Granularity,
    a_dist_h,
    a_dist_v,
    access_ratio,
    apply_fixed_miss_rate,
    dist_h,
    dist_h_terms,
    dist_v,
    dram_traffic,
    estimate_traffic,
    ifmap_tile_elements,
    l1_traffic,
    l2_traffic,
    mli_filter,
    mli_ifmap,
    samples_per_tile_factor,
)

SMALL = ConvLayerConfig("small", 1, 1, 4, 4, 8, 3, 3, 1, 1)
BASELINE = ConvLayerConfig("base", 256, 256, 13, 13, 128, 3, 3, 1, 1)
T8, T4 = Tiling(128, 128, 8), Tiling(128, 32, 4)


def conv(W=13, Pad=1, F=3, S=1, C_o=128, B=2, C_i=4):
    return ConvLayerConfig("c", B, C_i, W, W, C_o, F, F, S, Pad)


def test_access_ratio_examples():
    assert access_ratio(SMALL) == Fraction(3, 2)
    assert access_ratio(conv(W=7, Pad=0, F=1)) == 1
    assert access_ratio(conv(W=13, Pad=1, F=3, S=2)) == Fraction(30, 13)


@given(st.integers(2, 40), st.integers(0, 3), st.sampled_from([1, 3, 5, 7]))
def test_access_ratio_is_address_advance_per_used_element(W, Pad, F):
    assume(F <= W + 2 * Pad)
    cfg = conv(W=W, Pad=Pad, F=F, S=1, B=1, C_i=1)
    W_o = im2col_shape(cfg).W_o
    # one output row later the column has advanced one padded row
    advance = im2col_address(cfg, W_o, 0) - im2col_address(cfg, 0, 0)
    assert access_ratio(cfg) == Fraction(advance, W_o)


def test_mli_ifmap_examples():
    assert mli_ifmap(SMALL) == 2
    assert mli_ifmap(conv(W=8, Pad=0, F=1)) == 1
    assert mli_ifmap(SMALL, L1Granularity(32, 32)) == Fraction(3, 2)


def test_mli_filter_table():
    assert mli_filter(T8) == 2
    assert mli_filter(T4) == Fraction(11, 4)
    assert mli_filter(Tiling(128, 128, 16), override=3.5) == Fraction(7, 2)
    with pytest.raises(ConfigError):
        mli_filter(Tiling(128, 128, 16))


def test_l1_traffic_examples():
    s = im2col_shape(ConvLayerConfig("s", 1, 1, 4, 4, 8, 3, 3, 1, 1))
    assert l1_traffic(s, 1, 1, 4) == 864
    s = im2col_shape(BASELINE)
    assert l1_traffic(s, 2, 2, 4) == 4 * 2 * (43264 + 128) * 2304


def test_vertical_distance_examples():
    assert dist_v(SMALL, T8) == 192
    assert a_dist_v(SMALL, T8) == Fraction(512, 3)
    pw = conv(W=8, Pad=0, F=1)
    assert a_dist_v(pw, T8) == 128 * 8
    assert ifmap_tile_elements(pw, T8) == 128 * 8


def test_horizontal_distance_examples():
    assert dist_h(SMALL, T4) == 4
    assert dist_h(SMALL, Tiling(128, 32, 1, num_warps=2)) == 0
    assert samples_per_tile_factor(BASELINE, T8) == 1 + Fraction(128, 169)
    assert a_dist_h(SMALL, T4) == 4 * (1 + Fraction(128, 16))


def test_negative_horizontal_terms_are_clamped_and_flagged():
    cfg = conv(W=4, Pad=0, F=3)
    first, second = dist_h_terms(cfg, T8)
    assert first < 0 and second < 0
    assert dist_h(cfg, T8) == 0
    assert estimate_traffic(cfg, tiling=T8).dist_h_clamped
    assert not estimate_traffic(SMALL, tiling=T4).dist_h_clamped


def test_l2_single_tile_total_is_per_loop_volume():
    cfg = ConvLayerConfig("one", 1, 1, 4, 4, 8, 1, 1)
    est = estimate_traffic(cfg, tiling=T8)
    assert est.t_l2_bytes == est.tpl_l2 == 4 * (128 * 8 + 128 * 8)


def test_l2_identity_and_small_per_loop():
    shape = im2col_shape(BASELINE)
    est = estimate_traffic(BASELINE)
    grid = T8.grid(shape)
    assert est.tpl_l2 * grid.num_loops * grid.num_cta == pytest.approx(est.t_l2_bytes, rel=1e-12)
    assert float(l2_traffic(BASELINE, shape, T8)) == pytest.approx(est.t_l2_bytes, rel=1e-12)
    f = estimate_traffic(SMALL, tiling=T4)
    assert f.tpl_l2 == pytest.approx(4 * float(a_dist_v(SMALL, T4) + a_dist_h(SMALL, T4) + 32 * 4))


def test_dram_examples():
    one_col = conv(W=13, Pad=1, F=3, C_o=128)
    pad_bytes = 4 * 2 * 4 * 15 * 15
    filt_bytes = 4 * 128 * 4 * 9
    assert dram_traffic(one_col, im2col_shape(one_col), T8) == pad_bytes + filt_bytes
    two_col = conv(W=13, Pad=1, F=3, C_o=256)
    assert dram_traffic(two_col, im2col_shape(two_col), T8) == 2 * pad_bytes + 2 * filt_bytes
    strided = conv(W=8, Pad=0, F=1, S=2, C_o=64, B=3, C_i=5)
    t = Tiling(128, 64, 4)
    assert dram_traffic(strided, im2col_shape(strided), t) == 4 * (3 * 5 * 16 + 64 * 5)


def test_tpl_dram_is_uniform_share():
    est = estimate_traffic(BASELINE)
    grid = T8.grid(im2col_shape(BASELINE))
    assert est.tpl_dram * grid.num_cta * grid.num_loops == pytest.approx(est.t_dram_bytes)


def test_per_loop_l1_formula():
    est = estimate_traffic(BASELINE)
    assert est.tpl_l1 == 4 * (128 * 8 * 2 + 128 * 8 * 2)
    assert est.mli_ifmap == 2 and est.mli_filter == 2


def test_fixed_miss_rate_chains_levels():
    est = estimate_traffic(BASELINE)
    one = apply_fixed_miss_rate(est, 1.0)
    assert one.t_l2_bytes == one.t_dram_bytes == est.t_l1_bytes
    half = apply_fixed_miss_rate(est, 0.5)
    assert half.t_dram_bytes == est.t_l1_bytes / 4 and half.fixed_miss_rate == 0.5
    with pytest.raises(ConfigError):
        apply_fixed_miss_rate(est, 1.5)


cfgs = st.builds(
    lambda W, Pad, F, S, C_o: conv(W=W, Pad=Pad, F=min(F, W + 2 * Pad), S=S, C_o=C_o),
    st.integers(1, 56), st.integers(0, 3), st.sampled_from([1, 3, 5, 7, 11]),
    st.sampled_from([1, 2, 4]), st.integers(1, 512))


@given(cfgs, st.sampled_from([32, 64, 128]))
def test_inefficiencies_at_least_one(cfg, coal):
    assert access_ratio(cfg) >= 1
    assert mli_ifmap(cfg, L1Granularity(coal, 32)) >= 1


@given(cfgs)
def test_ratio_monotone_in_stride(cfg):
    assume(cfg.Strd < 4)
    wider = ConvLayerConfig("w", cfg.B, cfg.C_i, cfg.H_i, cfg.W_i, cfg.C_o, cfg.H_f, cfg.W_f,
                            cfg.Strd + 1, cfg.Pad)
    assert access_ratio(wider) >= access_ratio(cfg)


def _more_pad(cfg):
    return ConvLayerConfig("p", cfg.B, cfg.C_i, cfg.H_i, cfg.W_i, cfg.C_o, cfg.H_f, cfg.W_f,
                           cfg.Strd, cfg.Pad + 1)


@pytest.mark.xfail(strict=True, reason="W_p/(W_p - W_f + 1) shrinks as W_p grows when W_f > 1")
def test_vertical_distance_nondecreasing_in_pad_claim():
    cfg = conv(W=1, Pad=1, F=3)
    assert dist_v(_more_pad(cfg), T8) >= dist_v(cfg, T8)


@given(cfgs)
def test_vertical_distance_pad_dependence(cfg):
    before, after = dist_v(cfg, T8), dist_v(_more_pad(cfg), T8)
    if cfg.W_f == 1:
        assert after == before
    else:
        assert after < before


@given(cfgs, st.sampled_from([16, 32, 64, 128, 256, 512]))
def test_per_loop_volumes_independent_of_batch(cfg, B):
    a = estimate_traffic(cfg)
    b = estimate_traffic(cfg.with_batch(B))
    assert (a.tpl_l1, a.tpl_l2) == (b.tpl_l1, b.tpl_l2)


@given(cfgs)
def test_l1_total_at_least_input_volume(cfg):
    s = im2col_shape(cfg)
    assert estimate_traffic(cfg).t_l1_bytes >= 4 * (s.M + s.N) * s.K
