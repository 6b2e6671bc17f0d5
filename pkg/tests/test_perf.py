import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from convperf.conv_gemm import ConfigError, ConvLayerConfig, Tiling, im2col_shape
from convperf.devices import load_device
from convperf.perf import (
    BOTTLENECKS,
    GpuSpec,
    KernelSpec,
    active_ctas,
    estimate_time,
    smem_load_bytes,
    smem_store_bytes,
    t_cs,
    t_epilogue,
    t_gls,
    t_prologue,
    t_sas,
)
from convperf.traffic import estimate_traffic

BASELINE = ConvLayerConfig("base", 256, 256, 13, 13, 128, 3, 3, 1, 1)
T8 = Tiling(128, 128, 8)
INF = math.inf


def synthetic(**kw):
    base = dict(name="syn", num_sm=10, core_clock=1e9, bw_mac=1e12, size_reg=256 * 1024,
                size_smem=96 * 1024, size_l2=4 << 20, bw_l1=100e9, bw_l2=1e12, bw_dram=500e9,
                bw_smem_ld=128e9, bw_smem_st=128e9, lat_l1=10e-9, lat_l2=100e-9,
                lat_dram=300e-9, lat_smem=5e-9)
    base.update(kw)
    return GpuSpec(**base)


def test_titan_xp_preset_table_values():
    g = load_device("titan-xp")
    assert (g.num_sm, g.bw_l1, g.bw_l2, g.bw_dram) == (30, 92e9, 1051e9, 450e9)
    assert g.mac_per_sm == pytest.approx(12134e9 / 2 / 30)
    assert "lat_dram" in g.estimated


def test_t_gls_latency_only_limit():
    est = replace(estimate_traffic(BASELINE), tpl_l1=0.0, tpl_l2=0.0, tpl_dram=0.0)
    assert t_gls(est, synthetic()) == 300e-9


def test_t_gls_picks_dram_when_share_smallest():
    g = synthetic(lat_l1=0.0, lat_l2=0.0, lat_dram=0.0, bw_dram=1e9)
    est = estimate_traffic(BASELINE)
    assert t_gls(est, g) == est.tpl_dram / (1e9 / 10)


def test_t_gls_titan_xp_golden():
    g = load_device("titan-xp")
    assert t_gls(estimate_traffic(BASELINE, g.l1_granularity), g) == \
        pytest.approx(3.5770236686390535e-07, rel=1e-12)


def test_smem_volumes_and_linearity():
    assert smem_store_bytes(T8) == 8192
    assert smem_load_bytes(T8) == 24576
    g = synthetic()
    assert t_sas(Tiling(128, 128, 16), g) == pytest.approx(2 * t_sas(T8, g))
    single = Tiling(64, 32, 4)
    assert single.num_warps == 1 and smem_load_bytes(single) == smem_store_bytes(single)


def test_t_cs():
    g = synthetic()
    assert t_cs(T8, g) * g.mac_per_sm == pytest.approx(131072)
    assert t_cs(T8, replace(g, bw_mac=2e12)) == pytest.approx(t_cs(T8, g) / 2)


def test_epilogue_and_prologue():
    g = load_device("titan-xp")
    assert t_epilogue(T8, g) == 65536 / 450e9
    assert t_epilogue(T8, g, g.bw_l2) == 65536 / 1051e9
    free = synthetic(lat_l1=0.0, lat_l2=0.0, lat_dram=0.0, lat_smem=0.0, bw_dram=INF,
                     bw_smem_ld=INF, bw_smem_st=INF)
    assert t_prologue(T8, free) == 0


def test_active_ctas():
    g = synthetic(size_reg=10**9)
    assert active_ctas(g, KernelSpec(T8, num_act_cta=4)) == 4
    assert active_ctas(g, KernelSpec.for_tiling(T8)) == 6
    with pytest.raises(ConfigError):
        active_ctas(synthetic(size_smem=8192), KernelSpec.for_tiling(T8))
    with pytest.raises(ConfigError):
        active_ctas(synthetic(size_reg=1024), KernelSpec.for_tiling(T8))


def test_infinite_memory_is_mac_bound():
    g = synthetic(lat_l1=0.0, lat_l2=0.0, lat_dram=0.0, lat_smem=0.0, bw_l1=INF, bw_l2=INF,
                  bw_dram=INF, bw_smem_ld=INF, bw_smem_st=INF)
    p = estimate_time(BASELINE, estimate_traffic(BASELINE), g)
    grid = T8.grid(im2col_shape(BASELINE))
    per_sm = math.ceil(grid.num_cta / g.num_sm)
    assert p.bottleneck == "MAC" and p.case == 1
    assert p.t_total == pytest.approx(p.t_prologue + p.t_cs * grid.num_loops * per_sm)


def test_starved_dram_is_dram_bw_bound():
    g = load_device("titan-xp")
    g = replace(g, bw_dram=g.bw_dram / 100)
    assert estimate_time(BASELINE, estimate_traffic(BASELINE), g).bottleneck == "DRAM_BW"


def test_constructed_dram_latency_bound():
    cfg = ConvLayerConfig("small", 1, 64, 14, 14, 128, 3, 3, 1, 1)
    g = synthetic(num_sm=80, lat_dram=50e-6, lat_l2=100e-9)
    p = estimate_time(cfg, estimate_traffic(cfg), g, KernelSpec(T8, num_act_cta=1))
    assert T8.grid(im2col_shape(cfg)).num_cta < g.num_sm
    assert p.bottleneck == "DRAM_LAT" and p.case == 2
    assert p.candidates["DRAM_LAT"] == max(p.candidates.values())


def test_cycles_and_label_consistency():
    g = load_device("titan-xp")
    p = estimate_time(BASELINE, estimate_traffic(BASELINE), g)
    assert p.cycles == pytest.approx(p.t_total * g.core_clock, rel=1e-9)
    assert p.candidates[p.bottleneck] == p.t_total == max(p.candidates.values())
    assert p.t_total >= p.t_prologue


def test_tie_breaks_by_priority():
    # 32768 B of SMEM traffic and 131072 MACs per loop, both taking 2**-20 s
    x = 2.0 ** 20
    g = synthetic(lat_l1=0.0, lat_l2=0.0, lat_dram=0.0, lat_smem=0.0, bw_l1=INF, bw_l2=INF,
                  bw_dram=INF, bw_mac=1310720 * x, bw_smem_ld=32768 * x, bw_smem_st=32768 * x)
    p = estimate_time(BASELINE, estimate_traffic(BASELINE), g, KernelSpec.for_tiling(T8))
    assert p.t_cs == p.t_sas == 1 / x
    assert p.candidates["MAC"] == p.candidates["SMEM"]
    assert p.tie and p.bottleneck == "MAC"


def test_device_validation():
    with pytest.raises(ConfigError):
        synthetic(lat_l2=1e-3)
    with pytest.raises(ConfigError):
        synthetic(bw_l1=0.0)


BW_FIELDS = ("bw_mac", "bw_l1", "bw_l2", "bw_dram", "bw_smem_ld", "bw_smem_st")
LAT_FIELDS = ("lat_l1", "lat_l2", "lat_dram", "lat_smem")

layers = st.builds(
    lambda B, C_i, W, C_o, F, S: ConvLayerConfig("r", B, C_i, W, W, C_o, F, F, S, F // 2),
    st.integers(1, 64), st.integers(1, 512), st.integers(3, 56), st.integers(1, 512),
    st.sampled_from([1, 3, 5]), st.sampled_from([1, 2]))
devices = st.builds(
    lambda sm, mac, l1, l2, dram, smem, lats: synthetic(
        num_sm=sm, bw_mac=mac, bw_l1=l1, bw_l2=l2, bw_dram=dram, bw_smem_ld=smem,
        bw_smem_st=smem, lat_l1=lats[0], lat_l2=lats[1], lat_dram=lats[2], lat_smem=lats[0]),
    st.integers(1, 100), st.floats(1e11, 1e14), st.floats(1e10, 1e12), st.floats(1e11, 1e13),
    st.floats(1e10, 1e12), st.floats(1e10, 1e12),
    st.lists(st.floats(0, 1e-6), min_size=3, max_size=3).map(sorted))


def _total(cfg, gpu):
    return estimate_time(cfg, estimate_traffic(cfg, gpu.l1_granularity), gpu).t_total


@settings(max_examples=150)
@given(layers, devices, st.sampled_from(BW_FIELDS + LAT_FIELDS), st.floats(1.01, 4.0))
def test_time_monotone_in_each_resource(cfg, gpu, fld, factor):
    base = _total(cfg, gpu)
    changed = getattr(gpu, fld) * factor
    if fld == "lat_l1":
        changed = min(changed, gpu.lat_l2)
    if fld == "lat_l2":
        changed = min(changed, gpu.lat_dram)
    faster = _total(cfg, replace(gpu, **{fld: changed}))
    if fld in BW_FIELDS:
        assert faster <= base * (1 + 1e-12)
    else:
        assert faster >= base * (1 - 1e-12)


@settings(max_examples=50)
@given(layers, devices)
def test_more_sms_with_same_shares_never_slower(cfg, gpu):
    twice = replace(gpu, num_sm=2 * gpu.num_sm, bw_mac=2 * gpu.bw_mac, bw_l2=2 * gpu.bw_l2,
                    bw_dram=2 * gpu.bw_dram)
    assert _total(cfg, twice) <= _total(cfg, gpu) * (1 + 1e-12)


@given(layers, devices)
def test_label_is_known_and_argmax(cfg, gpu):
    p = estimate_time(cfg, estimate_traffic(cfg), gpu)
    assert p.bottleneck in BOTTLENECKS
    assert p.candidates[p.bottleneck] == max(p.candidates.values())
