"""Main-loop stream times, phase times and per-SM execution time of a conv GEMM."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Optional

from .conv_gemm import ConfigError, ConvLayerConfig, Tiling, im2col_shape, select_tiling
from .traffic import L1Granularity, TrafficEstimate

# Fixed tie-break priority, highest first.
BOTTLENECKS = ("MAC", "SMEM", "L1_BW", "L2_BW", "DRAM_BW", "DRAM_LAT")


@dataclass(frozen=True)
class GpuSpec:
    """Device parameters. Bandwidths in bytes/s (MAC/s for ``bw_mac``), latencies in s.

    ``bw_mac``, ``bw_l2`` and ``bw_dram`` are device totals; ``bw_l1`` and the
    SMEM bandwidths are per SM. Register and SMEM sizes are per SM.
    """

    name: str
    num_sm: int
    core_clock: float
    bw_mac: float
    size_reg: int
    size_smem: int
    size_l2: int
    bw_l1: float
    bw_l2: float
    bw_dram: float
    bw_smem_ld: float
    bw_smem_st: float
    lat_l1: float
    lat_l2: float
    lat_dram: float
    lat_smem: float
    l1_granularity: L1Granularity = L1Granularity()
    estimated: tuple = ()

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("name", "l1_granularity", "estimated"):
                continue
            v = getattr(self, f.name)
            if f.name.startswith("lat_"):
                if not v >= 0:
                    raise ConfigError(f"{self.name}: {f.name} must be >= 0, got {v}")
            elif not v > 0:
                raise ConfigError(f"{self.name}: {f.name} must be > 0, got {v}")
        if not self.lat_l1 <= self.lat_l2 <= self.lat_dram:
            raise ConfigError(f"{self.name}: latencies must satisfy lat_l1 <= lat_l2 <= lat_dram")

    @property
    def mac_per_sm(self) -> float:
        return self.bw_mac / self.num_sm

    @property
    def l2_share(self) -> float:
        return self.bw_l2 / self.num_sm

    @property
    def dram_share(self) -> float:
        return self.bw_dram / self.num_sm

    def with_(self, **kw) -> "GpuSpec":
        return replace(self, **kw)


def default_regs_per_cta(tiling: Tiling, elem_bytes: int = 4) -> int:
    """Register bytes a CTA needs: accumulators, one prefetch stage, 32 scalar regs per thread."""
    accum = tiling.blk_M * tiling.blk_N * elem_bytes
    prefetch = (tiling.blk_M + tiling.blk_N) * tiling.blk_K * elem_bytes
    scalars = tiling.num_warps * 32 * 32 * 4
    return accum + prefetch + scalars


def default_smem_per_cta(tiling: Tiling, elem_bytes: int = 4) -> int:
    # double-buffered input tiles
    return 2 * elem_bytes * (tiling.blk_M + tiling.blk_N) * tiling.blk_K


@dataclass(frozen=True)
class KernelSpec:
    tiling: Tiling
    num_act_cta: Optional[int] = None
    regs_per_cta: Optional[int] = None
    smem_per_cta: Optional[int] = None

    @classmethod
    def for_tiling(cls, tiling: Tiling, elem_bytes: int = 4,
                   num_act_cta: Optional[int] = None) -> "KernelSpec":
        return cls(tiling, num_act_cta,
                   default_regs_per_cta(tiling, elem_bytes),
                   default_smem_per_cta(tiling, elem_bytes))


def active_ctas(gpu: GpuSpec, kernel: KernelSpec, elem_bytes: int = 4) -> int:
    if kernel.num_act_cta is not None:
        if kernel.num_act_cta < 1:
            raise ConfigError(f"active CTA override must be >= 1, got {kernel.num_act_cta}")
        return kernel.num_act_cta
    regs = kernel.regs_per_cta or default_regs_per_cta(kernel.tiling, elem_bytes)
    smem = kernel.smem_per_cta or default_smem_per_cta(kernel.tiling, elem_bytes)
    if smem > gpu.size_smem:
        raise ConfigError(f"{gpu.name}: CTA needs {smem} B of SMEM, SM has {gpu.size_smem} B")
    n = min(gpu.size_reg // regs, gpu.size_smem // smem)
    if n < 1:
        raise ConfigError(
            f"{gpu.name}: no CTA fits an SM (needs {regs} B regs / {smem} B SMEM, "
            f"has {gpu.size_reg} / {gpu.size_smem})"
        )
    return n


def t_gls(traffic: TrafficEstimate, gpu: GpuSpec) -> float:
    return max(
        gpu.lat_l1 + traffic.tpl_l1 / gpu.bw_l1,
        gpu.lat_l2 + traffic.tpl_l2 / gpu.l2_share,
        gpu.lat_dram + traffic.tpl_dram / gpu.dram_share,
    )


def smem_store_bytes(tiling: Tiling, elem_bytes: int = 4) -> int:
    return elem_bytes * (tiling.blk_M + tiling.blk_N) * tiling.blk_K


def smem_load_bytes(tiling: Tiling, elem_bytes: int = 4) -> int:
    return elem_bytes * (tiling.blk_WM + tiling.blk_WN) * tiling.blk_K * tiling.num_warps


def t_sas(tiling: Tiling, gpu: GpuSpec, elem_bytes: int = 4) -> float:
    return (smem_store_bytes(tiling, elem_bytes) / gpu.bw_smem_st
            + smem_load_bytes(tiling, elem_bytes) / gpu.bw_smem_ld)


def t_cs(tiling: Tiling, gpu: GpuSpec) -> float:
    return tiling.blk_M * tiling.blk_N * tiling.blk_K / gpu.mac_per_sm


def t_prologue(tiling: Tiling, gpu: GpuSpec, elem_bytes: int = 4) -> float:
    tile = elem_bytes * tiling.blk_M * tiling.blk_N
    return ((gpu.lat_dram + tile / gpu.dram_share)
            + (gpu.lat_smem + tile / gpu.bw_smem_st)
            + smem_load_bytes(tiling, elem_bytes) / gpu.bw_smem_ld)


def t_epilogue(tiling: Tiling, gpu: GpuSpec, bottleneck_bw: Optional[float] = None,
               elem_bytes: int = 4) -> float:
    bw = gpu.bw_dram if bottleneck_bw is None else bottleneck_bw
    return elem_bytes * tiling.blk_N * tiling.blk_M / bw


@dataclass(frozen=True)
class PerfEstimate:
    t_gls: float
    t_sas: float
    t_cs: float
    t_prologue: float
    t_epilogue: float
    t_total: float
    cycles: float
    bottleneck: str
    case: int
    tie: bool = False
    num_act_cta: int = 1
    ctas_per_sm: int = 1
    candidates: Dict[str, float] = field(default_factory=dict)


def estimate_time(cfg: ConvLayerConfig, traffic: TrafficEstimate, gpu: GpuSpec,
                  kernel: Optional[KernelSpec] = None) -> PerfEstimate:
    eb = cfg.elem_bytes
    shape = im2col_shape(cfg)
    if kernel is None:
        kernel = KernelSpec.for_tiling(select_tiling(cfg.C_o), eb)
    tiling = kernel.tiling
    grid = tiling.grid(shape)
    act = active_ctas(gpu, kernel, eb)
    per_sm = math.ceil(grid.num_cta / gpu.num_sm)
    loops = grid.num_loops

    gls = t_gls(traffic, gpu)
    sas = t_sas(tiling, gpu, eb)
    cs = t_cs(tiling, gpu)
    pro = t_prologue(tiling, gpu, eb)
    epi = t_epilogue(tiling, gpu, elem_bytes=eb)

    cand = {
        "MAC": pro + (cs * loops + epi) * per_sm,
        "SMEM": pro + (sas * loops + epi) * per_sm,
        "DRAM_LAT": pro + ((gls + max(cs, sas) / tiling.blk_K) * loops + epi) * per_sm / act,
    }
    for label, vol, bw, epi_bw in (
        ("L1_BW", traffic.tpl_l1, gpu.bw_l1, gpu.bw_l1),
        ("L2_BW", traffic.tpl_l2, gpu.l2_share, gpu.bw_l2),
        ("DRAM_BW", traffic.tpl_dram, gpu.dram_share, gpu.bw_dram),
    ):
        cand[label] = pro + (vol / bw * loops + t_epilogue(tiling, gpu, epi_bw, eb)) * per_sm

    total = max(cand.values())
    winners = [b for b in BOTTLENECKS if cand[b] == total]
    label = winners[0]

    if label in ("MAC", "SMEM"):
        case = 1 if max(cs, sas) >= gls else 3
    elif label == "DRAM_LAT":
        case = 2
    else:
        case = 4

    return PerfEstimate(
        t_gls=gls, t_sas=sas, t_cs=cs, t_prologue=pro, t_epilogue=epi,
        t_total=total, cycles=total * gpu.core_clock, bottleneck=label, case=case,
        tie=len(winners) > 1, num_act_cta=act, ctas_per_sm=per_sm,
        candidates=cand,
    )
