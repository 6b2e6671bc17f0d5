"""Closed-form L1, L2 and DRAM traffic of an im2col convolution GEMM.

The per-equation helpers return :class:`fractions.Fraction` so that the
model can be checked against hand-derived values exactly; the packaged
:class:`TrafficEstimate` carries floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

from .conv_gemm import (
    ConfigError,
    ConvLayerConfig,
    GemmShape,
    Tiling,
    filter_elements,
    im2col_shape,
    select_tiling,
)

WARP_SIZE = 32


@dataclass(frozen=True)
class L1Granularity:
    coalesce_bytes: int = 128
    sector_bytes: int = 32

    def __post_init__(self):
        if self.coalesce_bytes not in (32, 64, 128):
            raise ConfigError(f"L1 coalesce size must be 32, 64 or 128 B, got {self.coalesce_bytes}")
        if self.sector_bytes < 1 or self.coalesce_bytes % self.sector_bytes:
            raise ConfigError(
                f"sector size {self.sector_bytes} B must divide coalesce size {self.coalesce_bytes} B"
            )


@dataclass(frozen=True)
class TrafficEstimate:
    t_l1_bytes: float
    t_l2_bytes: float
    t_dram_bytes: float
    tpl_l1: float
    tpl_l2: float
    tpl_dram: float
    mli_ifmap: float
    mli_filter: float
    a_dist_v: float
    a_dist_h: float
    dist_filter: float
    t_dram_write_bytes: float = 0.0
    dist_h_clamped: bool = False
    fixed_miss_rate: Optional[float] = None


def access_ratio(cfg: ConvLayerConfig) -> Fraction:
    """Elements a warp's address span covers per element it actually uses."""
    return Fraction(cfg.W_p * cfg.Strd, cfg.W_p - cfg.W_f + 1)


def mli_ifmap(cfg: ConvLayerConfig, gran: L1Granularity = L1Granularity()) -> Fraction:
    bytes_per_warp = WARP_SIZE * cfg.elem_bytes
    requests = math.ceil(access_ratio(cfg) * Fraction(bytes_per_warp, gran.coalesce_bytes))
    return requests * Fraction(gran.coalesce_bytes, bytes_per_warp)


# Alignment-averaged filter load inefficiency of the profiled kernels.
MLI_FILTER_TABLE = {8: Fraction(2), 4: Fraction(11, 4)}


def mli_filter(tiling: Tiling, override: Optional[float] = None) -> Fraction:
    if override is not None:
        if override < 1:
            raise ConfigError(f"filter MLI override must be >= 1, got {override}")
        return Fraction(override)
    try:
        return MLI_FILTER_TABLE[tiling.blk_K]
    except KeyError:
        raise ConfigError(
            f"no filter MLI for blk_K={tiling.blk_K}; supply an override "
            f"(e.g. from the oracle's filter transaction count)"
        ) from None


def l1_traffic(shape: GemmShape, mli_if, mli_fil, elem_bytes: int):
    return elem_bytes * (shape.M * shape.K * mli_if + shape.N * shape.K * mli_fil)


def dist_v(cfg: ConvLayerConfig, tiling: Tiling) -> Fraction:
    return tiling.blk_M * access_ratio(cfg)


def a_dist_v(cfg: ConvLayerConfig, tiling: Tiling) -> Fraction:
    return dist_v(cfg, tiling) * Fraction(tiling.blk_K, cfg.H_f * cfg.W_f)


def dist_h_terms(cfg: ConvLayerConfig, tiling: Tiling):
    """The two additive terms of the horizontal tile distance, unclamped."""
    k, wf, s = tiling.blk_K, cfg.W_f, cfg.Strd
    # padded width: the column-boundary jump is W_p - W_f + 1
    first = Fraction(k - 1, wf) * ((cfg.W_p - wf + 1) + s * (wf - k + 1))
    second = Fraction(wf - k + 1, wf) * (s * (k - 1))
    return first, second


def dist_h(cfg: ConvLayerConfig, tiling: Tiling) -> Fraction:
    first, second = dist_h_terms(cfg, tiling)
    return max(first, Fraction(0)) + max(second, Fraction(0))


def samples_per_tile_factor(cfg: ConvLayerConfig, tiling: Tiling) -> Fraction:
    per_sample = Fraction(cfg.H_p - cfg.H_f + 1, cfg.Strd) ** 2
    return 1 + tiling.blk_M / per_sample


def a_dist_h(cfg: ConvLayerConfig, tiling: Tiling) -> Fraction:
    return dist_h(cfg, tiling) * samples_per_tile_factor(cfg, tiling)


def ifmap_tile_elements(cfg: ConvLayerConfig, tiling: Tiling) -> Fraction:
    """Estimated unique IFmap elements one CTA loads into L2 per main loop."""
    if cfg.is_pointwise:
        # no reuse inside the tile: every element is distinct
        return Fraction(tiling.blk_M * tiling.blk_K)
    return a_dist_v(cfg, tiling) + a_dist_h(cfg, tiling)


def filter_tile_elements(tiling: Tiling) -> int:
    return tiling.blk_N * tiling.blk_K


def l2_traffic(cfg: ConvLayerConfig, shape: GemmShape, tiling: Tiling) -> Fraction:
    grid = tiling.grid(shape)
    per_loop = ifmap_tile_elements(cfg, tiling) + filter_tile_elements(tiling)
    return cfg.elem_bytes * per_loop * grid.num_loops * grid.num_cta


def visited_extent(padded: int, filt: int, stride: int) -> int:
    """Number of distinct padded rows (or columns) any filter placement touches."""
    out = (padded - filt) // stride + 1
    if filt >= stride:
        return (out - 1) * stride + filt
    return out * filt


def ifmap_dram_elements(cfg: ConvLayerConfig) -> int:
    """IFmap elements fetched per CTA-tile column: the padded footprint minus never-read data."""
    rows = visited_extent(cfg.H_p, cfg.H_f, cfg.Strd)
    cols = visited_extent(cfg.W_p, cfg.W_f, cfg.Strd)
    return cfg.B * cfg.C_i * rows * cols


def dram_traffic(cfg: ConvLayerConfig, shape: GemmShape, tiling: Tiling) -> int:
    grid = tiling.grid(shape)
    t_ifmap = cfg.elem_bytes * ifmap_dram_elements(cfg) * grid.grid_cols
    t_filter = cfg.elem_bytes * filter_elements(cfg)
    return t_ifmap + t_filter


def estimate_traffic(cfg: ConvLayerConfig, gran: L1Granularity = L1Granularity(),
                     tiling: Optional[Tiling] = None,
                     mli_filter_override: Optional[float] = None) -> TrafficEstimate:
    shape = im2col_shape(cfg)
    tiling = select_tiling(cfg.C_o, tiling)
    grid = tiling.grid(shape)
    eb = cfg.elem_bytes

    m_if = mli_ifmap(cfg, gran)
    m_fil = mli_filter(tiling, mli_filter_override)

    if cfg.is_pointwise:
        adv, adh, clamped = Fraction(tiling.blk_M * tiling.blk_K), Fraction(0), False
    else:
        adv, adh = a_dist_v(cfg, tiling), a_dist_h(cfg, tiling)
        clamped = any(t < 0 for t in dist_h_terms(cfg, tiling))
    dfil = filter_tile_elements(tiling)

    t_dram = dram_traffic(cfg, shape, tiling)
    tiles = grid.num_cta * grid.num_loops
    tpl_l2 = eb * (adv + adh + dfil)
    return TrafficEstimate(
        t_l1_bytes=float(l1_traffic(shape, m_if, m_fil, eb)),
        t_l2_bytes=float(tpl_l2 * tiles),
        t_dram_bytes=float(t_dram),
        tpl_l1=float(eb * (tiling.blk_M * tiling.blk_K * m_if + dfil * m_fil)),
        tpl_l2=float(tpl_l2),
        tpl_dram=float(Fraction(t_dram, tiles)),
        mli_ifmap=float(m_if),
        mli_filter=float(m_fil),
        a_dist_v=float(adv),
        a_dist_h=float(adh),
        dist_filter=float(dfil),
        t_dram_write_bytes=float(eb * shape.M * shape.N),
        dist_h_clamped=clamped,
    )


def apply_fixed_miss_rate(traffic: TrafficEstimate, miss_rate: float) -> TrafficEstimate:
    """Prior-model behaviour: each level below L1 sees ``miss_rate`` of the level above."""
    if not 0 <= miss_rate <= 1:
        raise ConfigError(f"miss rate must be in [0, 1], got {miss_rate}")
    l2 = traffic.t_l1_bytes * miss_rate
    tpl_l2 = traffic.tpl_l1 * miss_rate
    return replace(
        traffic,
        t_l2_bytes=l2,
        t_dram_bytes=l2 * miss_rate,
        tpl_l2=tpl_l2,
        tpl_dram=tpl_l2 * miss_rate,
        fixed_miss_rate=miss_rate,
    )
