"""Brute-force address-stream counts used to check the closed-form traffic model.

Every count here comes from enumerating the element addresses that the im2col
GEMM touches; nothing is sampled. Work is bounded by an address cap and
anything larger is refused outright.

Reuse scopes follow the analytical model: L1 merges accesses within one warp
instruction, L2 sees the unique elements of one CTA tile per main loop, and
DRAM sees the unique IFmap footprint once per CTA-tile column plus the filter
once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional

import numpy as np

from .conv_gemm import (
    ConfigError,
    ConvLayerConfig,
    Tiling,
    col_offsets,
    im2col_shape,
    padded_ifmap_elements,
    row_offsets,
    select_tiling,
)
from .traffic import WARP_SIZE, L1Granularity

DEFAULT_CAP = 10**8
_CHUNK = 1 << 22  # addresses materialized at once


class OracleCapExceeded(RuntimeError):
    """The enumeration would touch more addresses than the configured cap."""


class L1Count(NamedTuple):
    made: float  # transactions, averaged over alignment phases
    ideal: float  # transactions with dense, aligned warps
    warps: int

    @property
    def mli(self) -> float:
        return self.made / self.ideal


def check_cap(cfg: ConvLayerConfig, cap: int = DEFAULT_CAP) -> int:
    shape = im2col_shape(cfg)
    n = shape.M * shape.K + shape.N * shape.K
    if n > cap:
        raise OracleCapExceeded(
            f"{cfg.name}: {n} addresses exceed the oracle cap of {cap} (raise it with --oracle-cap)"
        )
    return n


def _segments_per_warp(addr: np.ndarray, valid: Optional[np.ndarray], eb: int, unit: int,
                       phase: int) -> np.ndarray:
    """Distinct ``unit``-byte segments touched by each warp (last axis = threads)."""
    seg = ((addr + phase) * eb) // unit
    if valid is not None:
        seg = np.where(valid, seg, -1)
    seg = np.sort(seg, axis=-1)
    distinct = 1 + (np.diff(seg, axis=-1) > 0).sum(axis=-1)
    if valid is not None:
        distinct -= seg[..., 0] == -1
    return distinct


def _unit_bytes(gran: L1Granularity, unit: str) -> int:
    if unit == "request":
        return gran.coalesce_bytes
    if unit == "sector":
        return gran.sector_bytes
    raise ConfigError(f"unit must be 'request' or 'sector', got {unit!r}")


def _phases(gran: L1Granularity, eb: int, phases: Optional[Iterable[int]]) -> List[int]:
    if phases is None:
        return list(range(max(1, gran.coalesce_bytes // eb)))
    return list(phases)


def _ifmap_l1(cfg, gran, unit, phases):
    eb = cfg.elem_bytes
    ub = _unit_bytes(gran, unit)
    rows = row_offsets(cfg)
    cols = col_offsets(cfg)
    M = len(rows)
    nw = math.ceil(M / WARP_SIZE)
    # padding threads repeat the last row so they add no segment
    rows = np.pad(rows, (0, nw * WARP_SIZE - M), mode="edge").reshape(nw, WARP_SIZE)
    active = np.minimum(WARP_SIZE, M - WARP_SIZE * np.arange(nw))
    ideal_per_col = int(np.ceil(active * eb / ub).sum())

    made = 0
    step = max(1, _CHUNK // (nw * WARP_SIZE))
    for p in phases:
        for c0 in range(0, len(cols), step):
            addr = rows[None, :, :] + cols[c0:c0 + step, None, None]
            made += int(_segments_per_warp(addr, None, eb, ub, p).sum())
    warps = nw * len(cols)
    return made / len(phases), ideal_per_col * len(cols), warps


def _filter_warp_layout(tiling: Tiling):
    k = tiling.blk_K
    if WARP_SIZE % k:
        raise ConfigError(f"filter warp layout needs blk_K dividing {WARP_SIZE}, got {k}")
    cols_per_warp = WARP_SIZE // k
    if tiling.blk_N % cols_per_warp:
        raise ConfigError(f"blk_N={tiling.blk_N} is not a multiple of {cols_per_warp} columns per warp")
    t = np.arange(WARP_SIZE)
    return cols_per_warp, t // k, t % k


def _filter_l1(cfg, tiling, gran, unit, phases):
    eb = cfg.elem_bytes
    ub = _unit_bytes(gran, unit)
    shape = im2col_shape(cfg)
    grid = tiling.grid(shape)
    cpw, dn, dk = _filter_warp_layout(tiling)
    warps_per_tile = tiling.blk_N // cpw

    # n: (col tiles, warps) -> first column of each warp; broadcast over threads
    n = (np.arange(grid.grid_cols)[:, None] * tiling.blk_N
         + np.arange(warps_per_tile)[None, :] * cpw).reshape(-1)
    n = n[:, None] + dn[None, :]  # (warps, 32)
    made = 0
    ideal = 0
    warps = 0
    loops_per_chunk = max(1, _CHUNK // n.size)
    for l0 in range(0, grid.num_loops, loops_per_chunk):
        loops = np.arange(l0, min(grid.num_loops, l0 + loops_per_chunk))
        k = loops[:, None, None] * tiling.blk_K + dk[None, None, :]  # (loops, 1, 32)
        valid = (n[None] < shape.N) & (k < shape.K)
        addr = n[None] * shape.K + k
        active = valid.sum(axis=-1)
        live = active > 0
        warps += int(live.sum())
        ideal += int(np.ceil(active[live] * eb / ub).sum())
        for p in phases:
            made += int(_segments_per_warp(addr, valid, eb, ub, p)[live].sum())
    return made / len(phases), ideal, warps


def l1_transactions(cfg: ConvLayerConfig, tiling: Optional[Tiling] = None,
                    gran: L1Granularity = L1Granularity(), *, operand: str = "both",
                    unit: str = "request", phases: Optional[Iterable[int]] = None,
                    cap: int = DEFAULT_CAP) -> L1Count:
    """Count L1 transactions made by every IFmap and/or filter warp load.

    ``unit="request"`` counts distinct coalesce-size segments per warp;
    ``unit="sector"`` counts distinct sectors. ``phases`` are element offsets
    applied to the tensor base; by default all offsets within one coalesce
    segment are averaged. Pass ``phases=[0]`` for an aligned base.
    """
    check_cap(cfg, cap)
    tiling = select_tiling(cfg.C_o, tiling)
    ph = _phases(gran, cfg.elem_bytes, phases)
    parts = []
    if operand in ("ifmap", "both"):
        parts.append(_ifmap_l1(cfg, gran, unit, ph))
    if operand in ("filter", "both"):
        parts.append(_filter_l1(cfg, tiling, gran, unit, ph))
    if not parts:
        raise ConfigError(f"operand must be 'ifmap', 'filter' or 'both', got {operand!r}")
    return L1Count(sum(p[0] for p in parts), sum(p[1] for p in parts), sum(p[2] for p in parts))


def ifmap_tile_unique(cfg: ConvLayerConfig, tiling: Optional[Tiling] = None,
                      cap: int = DEFAULT_CAP) -> np.ndarray:
    """Unique IFmap elements of every (cta_row, loop) tile, shape (grid_rows, num_loops)."""
    check_cap(cfg, cap)
    tiling = select_tiling(cfg.C_o, tiling)
    grid = tiling.grid(im2col_shape(cfg))
    bm, bk = tiling.blk_M, tiling.blk_K
    rows = row_offsets(cfg)
    cols = col_offsets(cfg)
    M, K = len(rows), len(cols)
    rows = np.pad(rows, (0, grid.grid_rows * bm - M), constant_values=-1)
    cols = np.pad(cols, (0, grid.num_loops * bk - K), constant_values=-1)
    rows = rows.reshape(grid.grid_rows, bm)
    cols = cols.reshape(grid.num_loops, bk)

    out = np.empty((grid.grid_rows, grid.num_loops), dtype=np.int64)
    step = max(1, _CHUNK // (grid.num_loops * bm * bk))
    for r0 in range(0, grid.grid_rows, step):
        r = rows[r0:r0 + step]
        # (rtiles, loops, bm, bk) -> (rtiles, loops, bm*bk)
        addr = r[:, None, :, None] + cols[None, :, None, :]
        valid = (r[:, None, :, None] >= 0) & (cols[None, :, None, :] >= 0)
        addr = np.where(valid, addr, -1).reshape(r.shape[0], grid.num_loops, -1)
        addr = np.sort(addr, axis=-1)
        distinct = 1 + (np.diff(addr, axis=-1) > 0).sum(axis=-1)
        distinct -= addr[..., 0] == -1
        out[r0:r0 + step] = distinct
    return out


def filter_tile_unique(cfg: ConvLayerConfig, tiling: Tiling, cta_col: int,
                       loop_index: int) -> int:
    shape = im2col_shape(cfg)
    n = min(tiling.blk_N, shape.N - cta_col * tiling.blk_N)
    k = min(tiling.blk_K, shape.K - loop_index * tiling.blk_K)
    # filter addresses n*K + k are distinct for distinct (n, k)
    return max(n, 0) * max(k, 0)


def l2_unique_per_tile(cfg: ConvLayerConfig, tiling: Optional[Tiling], cta_row: int,
                       loop_index: int, cta_col: int = 0, cap: int = DEFAULT_CAP) -> int:
    tiling = select_tiling(cfg.C_o, tiling)
    shape = im2col_shape(cfg)
    grid = tiling.grid(shape)
    if not (0 <= cta_row < grid.grid_rows and 0 <= loop_index < grid.num_loops
            and 0 <= cta_col < grid.grid_cols):
        raise ConfigError(f"tile ({cta_row}, {cta_col}, loop {loop_index}) outside the CTA grid")
    check_cap(cfg, cap)
    rows = row_offsets(cfg)[cta_row * tiling.blk_M:(cta_row + 1) * tiling.blk_M]
    cols = col_offsets(cfg)[loop_index * tiling.blk_K:(loop_index + 1) * tiling.blk_K]
    ifmap = np.unique(rows[:, None] + cols[None, :]).size
    return int(ifmap) + filter_tile_unique(cfg, tiling, cta_col, loop_index)


def dram_unique(cfg: ConvLayerConfig, tiling: Optional[Tiling] = None,
                cap: int = DEFAULT_CAP) -> int:
    """DRAM bytes under column-wise CTA scheduling.

    Each CTA-tile column streams the IFmap footprint its CTAs touch; filters
    stay resident in L2 and are fetched once.
    """
    check_cap(cfg, cap)
    tiling = select_tiling(cfg.C_o, tiling)
    shape = im2col_shape(cfg)
    grid = tiling.grid(shape)
    rows = row_offsets(cfg)
    cols = col_offsets(cfg)
    step = max(1, _CHUNK // len(cols))

    ifmap = 0
    for _ in range(grid.grid_cols):
        # every CTA of a column spans all GEMM rows and all K
        seen = np.zeros(padded_ifmap_elements(cfg), dtype=bool)
        for r0 in range(0, len(rows), step):
            seen[(rows[r0:r0 + step, None] + cols[None, :]).ravel()] = True
        ifmap += int(seen.sum())

    filt = np.zeros(shape.N * shape.K, dtype=bool)
    n = np.arange(shape.N)
    filt[(n[:, None] * shape.K + np.arange(shape.K)[None, :]).ravel()] = True
    return cfg.elem_bytes * (ifmap + int(filt.sum()))


@dataclass(frozen=True)
class OracleReport:
    l1_transactions: float
    l1_ideal_transactions: float
    l2_unique_elements_per_tile: List[int]
    dram_unique_bytes: int
    config: ConvLayerConfig
    tiling: Tiling
    gran: L1Granularity = field(default_factory=L1Granularity)

    @property
    def l1_mli(self) -> float:
        return self.l1_transactions / self.l1_ideal_transactions


def run_oracle(cfg: ConvLayerConfig, tiling: Optional[Tiling] = None,
               gran: L1Granularity = L1Granularity(), cap: int = DEFAULT_CAP,
               phases: Optional[Iterable[int]] = None) -> OracleReport:
    tiling = select_tiling(cfg.C_o, tiling)
    l1 = l1_transactions(cfg, tiling, gran, phases=phases, cap=cap)
    ifm = ifmap_tile_unique(cfg, tiling, cap)
    loops = ifm.shape[1]
    per_tile = [int(ifm[r, l]) + filter_tile_unique(cfg, tiling, 0, l)
                for r in range(ifm.shape[0]) for l in range(loops)]
    return OracleReport(l1.made, l1.ideal, per_tile, dram_unique(cfg, tiling, cap),
                        cfg, tiling, gran)
