"""Per-layer and per-network estimation, and the CSV report format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, List, Optional

from .conv_gemm import ConvLayerConfig, GemmShape, Tiling, im2col_shape, select_tiling
from .perf import GpuSpec, KernelSpec, PerfEstimate, estimate_time
from .traffic import L1Granularity, TrafficEstimate, apply_fixed_miss_rate, estimate_traffic

CSV_COLUMNS = ("name", "M", "N", "K", "blk_M", "blk_N", "blk_K", "mli_ifmap", "mli_filter",
               "t_l1_bytes", "t_l2_bytes", "t_dram_bytes", "cycles", "time_s", "bottleneck",
               "case")


@dataclass(frozen=True)
class LayerResult:
    cfg: ConvLayerConfig
    shape: GemmShape
    tiling: Tiling
    traffic: TrafficEstimate
    perf: PerfEstimate

    def csv_row(self) -> List[str]:
        t, p = self.traffic, self.perf
        return [self.cfg.name, str(self.shape.M), str(self.shape.N), str(self.shape.K),
                str(self.tiling.blk_M), str(self.tiling.blk_N), str(self.tiling.blk_K),
                _g(t.mli_ifmap), _g(t.mli_filter), _g(t.t_l1_bytes), _g(t.t_l2_bytes),
                _g(t.t_dram_bytes), _g(p.cycles), _g(p.t_total), p.bottleneck, str(p.case)]


def _g(x: float) -> str:
    return f"{x:.6g}"


def estimate_layer(cfg: ConvLayerConfig, gpu: GpuSpec, tiling: Optional[Tiling] = None,
                   act_cta: Optional[int] = None, gran: Optional[L1Granularity] = None,
                   fixed_miss_rate: Optional[float] = None,
                   tile_scale: int = 1) -> LayerResult:
    tiling = select_tiling(cfg.C_o, tiling)
    if tile_scale != 1:
        tiling = tiling.scaled(tile_scale)
    traffic = estimate_traffic(cfg, gran or gpu.l1_granularity, tiling)
    if fixed_miss_rate is not None:
        traffic = apply_fixed_miss_rate(traffic, fixed_miss_rate)
    kernel = KernelSpec.for_tiling(tiling, cfg.elem_bytes, act_cta)
    perf = estimate_time(cfg, traffic, gpu, kernel)
    return LayerResult(cfg, im2col_shape(cfg), tiling, traffic, perf)


def estimate_network(layers: Iterable[ConvLayerConfig], gpu: GpuSpec, **kw) -> List[LayerResult]:
    return [estimate_layer(cfg, gpu, **kw) for cfg in layers]


def format_csv(results: Iterable[LayerResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow(r.csv_row())
    return buf.getvalue()


def summary(r: LayerResult) -> str:
    t, p = r.traffic, r.perf
    lines = [
        f"layer {r.cfg.name}: GEMM {r.shape.M}x{r.shape.N}x{r.shape.K}, tile {r.tiling.label}, "
        f"{r.tiling.grid(r.shape).num_cta} CTAs x {r.tiling.grid(r.shape).num_loops} loops",
        f"  MLI ifmap {t.mli_ifmap:.4g}, filter {t.mli_filter:.4g}",
        f"  traffic  L1 {t.t_l1_bytes:.4g} B  L2 {t.t_l2_bytes:.4g} B  DRAM {t.t_dram_bytes:.4g} B"
        f"  (+{t.t_dram_write_bytes:.4g} B written)",
        f"  per loop GLS {p.t_gls:.4g} s  SAS {p.t_sas:.4g} s  CS {p.t_cs:.4g} s",
        f"  time {p.t_total:.4g} s ({p.cycles:.4g} cycles), bottleneck {p.bottleneck}"
        f" (case {p.case}{', tie' if p.tie else ''}), {p.num_act_cta} active CTAs/SM",
    ]
    if t.dist_h_clamped:
        lines.append("  note: a negative horizontal-distance term was clamped to 0")
    return "\n".join(lines)
