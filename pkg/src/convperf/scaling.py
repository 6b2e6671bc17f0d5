"""GPU resource-scaling study: apply design options to a device and re-estimate a network."""

from __future__ import annotations

import configparser
from collections import Counter
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .conv_gemm import ConfigError, ConvLayerConfig
from .estimate import LayerResult, estimate_network
from .perf import BOTTLENECKS, GpuSpec

BASE_TILE = 128


@dataclass(frozen=True)
class DesignOption:
    name: str
    n_sm: float = 1.0
    mac_bw_per_sm: float = 1.0
    regs: float = 1.0
    smem_size: float = 1.0
    smem_bw: float = 1.0
    l1_bw: float = 1.0
    l2_bw: float = 1.0
    dram_bw: float = 1.0
    cta_tile_hw: int = BASE_TILE

    def __post_init__(self):
        for f in fields(self):
            if f.name != "name" and not getattr(self, f.name) > 0:
                raise ConfigError(f"option {self.name}: {f.name} must be > 0")
        if self.cta_tile_hw % BASE_TILE:
            raise ConfigError(f"option {self.name}: cta_tile_hw must be a multiple of {BASE_TILE}")

    @property
    def tile_scale(self) -> int:
        return self.cta_tile_hw // BASE_TILE

    def apply(self, gpu: GpuSpec) -> GpuSpec:
        num_sm = gpu.num_sm * self.n_sm
        if num_sm != int(num_sm):
            raise ConfigError(f"option {self.name}: {gpu.num_sm} SMs x {self.n_sm} is not whole")
        return replace(
            gpu,
            name=f"{gpu.name}+{self.name}",
            num_sm=int(num_sm),
            bw_mac=gpu.bw_mac * self.n_sm * self.mac_bw_per_sm,
            size_reg=int(gpu.size_reg * self.regs),
            size_smem=int(gpu.size_smem * self.smem_size),
            bw_smem_ld=gpu.bw_smem_ld * self.smem_bw,
            bw_smem_st=gpu.bw_smem_st * self.smem_bw,
            bw_l1=gpu.bw_l1 * self.l1_bw,
            bw_l2=gpu.bw_l2 * self.l2_bw,
            bw_dram=gpu.bw_dram * self.dram_bw,
        )


_OPTION_KEYS = {f.name for f in fields(DesignOption)} - {"name"}


def parse_options(text: str, source: str = "<options>") -> List[DesignOption]:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    opts = []
    for sec in cp.sections():
        unknown = set(cp[sec]) - _OPTION_KEYS
        if unknown:
            raise ConfigError(f"{source} [{sec}]: unknown keys {sorted(unknown)}")
        try:
            kw = {k: float(v) for k, v in cp[sec].items()}
        except ValueError as e:
            raise ConfigError(f"{source} [{sec}]: {e}") from None
        if "cta_tile_hw" in kw:
            kw["cta_tile_hw"] = int(kw["cta_tile_hw"])
        opts.append(DesignOption(sec, **kw))
    if not opts:
        raise ConfigError(f"{source}: no options")
    return opts


def load_options(spec: Optional[Union[str, Path]] = None) -> List[DesignOption]:
    if spec is None:
        res = resources.files("convperf.data").joinpath("options", "design_options.ini")
        return parse_options(res.read_text(), "design_options.ini")
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"options file {path} not found")
    return parse_options(path.read_text(), str(path))


@dataclass(frozen=True)
class ScalingResult:
    option: DesignOption
    total_time: float
    speedup: float
    bottlenecks: Dict[str, int]
    layers: List[LayerResult]


def run_option(layers: Sequence[ConvLayerConfig], gpu: GpuSpec, option: DesignOption,
               act_cta: Optional[int] = None) -> List[LayerResult]:
    return estimate_network(layers, option.apply(gpu), act_cta=act_cta,
                            tile_scale=option.tile_scale)


def scaling_study(layers: Sequence[ConvLayerConfig], gpu: GpuSpec,
                  options: Sequence[DesignOption], act_cta: Optional[int] = None
                  ) -> List[ScalingResult]:
    """Total network time per option, with speedup over the unmodified device."""
    base = sum(r.perf.t_total for r in estimate_network(layers, gpu, act_cta=act_cta))
    out = []
    for opt in options:
        res = run_option(layers, gpu, opt, act_cta)
        total = sum(r.perf.t_total for r in res)
        hist = Counter(r.perf.bottleneck for r in res)
        out.append(ScalingResult(opt, total, base / total,
                                 {b: hist.get(b, 0) for b in BOTTLENECKS}, res))
    return out
