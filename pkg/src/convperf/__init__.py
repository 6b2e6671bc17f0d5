"""Analytical memory-traffic and execution-time model for im2col convolution GEMMs."""

from .conv_gemm import ConfigError, ConvLayerConfig, GemmShape, Tiling, im2col_shape, select_tiling
from .devices import load_device
from .estimate import estimate_layer, estimate_network
from .layers import load_layers
from .oracle import OracleCapExceeded, run_oracle
from .perf import GpuSpec, KernelSpec, estimate_time
from .traffic import L1Granularity, TrafficEstimate, estimate_traffic

__all__ = [
    "ConfigError", "ConvLayerConfig", "GemmShape", "GpuSpec", "KernelSpec", "L1Granularity",
    "OracleCapExceeded", "Tiling", "TrafficEstimate", "estimate_layer", "estimate_network",
    "estimate_time", "estimate_traffic", "im2col_shape", "load_device", "load_layers",
    "run_oracle", "select_tiling",
]
