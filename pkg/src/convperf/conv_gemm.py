"""Convolution layer configurations, their im2col GEMM shapes, and CTA tilings.

Tensors are BCHW with the zero padding materialized, so a padded IFmap of
shape (B, C_i, H_i + 2*Pad, W_i + 2*Pad) occupies contiguous element
addresses starting at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np


class ConfigError(ValueError):
    """Raised for layer, tiling, or device parameters that fail validation."""


LAYER_FIELDS = ("name", "B", "C_i", "H_i", "W_i", "C_o", "H_f", "W_f", "Strd", "Pad")


@dataclass(frozen=True)
class ConvLayerConfig:
    name: str
    B: int
    C_i: int
    H_i: int
    W_i: int
    C_o: int
    H_f: int
    W_f: int
    Strd: int = 1
    Pad: int = 0
    elem_bytes: int = 4

    def __post_init__(self):
        for f in ("B", "C_i", "H_i", "W_i", "C_o", "H_f", "W_f", "Strd"):
            v = getattr(self, f)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{self.name}: {f} must be an integer >= 1, got {v!r}")
        if not isinstance(self.Pad, (int, np.integer)) or self.Pad < 0:
            raise ConfigError(f"{self.name}: Pad must be an integer >= 0, got {self.Pad!r}")
        if self.elem_bytes not in (2, 4, 8):
            raise ConfigError(f"{self.name}: elem_bytes must be 2, 4 or 8, got {self.elem_bytes!r}")
        if self.H_i + 2 * self.Pad < self.H_f or self.W_i + 2 * self.Pad < self.W_f:
            raise ConfigError(
                f"{self.name}: filter {self.H_f}x{self.W_f} does not fit the padded "
                f"input {self.H_p}x{self.W_p}"
            )

    @property
    def H_p(self) -> int:
        return self.H_i + 2 * self.Pad

    @property
    def W_p(self) -> int:
        return self.W_i + 2 * self.Pad

    @property
    def is_pointwise(self) -> bool:
        """1x1 convolution (FC layers are modelled as 1x1 on a 1x1 input)."""
        return self.H_f == 1 and self.W_f == 1

    def with_batch(self, B: int) -> "ConvLayerConfig":
        return replace(self, B=B)

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in LAYER_FIELDS)


def fc_layer(name: str, B: int, in_features: int, out_features: int,
             elem_bytes: int = 4) -> ConvLayerConfig:
    """A fully-connected layer as a 1x1 convolution over a 1x1 feature."""
    return ConvLayerConfig(name, B, in_features, 1, 1, out_features, 1, 1, 1, 0, elem_bytes)


@dataclass(frozen=True)
class GemmShape:
    M: int
    N: int
    K: int
    H_o: int
    W_o: int


def output_dims(cfg: ConvLayerConfig) -> Tuple[int, int]:
    if cfg.H_p < cfg.H_f or cfg.W_p < cfg.W_f:
        raise ConfigError(f"{cfg.name}: no valid output position")
    H_o = (cfg.H_p - cfg.H_f) // cfg.Strd + 1
    W_o = (cfg.W_p - cfg.W_f) // cfg.Strd + 1
    return H_o, W_o


def im2col_shape(cfg: ConvLayerConfig) -> GemmShape:
    H_o, W_o = output_dims(cfg)
    return GemmShape(M=cfg.B * H_o * W_o, N=cfg.C_o, K=cfg.C_i * cfg.H_f * cfg.W_f,
                     H_o=H_o, W_o=W_o)


@dataclass(frozen=True)
class Tiling:
    """CTA and warp blocking factors.

    Warp tiles must exactly cover the CTA tile. When ``num_warps`` is left at
    0 it is derived from the warp tile size.
    """

    blk_M: int
    blk_N: int
    blk_K: int
    blk_WM: int = 64
    blk_WN: int = 32
    num_warps: int = 0

    def __post_init__(self):
        for f in ("blk_M", "blk_N", "blk_K", "blk_WM", "blk_WN"):
            if getattr(self, f) < 1:
                raise ConfigError(f"tiling: {f} must be >= 1")
        if self.num_warps == 0:
            cover, rem = divmod(self.blk_M * self.blk_N, self.blk_WM * self.blk_WN)
            if rem or cover < 1:
                raise ConfigError(
                    f"tiling: warp tile {self.blk_WM}x{self.blk_WN} does not evenly cover "
                    f"CTA tile {self.blk_M}x{self.blk_N}"
                )
            object.__setattr__(self, "num_warps", cover)
        elif self.blk_M * self.blk_N != self.blk_WM * self.blk_WN * self.num_warps:
            raise ConfigError(
                f"tiling: {self.num_warps} warps of {self.blk_WM}x{self.blk_WN} do not cover "
                f"CTA tile {self.blk_M}x{self.blk_N}"
            )

    @property
    def label(self) -> str:
        return f"({self.blk_M}x{self.blk_N})x{self.blk_K}"

    def grid(self, shape: GemmShape) -> "Grid":
        return Grid(
            grid_rows=math.ceil(shape.M / self.blk_M),
            grid_cols=math.ceil(shape.N / self.blk_N),
            num_loops=math.ceil(shape.K / self.blk_K),
        )

    def scaled(self, factor: int) -> "Tiling":
        """CTA tile grown by ``factor`` in both M and N, same warp tile shape."""
        return Tiling(self.blk_M * factor, self.blk_N * factor, self.blk_K,
                      self.blk_WM, self.blk_WN)


@dataclass(frozen=True)
class Grid:
    grid_rows: int
    grid_cols: int
    num_loops: int

    @property
    def num_cta(self) -> int:
        return self.grid_rows * self.grid_cols


def parse_tile(text: str) -> Tiling:
    """Parse ``MxNxK`` (e.g. ``128x64x4``) into a Tiling with default warp tiles."""
    try:
        m, n, k = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad tile spec {text!r}, expected MxNxK") from None
    return Tiling(m, n, k)


# Profiled cuDNN tile shapes keyed by the largest C_o each one serves.
DEFAULT_TILE_TABLE: Tuple[Tuple[Optional[int], Tiling], ...] = (
    (32, Tiling(128, 32, 4)),
    (64, Tiling(128, 64, 4)),
    (None, Tiling(128, 128, 8)),
)


def select_tiling(C_o: int, override: Optional[Tiling] = None,
                  table=DEFAULT_TILE_TABLE) -> Tiling:
    if C_o < 1:
        raise ConfigError(f"C_o must be >= 1, got {C_o}")
    if override is not None:
        if not isinstance(override, Tiling):
            raise ConfigError("tiling override must be a Tiling")
        return override
    for limit, tiling in table:
        if limit is None or C_o <= limit:
            return tiling
    raise ConfigError(f"tile table has no entry for C_o={C_o}")


def _decompose_row(cfg: ConvLayerConfig, shape: GemmShape, row):
    x = row % shape.W_o
    y = (row // shape.W_o) % shape.H_o
    b = row // (shape.W_o * shape.H_o)
    return b, y, x


def _decompose_col(cfg: ConvLayerConfig, col):
    s = col % cfg.W_f
    r = (col // cfg.W_f) % cfg.H_f
    c = col // (cfg.W_f * cfg.H_f)
    return c, r, s


def im2col_address(cfg: ConvLayerConfig, row: int, col: int) -> int:
    """Element address in the padded BCHW IFmap read by GEMM entry (row, col)."""
    shape = im2col_shape(cfg)
    if not (0 <= row < shape.M and 0 <= col < shape.K):
        raise ConfigError(f"({row}, {col}) outside the {shape.M}x{shape.K} IFmap matrix")
    b, y, x = _decompose_row(cfg, shape, row)
    c, r, s = _decompose_col(cfg, col)
    return ((b * cfg.C_i + c) * cfg.H_p + (y * cfg.Strd + r)) * cfg.W_p + (x * cfg.Strd + s)


def row_offsets(cfg: ConvLayerConfig) -> np.ndarray:
    """Address contribution of every GEMM row; address = row_offsets[i] + col_offsets[j]."""
    shape = im2col_shape(cfg)
    row = np.arange(shape.M, dtype=np.int64)
    b, y, x = _decompose_row(cfg, shape, row)
    return (b * cfg.C_i * cfg.H_p + y * cfg.Strd) * cfg.W_p + x * cfg.Strd


def col_offsets(cfg: ConvLayerConfig) -> np.ndarray:
    col = np.arange(cfg.C_i * cfg.H_f * cfg.W_f, dtype=np.int64)
    c, r, s = _decompose_col(cfg, col)
    return (c * cfg.H_p + r) * cfg.W_p + s


def padded_ifmap_elements(cfg: ConvLayerConfig) -> int:
    return cfg.B * cfg.C_i * cfg.H_p * cfg.W_p


def filter_elements(cfg: ConvLayerConfig) -> int:
    return cfg.C_o * cfg.C_i * cfg.H_f * cfg.W_f
