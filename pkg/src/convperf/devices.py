"""Loading and saving GPU device files (flat INI) and the bundled presets."""

from __future__ import annotations

import configparser
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import List, Union

from .conv_gemm import ConfigError
from .perf import GpuSpec
from .traffic import L1Granularity

_INT_FIELDS = {"num_sm", "size_reg", "size_smem", "size_l2"}
_FLOAT_FIELDS = {f.name for f in fields(GpuSpec)} - _INT_FIELDS - {
    "name", "l1_granularity", "estimated"}


def preset_names() -> List[str]:
    files = resources.files("convperf.data").joinpath("devices").iterdir()
    return sorted(p.name[:-4] for p in files if p.name.endswith(".ini"))


def _parse(text: str, source: str) -> GpuSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    if "device" not in cp:
        raise ConfigError(f"{source}: missing [device] section")
    sec = cp["device"]
    kw = {"name": sec.get("name", Path(source).stem)}
    try:
        for key in _INT_FIELDS:
            kw[key] = int(float(sec[key]))
        for key in _FLOAT_FIELDS:
            kw[key] = float(sec[key])
        kw["l1_granularity"] = L1Granularity(
            int(sec.get("l1_coalesce_bytes", 128)), int(sec.get("l1_sector_bytes", 32)))
    except KeyError as e:
        raise ConfigError(f"{source}: missing device field {e.args[0]}") from None
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    unknown = set(sec) - set(kw) - {"l1_coalesce_bytes", "l1_sector_bytes"}
    if unknown:
        raise ConfigError(f"{source}: unknown device fields {sorted(unknown)}")
    if cp.has_option("provenance", "estimated"):
        kw["estimated"] = tuple(cp.get("provenance", "estimated").split())
    return GpuSpec(**kw)


def load_device(spec: Union[str, Path]) -> GpuSpec:
    """Load a preset by name (``titan-xp``, ``p100``, ``v100``) or a device file path."""
    path = Path(spec)
    if path.suffix == ".ini" or path.exists():
        if not path.exists():
            raise ConfigError(f"device file {path} not found")
        return _parse(path.read_text(), str(path))
    name = str(spec).lower()
    res = resources.files("convperf.data").joinpath("devices", f"{name}.ini")
    if not res.is_file():
        raise ConfigError(f"unknown device preset {spec!r}; choose from {preset_names()}")
    return _parse(res.read_text(), f"{name}.ini")


def dump_device(gpu: GpuSpec) -> str:
    lines = ["[device]", f"name = {gpu.name}"]
    for f in fields(GpuSpec):
        if f.name in _INT_FIELDS or f.name in _FLOAT_FIELDS:
            lines.append(f"{f.name} = {getattr(gpu, f.name)!r}")
    lines.append(f"l1_coalesce_bytes = {gpu.l1_granularity.coalesce_bytes}")
    lines.append(f"l1_sector_bytes = {gpu.l1_granularity.sector_bytes}")
    if gpu.estimated:
        lines += ["", "[provenance]", "estimated = " + " ".join(gpu.estimated)]
    return "\n".join(lines) + "\n"
