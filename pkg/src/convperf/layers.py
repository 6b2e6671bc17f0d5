"""Layer files: comma-separated layer lists with a header naming the ten fields."""

from __future__ import annotations

import csv
import io
from importlib import resources
from pathlib import Path
from typing import Iterable, List, Union

from .conv_gemm import LAYER_FIELDS, ConfigError, ConvLayerConfig


def bundled_networks() -> List[str]:
    files = resources.files("convperf.data").joinpath("networks").iterdir()
    return sorted(p.name[:-4] for p in files if p.name.endswith(".csv"))


def parse_layers(text: str, source: str = "<layers>", elem_bytes: int = 4) -> List[ConvLayerConfig]:
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), 1)
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ConfigError(f"{source}: no header row")
    header_no, header = lines[0]
    cols = [c.strip() for c in next(csv.reader([header]))]
    if tuple(cols) != LAYER_FIELDS:
        raise ConfigError(f"{source}:{header_no}: header must be {','.join(LAYER_FIELDS)}")

    layers = []
    seen = set()
    for lineno, ln in lines[1:]:
        rec = [c.strip() for c in next(csv.reader([ln]))]
        if len(rec) != len(LAYER_FIELDS):
            raise ConfigError(f"{source}:{lineno}: expected {len(LAYER_FIELDS)} fields, got {len(rec)}")
        name, *nums = rec
        try:
            vals = [int(v) for v in nums]
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: non-integer field in {ln!r}") from None
        if name in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate layer name {name!r}")
        seen.add(name)
        try:
            layers.append(ConvLayerConfig(name, *vals, elem_bytes=elem_bytes))
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
    return layers


def load_layers(spec: Union[str, Path], elem_bytes: int = 4) -> List[ConvLayerConfig]:
    """Load a layer file by path or a bundled network by name (e.g. ``googlenet``)."""
    path = Path(spec)
    if path.exists():
        return parse_layers(path.read_text(), str(path), elem_bytes)
    res = resources.files("convperf.data").joinpath("networks", f"{spec}.csv")
    if not res.is_file():
        raise ConfigError(f"no layer file or bundled network {str(spec)!r}; "
                          f"bundled: {bundled_networks()}")
    return parse_layers(res.read_text(), f"{spec}.csv", elem_bytes)


def format_layers(layers: Iterable[ConvLayerConfig]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LAYER_FIELDS)
    for layer in layers:
        w.writerow(layer.as_row())
    return buf.getvalue()
