"""Command-line front end for the conv-GEMM traffic and performance model."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from .conv_gemm import (LAYER_FIELDS, ConfigError, ConvLayerConfig, im2col_shape, parse_tile,
                        select_tiling)
from .devices import dump_device, load_device, preset_names
from .estimate import CSV_COLUMNS, estimate_layer, estimate_network, format_csv, summary
from .layers import bundled_networks, load_layers, parse_layers
from .oracle import (DEFAULT_CAP, OracleCapExceeded, dram_unique, filter_tile_unique,
                     ifmap_tile_unique, l1_transactions)
from .perf import BOTTLENECKS, GpuSpec
from .scaling import load_options, scaling_study
from .traffic import L1Granularity, estimate_traffic

EXIT_OK, EXIT_CONFIG, EXIT_CAP = 0, 1, 2

SWEEP_BASE = ConvLayerConfig("sweep", B=256, C_i=256, H_i=13, W_i=13, C_o=128,
                             H_f=3, W_f=3, Strd=1, Pad=1)
SWEEP_PARAMS = ("C_o", "C_i", "HW", "B")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--device", default="titan-xp", help="preset name or device .ini file")
    p.add_argument("--batch", type=int, help="override mini-batch size of every layer")
    p.add_argument("--elem-bytes", type=int, default=4)
    p.add_argument("--l1-coalesce", type=int, help="L1 request granularity in bytes")
    p.add_argument("--tile", help="force CTA tiling, e.g. 128x64x4")
    p.add_argument("--act-cta", type=int, help="active CTAs per SM")
    p.add_argument("--fixed-miss-rate", type=float, help="fixed L2/DRAM miss rate (prior-model mode)")
    p.add_argument("--out", help="write CSV here instead of stdout")


def _layer_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layer", help=f"one record: {','.join(LAYER_FIELDS)}")
    p.add_argument("--file", help="layer file path or bundled network name")
    p.add_argument("--row", help="layer name within --file (default: first)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="convperf", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("estimate", help="estimate one layer")
    _common(p)
    _layer_source(p)

    p = sub.add_parser("network", help="estimate every layer of a layer file")
    _common(p)
    p.add_argument("file", help="layer file path or bundled network name")

    p = sub.add_parser("sweep", help="sweep one parameter of the baseline layer")
    _common(p)
    p.add_argument("param", choices=SWEEP_PARAMS)
    p.add_argument("values", type=int, nargs="+")
    p.add_argument("--oracle", action="store_true", help="add oracle columns")
    p.add_argument("--oracle-cap", type=int, default=DEFAULT_CAP)

    p = sub.add_parser("scale", help="GPU design-option scaling study")
    _common(p)
    p.add_argument("file", help="layer file path or bundled network name")
    p.add_argument("--options", help="design option .ini (default: bundled options)")

    p = sub.add_parser("oracle", help="compare analytical traffic against the oracle")
    _common(p)
    _layer_source(p)
    p.add_argument("--oracle-cap", type=int, default=DEFAULT_CAP)

    p = sub.add_parser("presets", help="list or show device presets and bundled networks")
    p.add_argument("name", nargs="?", help="preset to print in full")
    return ap


def _device(args) -> GpuSpec:
    gpu = load_device(args.device)
    if args.l1_coalesce is not None:
        gran = L1Granularity(args.l1_coalesce, min(gpu.l1_granularity.sector_bytes, args.l1_coalesce))
        gpu = replace(gpu, l1_granularity=gran)
    return gpu


def _batch(layers: List[ConvLayerConfig], args) -> List[ConvLayerConfig]:
    if args.batch is not None:
        layers = [c.with_batch(args.batch) for c in layers]
    return layers


def _one_layer(args) -> ConvLayerConfig:
    if (args.layer is None) == (args.file is None):
        raise ConfigError("give exactly one of --layer or --file")
    if args.layer is not None:
        text = ",".join(LAYER_FIELDS) + "\n" + args.layer
        layers = parse_layers(text, "--layer", args.elem_bytes)
    else:
        layers = load_layers(args.file, args.elem_bytes)
        if args.row is not None:
            layers = [c for c in layers if c.name == args.row]
            if not layers:
                raise ConfigError(f"no layer named {args.row!r} in {args.file}")
    return _batch(layers, args)[0]


def _kw(args) -> dict:
    return dict(tiling=parse_tile(args.tile) if args.tile else None, act_cta=args.act_cta,
                fixed_miss_rate=args.fixed_miss_rate)


def _emit(text: str, args) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _table(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _g(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def cmd_estimate(args) -> int:
    cfg = _one_layer(args)
    r = estimate_layer(cfg, _device(args), **_kw(args))
    _emit(format_csv([r]), args)
    # CSV owns stdout unless --out is given
    print(summary(r), file=sys.stdout if args.out else sys.stderr)
    return EXIT_OK


def cmd_network(args) -> int:
    layers = _batch(load_layers(args.file, args.elem_bytes), args)
    _emit(format_csv(estimate_network(layers, _device(args), **_kw(args))), args)
    return EXIT_OK


def _sweep_layer(param: str, value: int, elem_bytes: int) -> ConvLayerConfig:
    if param == "HW":
        return replace(SWEEP_BASE, H_i=value, W_i=value, elem_bytes=elem_bytes)
    return replace(SWEEP_BASE, **{param: value}, elem_bytes=elem_bytes)


def cmd_sweep(args) -> int:
    gpu = _device(args)
    kw = _kw(args)
    header = ["param", "value", *CSV_COLUMNS, "tpl_l1", "tpl_l2"]
    if args.oracle:
        header += ["oracle_mli_ifmap", "oracle_l2_tile_elements", "oracle_dram_bytes"]
    rows = []
    for v in args.values:
        cfg = _sweep_layer(args.param, v, args.elem_bytes)
        if args.batch is not None and args.param != "B":
            cfg = cfg.with_batch(args.batch)
        r = estimate_layer(cfg, gpu, **kw)
        row = [args.param, str(v), *r.csv_row(), _g(r.traffic.tpl_l1), _g(r.traffic.tpl_l2)]
        if args.oracle:
            l1 = l1_transactions(cfg, r.tiling, gpu.l1_granularity, operand="ifmap",
                                 cap=args.oracle_cap)
            ifm = ifmap_tile_unique(cfg, r.tiling, args.oracle_cap)
            l2 = _interior_mean(ifm, cfg, r.tiling) + filter_tile_unique(cfg, r.tiling, 0, 0)
            dram = float(dram_unique(cfg, r.tiling, args.oracle_cap))
            row += [_g(float(l1.mli)), _g(l2), _g(dram)]
        rows.append(row)
    _emit(_table(header, rows), args)
    return EXIT_OK


def cmd_scale(args) -> int:
    layers = _batch(load_layers(args.file, args.elem_bytes), args)
    study = scaling_study(layers, _device(args), load_options(args.options), args.act_cta)
    header = ["option", "time_s", "speedup", *BOTTLENECKS]
    rows = [[s.option.name, _g(s.total_time), _g(s.speedup),
             *(str(s.bottlenecks[b]) for b in BOTTLENECKS)] for s in study]
    _emit(_table(header, rows), args)
    return EXIT_OK


def _interior_mean(tiles, cfg: ConvLayerConfig, tiling) -> float:
    """Mean unique count over tiles not clipped by the GEMM edge (all tiles if none are whole)."""
    shape = im2col_shape(cfg)
    full = tiles[:shape.M // tiling.blk_M, :shape.K // tiling.blk_K]
    return float((full if full.size else tiles).mean())


def _rel(analytical: float, oracle: float) -> float:
    if oracle == 0:
        return 0.0 if analytical == 0 else float("inf")
    return (analytical - oracle) / oracle


def cmd_oracle(args) -> int:
    cfg = _one_layer(args)
    gpu = _device(args)
    tiling = select_tiling(cfg.C_o, parse_tile(args.tile) if args.tile else None)
    gran = gpu.l1_granularity
    est = estimate_traffic(cfg, gran, tiling)
    cap = args.oracle_cap

    l1_if = l1_transactions(cfg, tiling, gran, operand="ifmap", cap=cap).mli
    fil = l1_transactions(cfg, tiling, gran, operand="filter", unit="sector", cap=cap)
    l2_oracle = _interior_mean(ifmap_tile_unique(cfg, tiling, cap), cfg, tiling) \
        + tiling.blk_N * tiling.blk_K
    l2_analytical = est.tpl_l2 / cfg.elem_bytes
    dram = float(dram_unique(cfg, tiling, cap))

    rows = [
        ("l1_mli_ifmap", est.mli_ifmap, l1_if),
        ("l1_mli_filter", est.mli_filter, fil.mli),
        ("l2_tile_elements", l2_analytical, l2_oracle),
        ("dram_bytes", est.t_dram_bytes, dram),
    ]
    _emit(_table(["level", "analytical", "oracle", "rel_error"],
                 [[n, _g(float(a)), _g(float(o)), _g(_rel(a, o))] for n, a, o in rows]), args)
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.name:
        sys.stdout.write(dump_device(load_device(args.name)))
        return EXIT_OK
    print("devices: " + " ".join(preset_names()))
    print("networks: " + " ".join(bundled_networks()))
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "network": cmd_network, "sweep": cmd_sweep,
            "scale": cmd_scale, "oracle": cmd_oracle, "presets": cmd_presets}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.cmd](args)
    except OracleCapExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CAP
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
