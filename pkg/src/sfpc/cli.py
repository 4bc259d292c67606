"""``sfpc`` command line: compress, decompress, stats, train, perf, selftest.

Exit codes: 0 success, 1 usage or input error, 2 corrupt stream,
3 numeric failure (non-finite data, divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import gecko, packer, perfmodel, statsbench
from .errors import ContractError, SFPError
from .floatcore import get_format


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _widths_from_log(path, tensor=None) -> int:
    """Last width recorded in a bitlength trajectory or a width log."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ContractError(f"{path}: empty controller log")
    if "tensor_id" in rows[0]:
        if tensor is None:
            raise ContractError(f"{path} holds per-tensor bitlengths; pass --tensor")
        picked = [r for r in rows if r["tensor_id"] == tensor]
        if not picked:
            raise ContractError(f"{path}: no entries for tensor {tensor!r}")
        return int(math.ceil(float(picked[-1]["n"])))
    if "width" in rows[0]:
        return int(rows[-1]["width"])
    raise ContractError(f"{path}: not a bitlength or width log")


def _stats(bits, fmt, man_width, signless, variant, bias) -> dict:
    acc = packer.size_account(bits, fmt, man_width, signless, variant, bias)
    exps = ((np.asarray(bits).ravel() >> fmt.m) & 0xFF).astype(np.int64)
    exp_acc = gecko.tensor_account(exps, variant, bias)
    return {
        "values": acc.values,
        "format": fmt.name,
        "variant": gecko.get_variant(variant).name.lower(),
        "mantissa_width": man_width,
        "signless": signless,
        "stream_bits": acc.total_bits,
        "raw_bits": acc.raw_bits,
        "ratio": acc.ratio,
        "exponent_ratio": exp_acc.ratio,
        "exponent_M": exp_acc.M,
        "exponent_C": exp_acc.C,
        "exponent_O": exp_acc.O,
        "js_bits": packer.js_encode(bits, fmt),
    }


def _print_stats(stats, stream):
    for k, v in stats.items():
        print(f"{k}: {v!r}" if isinstance(v, float) else f"{k}: {v}", file=stream)


def cmd_compress(args) -> int:
    bits, fmt, shape = packer.read_tensor(args.input, args.format, args.shape)
    if args.width_from:
        man_width = _widths_from_log(args.width_from, args.tensor)
    else:
        man_width = fmt.m if args.man_width is None else args.man_width
    block = packer.compress(
        bits, fmt, man_width, args.signless, args.variant, bias=args.bias,
        allow_nonfinite=args.allow_nonfinite, shape=shape, jobs=args.jobs,
    )
    packer.write_container(args.output, block)
    if not args.quiet:
        _print_stats(_stats(bits, fmt, man_width, args.signless, args.variant, args.bias), sys.stderr)
    return 0


def cmd_decompress(args) -> int:
    block = packer.read_container(args.input)
    table = None
    if args.table:
        table = json.loads(Path(args.table).read_text())
    bits = packer.decompress(block, mantissa_table=table)
    packer.write_tensor(args.output, bits, block.header.source_format)
    return 0


def cmd_stats(args) -> int:
    if args.sweep:
        dists = statsbench.default_sweep(args.size, args.seed)
        if args.trace:
            dists.append(statsbench.SyntheticDistribution("trace", trace_path=args.trace, tensor=args.tensor))
        rows = statsbench.ratio_sweep(dists, args.variant, args.bias)
        statsbench.write_sweep(args.sweep, rows)
        for r in rows:
            print(f"{r['source']}: ratio {r['ratio']:.6f}")
        return 0
    if not args.input:
        raise ContractError("stats needs an input tensor or --sweep")
    bits, fmt, _ = packer.read_tensor(args.input, args.format, args.shape)
    man_width = fmt.m if args.man_width is None else args.man_width
    stats = _stats(bits, fmt, man_width, args.signless, args.variant, args.bias)
    if args.json:
        print(json.dumps(stats, indent=2))
    else:
        _print_stats(stats, sys.stdout)
    return 0


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    cfg = TrainConfig.from_file(args.config)
    out = Path(args.output or cfg.out_dir or "run")
    cfg.out_dir = str(out)
    result = train(cfg)
    paths = result.write_outputs(out)
    final = result.final
    print(f"epochs: {len(result.history)}")
    print(f"train_acc: {final['train_acc']!r}")
    print(f"test_acc: {final['test_acc']!r}")
    print(f"mean_activation_width: {result.mean_activation_width!r}")
    if "weighted_bits" in final:
        print(f"weighted_bits: {final['weighted_bits']!r}")
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def cmd_perf(args) -> int:
    hw = perfmodel.HardwareConfig.from_json(args.hw) if args.hw else perfmodel.HardwareConfig()
    if args.suite:
        records = perfmodel.read_traffic(perfmodel.shipped_trace(args.suite))
    elif args.traffic:
        records = perfmodel.read_traffic(args.traffic)
    else:
        raise ContractError("perf needs a traffic CSV or --suite")
    report = perfmodel.run_report(records, hw)
    if args.csv:
        report.write_csv(args.csv)
    sys.stdout.write(report.to_json())
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run

    return 0 if run(sys.stdout, quick=not args.full) else 1


def _add_codec_flags(p, with_width=True):
    p.add_argument("--format", choices=("fp32", "bf16"), help="source format (default: from input)")
    p.add_argument("--shape", type=lambda s: tuple(int(x) for x in s.split(",")),
                   help="comma-separated shape for raw inputs")
    if with_width:
        p.add_argument("--man-width", type=int, help="mantissa bits kept (default: all)")
    p.add_argument("--variant", choices=("delta", "fixed"), default="delta")
    p.add_argument("--bias", type=int, default=gecko.DEFAULT_BIAS, help="FixedBias bias")
    p.add_argument("--signless", action="store_true", help="drop sign bits (non-negative data)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sfpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compress", help="pack a tensor into a container")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_codec_flags(p, with_width=False)
    width = p.add_mutually_exclusive_group()
    width.add_argument("--man-width", type=int, help="mantissa bits kept (default: all)")
    width.add_argument("--width-from", metavar="LOG", help="take the width from a controller log")
    p.add_argument("--tensor", help="tensor id to read from a per-tensor bitlength log")
    p.add_argument("--allow-nonfinite", action="store_true", help="pass Inf/NaN groups through")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-q", "--quiet", action="store_true", help="no stats on stderr")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="unpack a container")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help=".npy or raw (with .json sidecar)")
    p.add_argument("--table", help="JSON list of widths for table-indexed containers")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("stats", help="compression statistics or a ratio sweep")
    p.add_argument("input", nargs="?")
    _add_codec_flags(p)
    p.add_argument("--json", action="store_true")
    p.add_argument("--sweep", metavar="CSV", help="write a synthetic ratio sweep")
    p.add_argument("--trace", help="add a training trace to the sweep")
    p.add_argument("--tensor", help="restrict the trace to one tensor id")
    p.add_argument("--size", type=int, default=64 * 1024)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="run a training demo from a key=value config")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (default: out_dir or ./run)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("perf", help="roofline speedup and energy report")
    p.add_argument("traffic", nargs="?", help="layer traffic CSV")
    p.add_argument("--suite", choices=perfmodel.SUITES, help="use a shipped synthetic trace")
    p.add_argument("--hw", help="hardware JSON overriding the defaults")
    p.add_argument("--csv", help="write per-layer costs")
    p.set_defaults(func=cmd_perf)

    p = sub.add_parser("selftest", help="run the built-in property checks")
    p.add_argument("--full", action="store_true", help="larger sample sizes")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "format", None):
            get_format(args.format)
        return args.func(args)
    except SFPError as exc:
        print(f"sfpc: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"sfpc: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
