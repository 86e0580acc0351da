"""Command-line front end: fit, quantize, emit tables, generate traffic,
run the pipeline, trace a packet, and run the error/overhead studies.

Exit codes: 0 success, 1 usage error, 2 data error (bad file contents,
missing paths, refused packets).  Every output file is written to a
temporary name and renamed into place, so a failing command never leaves
a partial artifact behind.  All randomness flows from --seed; repeating
an invocation reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

from .compiler import (
    emit_table_entries,
    fit_linear,
    parse_dataset,
    parse_model,
    parse_table_entries,
    quantize_model,
    render_model,
)
from .dataplane import ControlPlane, PacketDropped, op_trace, process_stream
from .evalharness import (
    ThroughputParams,
    eval_mse_vs_fracbits,
    eval_mse_vs_order,
    eval_throughput_overhead,
    gen_traffic,
    render_eval_csv,
    render_throughput_csv,
    synth_benchmark,
)
from .fixedpoint import MAX_SCALE_BITS
from .wire import read_frames, write_frames

DEFAULT_OVERHEADS = "32,64,128,256,512,1024,2048,4096"


class _Parser(argparse.ArgumentParser):
    """argparse reserves status 2 for usage errors; this tool uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _float_pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi floats, got {text!r}")


def _scale_arg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an int, got {text!r}")
    if not 0 <= value <= MAX_SCALE_BITS:
        raise argparse.ArgumentTypeError(
            f"scale must be in [0, {MAX_SCALE_BITS}], got {value}"
        )
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="root of all randomness")
    common.add_argument(
        "--scale",
        type=_scale_arg,
        default=None,
        metavar="BITS",
        help=f"fractional bits, 0..{MAX_SCALE_BITS} (default: the model's own)",
    )
    common.add_argument("--verbose", action="store_true", help="progress on stderr")

    parser = _Parser(prog="inml", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="least-squares fit a linear model")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--ridge", type=float, default=0.0, help="L2 penalty on weights")
    p.add_argument("--model-id", type=int, default=1, help="id stamped on the model")
    p.set_defaults(func=_cmd_fit, inputs=("data",), outputs=("out",))

    p = sub.add_parser("quantize", parents=[common], help="compile a model to table entries")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--out", required=True, help="table entry file to write")
    p.set_defaults(func=_cmd_quantize, inputs=("model",), outputs=("out",))

    p = sub.add_parser(
        "emit-tables", parents=[common], help="re-emit table entries in canonical order"
    )
    p.add_argument(
        "--tables", required=True, action="append", help="entry file (repeatable)"
    )
    p.add_argument("--out", required=True, help="canonical entry file to write")
    p.set_defaults(func=_cmd_emit_tables, inputs=("tables",), outputs=("out",))

    p = sub.add_parser("gen-traffic", parents=[common], help="generate request frames")
    p.add_argument("--model", required=True, help="model file the traffic targets")
    p.add_argument("--count", type=int, required=True, help="number of frames")
    p.add_argument(
        "--range", type=_float_pair, default=(-1.0, 1.0), metavar="LO,HI",
        help="uniform feature range (default -1,1)",
    )
    p.add_argument("--out", required=True, help="frame file to write")
    p.set_defaults(func=_cmd_gen_traffic, inputs=("model",), outputs=("out",))

    p = sub.add_parser("run", parents=[common], help="run frames through the pipeline")
    p.add_argument(
        "--tables", required=True, action="append", help="entry file (repeatable)"
    )
    p.add_argument("--in", dest="infile", required=True, help="request frame file")
    p.add_argument("--out", required=True, help="result frame file to write")
    p.add_argument("--stats", default=None, help="counter file (.csv or key=value)")
    p.add_argument("--trace", action="store_true", help="count ops while running")
    p.set_defaults(func=_cmd_run, inputs=("tables", "infile"), outputs=("out", "stats"))

    p = sub.add_parser("trace", parents=[common], help="dump one packet's op tags")
    p.add_argument(
        "--tables", required=True, action="append", help="entry file (repeatable)"
    )
    p.add_argument("--in", dest="infile", required=True, help="request frame file")
    p.add_argument("--index", type=int, default=0, help="frame to trace (default 0)")
    p.set_defaults(func=_cmd_trace, inputs=("tables", "infile"), outputs=())

    ev = sub.add_parser("eval", help="error and overhead studies")
    evsub = ev.add_subparsers(dest="study", required=True, parser_class=_Parser)

    p = evsub.add_parser(
        "mse-vs-bits", parents=[common], help="normalized MSE per fractional bit count"
    )
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--data", default=None, help="dataset CSV (default: synthetic)")
    p.add_argument(
        "--bits", type=_int_list, default=[4, 8, 12, 16], metavar="LIST",
        help="fractional bit grid (default 4,8,12,16)",
    )
    p.add_argument("--out", required=True, help="CSV to write")
    p.set_defaults(func=_cmd_mse_vs_bits, inputs=("model", "data"), outputs=("out",))

    p = evsub.add_parser(
        "mse-vs-order", parents=[common], help="normalized MSE per sigmoid order"
    )
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--data", default=None, help="dataset CSV (default: synthetic)")
    p.add_argument(
        "--orders", type=_int_list, default=[1, 3, 5], metavar="LIST",
        help="sigmoid polynomial order grid (default 1,3,5)",
    )
    p.add_argument("--out", required=True, help="CSV to write")
    p.set_defaults(func=_cmd_mse_vs_order, inputs=("model", "data"), outputs=("out",))

    p = evsub.add_parser(
        "throughput", parents=[common], help="goodput per feature-block overhead"
    )
    p.add_argument(
        "--overheads", type=_int_list, default=_int_list(DEFAULT_OVERHEADS),
        metavar="LIST", help=f"overhead bits grid (default {DEFAULT_OVERHEADS})",
    )
    p.add_argument(
        "--payload-bytes", type=int, default=1500, help="payload size (default 1500)"
    )
    p.add_argument(
        "--line-rate-gbps", type=float, default=100.0, help="link rate (default 100)"
    )
    p.add_argument("--out", required=True, help="CSV to write")
    p.set_defaults(func=_cmd_throughput, inputs=(), outputs=("out",))

    return parser


# ---------------------------------------------------------------------------
# Shared plumbing


def _check_paths(args):
    """Fail fast on missing inputs or unwritable output directories."""
    for attr in args.inputs:
        value = getattr(args, attr, None)
        if value is None:
            continue
        paths = value if isinstance(value, list) else [value]
        for path in paths:
            if not os.path.isfile(path):
                raise FileNotFoundError(f"no such file: {path}")
    for attr in args.outputs:
        path = getattr(args, attr, None)
        if path is None:
            continue
        parent = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(parent):
            raise FileNotFoundError(f"no such directory: {parent}")


def _write_atomic(path: str, data) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    parent = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".inml-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _note(args, message: str):
    if args.verbose:
        print(message, file=sys.stderr)


def _load_model(args):
    spec = parse_model(_read_text(args.model))
    _note(args, f"model {spec.model_id}: {spec.n_features} features, "
                f"{len(spec.layers)} layers, scale {spec.scale_bits}")
    return spec


def _load_entry_sets(paths: list[str]) -> list:
    merged = {}
    for path in paths:
        for mid, entries in parse_table_entries(_read_text(path)).items():
            if mid in merged:
                raise ValueError(f"model {mid} appears in more than one table file")
            merged[mid] = entries
    if not merged:
        raise ValueError("table files contain no entries")
    return [merged[mid] for mid in sorted(merged)]


def _load_dataset_or_synth(args, spec):
    if args.data is not None:
        return parse_dataset(_read_text(args.data))
    _note(args, f"no --data given; synthesizing 1000 samples with seed {args.seed}")
    return synth_benchmark(spec, n=1000, seed=args.seed)


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_fit(args) -> int:
    dataset = parse_dataset(_read_text(args.data))
    scale = 16 if args.scale is None else args.scale
    spec = fit_linear(dataset, model_id=args.model_id, scale_bits=scale, ridge=args.ridge)
    _write_atomic(args.out, render_model(spec))
    _note(args, f"fit {dataset.n_features} -> {dataset.n_targets} over "
                f"{len(dataset.features)} samples")
    return 0


def _cmd_quantize(args) -> int:
    spec = _load_model(args)
    entries = quantize_model(spec, args.scale)
    _write_atomic(args.out, emit_table_entries([entries]))
    _note(args, f"{len(entries.weights)} weights, {len(entries.biases)} biases")
    return 0


def _cmd_emit_tables(args) -> int:
    entry_sets = _load_entry_sets(args.tables)
    _write_atomic(args.out, emit_table_entries(entry_sets))
    _note(args, f"{len(entry_sets)} model(s) re-emitted")
    return 0


def _cmd_gen_traffic(args) -> int:
    spec = _load_model(args)
    frames = gen_traffic(
        spec, args.count, args.seed, input_range=args.range, scale_bits=args.scale
    )
    _write_atomic(args.out, write_frames(frames))
    _note(args, f"{len(frames)} frames written")
    return 0


def _cmd_run(args) -> int:
    plane = ControlPlane()
    plane.load_tables(_load_entry_sets(args.tables))
    frames = read_frames(_read_bytes(args.infile))
    outputs, stats = process_stream(frames, plane.snapshot(), trace=args.trace)
    _write_atomic(args.out, write_frames(outputs))
    if args.stats is not None:
        text = stats.render_csv() if args.stats.endswith(".csv") else stats.render_kv()
        _write_atomic(args.stats, text)
    _note(args, f"{stats.packets_out}/{stats.packets_in} packets answered")
    return 0


def _cmd_trace(args) -> int:
    plane = ControlPlane()
    plane.load_tables(_load_entry_sets(args.tables))
    frames = read_frames(_read_bytes(args.infile))
    if not 0 <= args.index < len(frames):
        raise ValueError(f"frame index {args.index} out of range (file has {len(frames)})")
    tags = op_trace(frames[args.index], plane.snapshot())
    sys.stdout.write("\n".join(tags) + "\n")
    return 0


def _cmd_mse_vs_bits(args) -> int:
    spec = _load_model(args)
    dataset = _load_dataset_or_synth(args, spec)
    rows = eval_mse_vs_fracbits(spec, dataset, args.bits, seed=args.seed)
    _write_atomic(args.out, render_eval_csv(rows, "frac_bits"))
    return 0


def _cmd_mse_vs_order(args) -> int:
    spec = _load_model(args)
    dataset = _load_dataset_or_synth(args, spec)
    rows = eval_mse_vs_order(spec, dataset, args.orders, seed=args.seed)
    _write_atomic(args.out, render_eval_csv(rows, "taylor_order"))
    return 0


def _cmd_throughput(args) -> int:
    params = ThroughputParams(
        line_rate=args.line_rate_gbps * 1e9, payload_bytes=args.payload_bytes
    )
    rows = eval_throughput_overhead(params, args.overheads, seed=args.seed)
    _write_atomic(args.out, render_throughput_csv(rows))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        _check_paths(args)
        return args.func(args)
    except PacketDropped as drop:
        print(f"error: packet dropped ({drop.reason}): {drop}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
