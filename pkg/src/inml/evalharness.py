"""Quantization error and overhead studies, plus synthetic traffic.

Three studies, each emitting CSV rows:

  * normalized MSE of the fixed-point pipeline against the float model,
    swept over fractional bit counts;
  * the same error swept over sigmoid polynomial orders;
  * goodput as a function of per-packet feature overhead, from a closed
    form, next to a relative software processing rate.

Normalized MSE is mean squared error divided by the population variance
of the reference outputs, so 1.0 means "no better than predicting the
mean".  Every study is deterministic for a fixed seed: identical calls
produce byte-identical CSV.  That rules out wall clocks, so the software
processing rate is packets per million primitive ops (from op traces),
a stable stand-in for packets per second that only supports relative
comparisons between rows of the same run.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace

from .approx import VALID_ORDERS, Activation
from .compiler import Dataset, LayerSpec, ModelSpec, float_forward, quantize_model
from .dataplane import MAX_LAYER_WIDTH, ControlPlane, process_stream
from .fixedpoint import MAX_SCALE_BITS, FixedPointFormat, decode, encode
from .wire import FLAG_PADDED, InferenceRequest, decode_packet, encode_request

DEFAULT_SEED = 42
DEFAULT_LINE_RATE = 100e9  # bits per second
DEFAULT_PAYLOAD_BYTES = 1500  # standard MTU
FIXED_HEADER_BYTES = 7


class EvalError(ValueError):
    """A study asked of data that cannot support it."""


@dataclass(frozen=True)
class EvalRow:
    """One grid point of an error study."""

    x: int  # frac_bits or taylor_order
    normalized_mse: float
    n: int
    seed: int


@dataclass(frozen=True)
class ThroughputRow:
    """One grid point of the overhead study."""

    overhead_bits: int
    throughput_gbps: float
    sim_pkts_per_sec: float


@dataclass(frozen=True)
class ThroughputParams:
    line_rate: float = DEFAULT_LINE_RATE  # bits per second
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES
    fixed_header_bytes: int = FIXED_HEADER_BYTES

    def __post_init__(self):
        if self.line_rate <= 0 or not math.isfinite(self.line_rate):
            raise ValueError(f"line rate must be positive, got {self.line_rate!r}")
        if self.payload_bytes <= 0:
            raise ValueError(f"payload must be positive, got {self.payload_bytes}")
        if self.fixed_header_bytes <= 0:
            raise ValueError(
                f"fixed header must be positive, got {self.fixed_header_bytes}"
            )


def normalized_mse(predictions, targets) -> float:
    """mean((p - t)**2) / population_variance(t)."""
    if len(predictions) != len(targets):
        raise EvalError(
            f"{len(predictions)} predictions vs {len(targets)} targets"
        )
    n = len(targets)
    if n == 0:
        raise EvalError("cannot score empty vectors")
    mean_t = math.fsum(targets) / n
    var_t = math.fsum((t - mean_t) ** 2 for t in targets) / n
    if var_t == 0.0:
        raise EvalError("target variance is zero; normalized MSE is undefined")
    mse = math.fsum((p - t) ** 2 for p, t in zip(predictions, targets)) / n
    return mse / var_t


def synth_benchmark(
    spec: ModelSpec,
    n: int = 1000,
    seed: int = DEFAULT_SEED,
    noise: float = 0.01,
    input_range: tuple[float, float] = (-1.0, 1.0),
) -> Dataset:
    """Synthetic dataset: uniform features, float-model targets plus noise.

    Draw order is fixed (all features of a row, then its target noise),
    so a seed pins the dataset bytes forever.
    """
    lo, hi = input_range
    if n < 1:
        raise EvalError(f"need at least one sample, got {n}")
    if not lo < hi:
        raise EvalError(f"empty input range [{lo}, {hi}]")
    rng = random.Random(seed)
    features = []
    targets = []
    for _ in range(n):
        row = tuple(rng.uniform(lo, hi) for _ in range(spec.n_features))
        clean = float_forward(spec, row)
        features.append(row)
        targets.append(tuple(y + rng.gauss(0.0, noise) for y in clean))
    return Dataset(tuple(features), tuple(targets))


def gen_traffic(
    spec: ModelSpec,
    n: int,
    seed: int,
    input_range: tuple[float, float] = (-1.0, 1.0),
    scale_bits: int | None = None,
) -> list[bytes]:
    """n request frames with uniform features quantized at the model scale."""
    lo, hi = input_range
    if n < 1:
        raise EvalError(f"need at least one frame, got {n}")
    if not lo < hi:
        raise EvalError(f"empty input range [{lo}, {hi}]")
    s = spec.scale_bits if scale_bits is None else scale_bits
    fmt = FixedPointFormat(s)
    rng = random.Random(seed)
    frames = []
    for _ in range(n):
        feats = tuple(
            encode(rng.uniform(lo, hi), fmt).raw for _ in range(spec.n_features)
        )
        req = InferenceRequest(spec.model_id, spec.n_outputs, s, 0, feats)
        frames.append(encode_request(req))
    return frames


def _pipeline_outputs(spec: ModelSpec, dataset: Dataset, scale_bits: int) -> list[float]:
    """Quantize, serve, and run every dataset row; decoded flat outputs."""
    entries = quantize_model(spec, scale_bits)
    plane = ControlPlane()
    plane.load_tables([entries])
    state = plane.snapshot()
    fmt = FixedPointFormat(scale_bits)

    frames = []
    for row in dataset.features:
        feats = tuple(encode(v, fmt).raw for v in row)
        req = InferenceRequest(spec.model_id, spec.n_outputs, scale_bits, 0, feats)
        frames.append(encode_request(req))
    results, stats = process_stream(frames, state)
    if stats.packets_out != len(frames):
        raise EvalError(
            f"pipeline dropped {len(frames) - stats.packets_out} evaluation packets"
        )
    flat = []
    for res in results:
        packet = decode_packet(res)
        flat.extend(decode(v, fmt) for v in packet.outputs)
    return flat


def _float_references(spec: ModelSpec, dataset: Dataset) -> list[float]:
    flat = []
    for row in dataset.features:
        flat.extend(float_forward(spec, row))
    return flat


def eval_mse_vs_fracbits(
    spec: ModelSpec,
    dataset: Dataset,
    bits: list[int],
    seed: int = DEFAULT_SEED,
) -> list[EvalRow]:
    """Pipeline error against the float model, per fractional bit count.

    Rows come back in the order of `bits`.  The dataset's features drive
    both the pipeline and the float reference; its target columns are
    not consulted (this measures quantization error, not model fit).
    """
    if not bits:
        raise EvalError("empty bits grid")
    for s in bits:
        if not 1 <= s <= MAX_SCALE_BITS:
            raise EvalError(f"fractional bits must be in [1, {MAX_SCALE_BITS}], got {s}")
    if dataset.n_features != spec.n_features:
        raise EvalError(
            f"dataset has {dataset.n_features} features, model takes {spec.n_features}"
        )
    refs = _float_references(spec, dataset)
    rows = []
    for s in bits:
        preds = _pipeline_outputs(spec, dataset, s)
        rows.append(EvalRow(s, normalized_mse(preds, refs), len(dataset.features), seed))
    return rows


def _with_sigmoid_order(spec: ModelSpec, order: int) -> ModelSpec:
    layers = tuple(
        replace(layer, activation=Activation.sigmoid(order))
        if layer.activation.kind == "sigmoid"
        else layer
        for layer in spec.layers
    )
    return ModelSpec(spec.model_id, spec.scale_bits, layers)


def eval_mse_vs_order(
    spec: ModelSpec,
    dataset: Dataset,
    orders: list[int],
    seed: int = DEFAULT_SEED,
) -> list[EvalRow]:
    """Pipeline error against the float model, per sigmoid polynomial order.

    Every sigmoid layer is re-pointed at the requested order; the float
    reference always uses the true logistic curve, so a row measures the
    combined polynomial and quantization gap at the model's own scale.
    """
    if not orders:
        raise EvalError("empty orders grid")
    for order in orders:
        if order not in VALID_ORDERS:
            raise EvalError(f"order must be one of {VALID_ORDERS}, got {order}")
    if not any(layer.activation.kind == "sigmoid" for layer in spec.layers):
        raise EvalError("model has no sigmoid layer; order sweep is meaningless")
    if dataset.n_features != spec.n_features:
        raise EvalError(
            f"dataset has {dataset.n_features} features, model takes {spec.n_features}"
        )
    refs = _float_references(spec, dataset)
    rows = []
    for order in orders:
        variant = _with_sigmoid_order(spec, order)
        preds = _pipeline_outputs(variant, dataset, spec.scale_bits)
        rows.append(
            EvalRow(order, normalized_mse(preds, refs), len(dataset.features), seed)
        )
    return rows


def throughput_gbps(params: ThroughputParams, overhead_bits: int) -> float:
    """Goodput when every payload drags a header plus feature block.

    T(h) = R * P / (P + F + ceil(h / 8)), reported in Gbit/s.
    """
    if overhead_bits < 0:
        raise EvalError(f"overhead must be non-negative, got {overhead_bits}")
    p = params.payload_bytes
    denom = p + params.fixed_header_bytes + (overhead_bits + 7) // 8
    return params.line_rate * p / denom / 1e9


def _sim_rate(overhead_bits: int, n_packets: int, seed: int) -> float:
    """Relative processing rate for packets of the given feature overhead.

    Builds a single-output linear model whose input width matches the
    feature block (capped at the pipeline's width limit, remainder
    carried as padding payload), runs traced inference, and reports
    packets per million primitive ops.  Deterministic; only ratios
    between rows are meaningful.
    """
    width = min(max(1, overhead_bits // 32), MAX_LAYER_WIDTH)
    rng = random.Random(seed)
    weights = (tuple(rng.uniform(-0.1, 0.1) for _ in range(width)),)
    spec = ModelSpec(
        1, 16, (LayerSpec(width, 1, Activation.linear(), weights, (0.0,)),)
    )
    entries = quantize_model(spec)
    plane = ControlPlane()
    plane.load_tables([entries])
    state = plane.snapshot()

    fmt = FixedPointFormat(16)
    pad = max(0, (overhead_bits + 7) // 8 - 4 * width)
    frames = []
    for _ in range(n_packets):
        feats = tuple(encode(rng.uniform(-1.0, 1.0), fmt).raw for _ in range(width))
        flags = FLAG_PADDED if pad else 0
        req = InferenceRequest(1, 1, 16, flags, feats, b"\x00" * pad)
        frames.append(encode_request(req))
    _, stats = process_stream(frames, state, trace=True)
    return stats.packets_out * 1e6 / stats.total_ops()


def eval_throughput_overhead(
    params: ThroughputParams,
    overheads: list[int],
    seed: int = DEFAULT_SEED,
    sim_packets: int = 64,
) -> list[ThroughputRow]:
    """Analytic goodput plus the relative software rate, per overhead."""
    if not overheads:
        raise EvalError("empty overhead grid")
    rows = []
    for h in overheads:
        rows.append(
            ThroughputRow(h, throughput_gbps(params, h), _sim_rate(h, sim_packets, seed))
        )
    return rows


# ---------------------------------------------------------------------------
# CSV rendering


def render_eval_csv(rows: list[EvalRow], x_name: str) -> str:
    lines = [f"{x_name},normalized_mse,n,seed"]
    for row in rows:
        lines.append(f"{row.x},{row.normalized_mse!r},{row.n},{row.seed}")
    return "\n".join(lines) + "\n"


def render_throughput_csv(rows: list[ThroughputRow]) -> str:
    lines = ["overhead_bits,throughput_gbps,sim_pkts_per_sec"]
    for row in rows:
        lines.append(
            f"{row.overhead_bits},{row.throughput_gbps!r},{row.sim_pkts_per_sec!r}"
        )
    return "\n".join(lines) + "\n"
