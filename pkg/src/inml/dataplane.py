"""Software data plane: match-action inference over encapsulated packets.

The control plane owns a set of immutable state snapshots.  Loading
tables or patching a single entry builds a brand-new snapshot with the
next epoch number and swaps one reference; packet processing grabs a
snapshot once and reads only from it, so an inference can never observe
half of an update.  Snapshots are plain frozen objects and the swap is a
single attribute assignment, which Python performs atomically; the lock
only serializes writers.

Inference itself is restricted to the primitives of ops.OP_WHITELIST.
Per neuron, weight*feature products accumulate in a saturating 64-bit
register, are rescaled once back to the Q-format, and the bias is added
in 32 bits; activations run on the same primitives.  Every step can
append its op tags to a trace list, which is how the restriction is
audited: a trace containing anything outside the whitelist means the
pipeline did something a match-action target could not.

Model shape is bounded (MAX_DEPTH layers, MAX_LAYER_WIDTH wide) and the
bounds are enforced when tables load, because the per-packet work is a
statically unrolled loop: a target with fixed stages has no way to run
data-dependent iteration counts.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from . import ops
from .approx import leaky_relu, relu, sigmoid_constants, sigmoid_taylor
from .compiler import TableEntrySet
from .fixedpoint import (
    I32_MAX,
    I32_MIN,
    FixedPointFormat,
    q_add,
    q_shift_round,
    saturate64,
)
from .wire import (
    FLAG_CLAMPED,
    FLAG_PADDED,
    FLAG_RESPONSE,
    FLAG_SATURATED,
    InferenceResult,
    WireError,
    decode_packet,
    encode_result,
)

MAX_LAYER_WIDTH = 64
MAX_DEPTH = 8


class MalformedEntriesError(ValueError):
    """Table entries that do not describe a complete, servable model."""


class UnknownKeyError(ValueError):
    """An entry update aimed at a key no loaded model contains."""


class PacketDropped(Exception):
    """A packet the pipeline refused, with the drop-counter reason."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


# Maps PacketDropped.reason to the PipelineStats counter it bumps.
DROP_COUNTERS = {
    "parse_error": "parse_errors",
    "lookup_miss": "lookup_misses",
    "feature_count_mismatch": "mismatch_drops",
    "output_count_mismatch": "mismatch_drops",
    "scale_mismatch": "mismatch_drops",
}


@dataclass(frozen=True)
class LoadedLayer:
    """One layer in servable form: raw int parameters, resolved activation."""

    in_width: int
    out_width: int
    weights: tuple[tuple[int, ...], ...]  # [neuron][input]
    biases: tuple[int, ...]
    act: tuple  # ('linear',) | ('relu',) | ('leaky', alpha_raw) | ('sigmoid', order)
    sig_constants: tuple[int, ...] | None  # pre-encoded polynomial constants


@dataclass(frozen=True)
class LoadedModel:
    model_id: int
    scale_bits: int
    layers: tuple[LoadedLayer, ...]

    @property
    def fmt(self) -> FixedPointFormat:
        return FixedPointFormat(self.scale_bits)

    @property
    def n_features(self) -> int:
        return self.layers[0].in_width

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].out_width


@dataclass(frozen=True)
class ControlPlaneState:
    """One immutable configuration epoch."""

    epoch: int
    models: Mapping[int, LoadedModel]


@dataclass
class PipelineStats:
    """Counters for one processing run.

    Conservation law: packets_out + parse_errors + lookup_misses +
    mismatch_drops == packets_in, always.  saturation_events and
    clamp_events count packets whose result raised the corresponding
    flag, not individual arithmetic steps.  op_counts is per-tag totals
    and is only populated when tracing was requested.
    """

    packets_in: int = 0
    packets_out: int = 0
    parse_errors: int = 0
    lookup_misses: int = 0
    mismatch_drops: int = 0
    saturation_events: int = 0
    clamp_events: int = 0
    op_counts: dict[str, int] = field(default_factory=dict)

    _COUNTERS = (
        "packets_in",
        "packets_out",
        "parse_errors",
        "lookup_misses",
        "mismatch_drops",
        "saturation_events",
        "clamp_events",
    )

    def total_ops(self) -> int:
        return sum(self.op_counts.values())

    def render_kv(self) -> str:
        lines = [f"{name}={getattr(self, name)}" for name in self._COUNTERS]
        for tag in sorted(self.op_counts):
            lines.append(f"op.{tag}={self.op_counts[tag]}")
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        names = list(self._COUNTERS) + [f"op.{t}" for t in sorted(self.op_counts)]
        values = [str(getattr(self, n)) for n in self._COUNTERS]
        values += [str(self.op_counts[t]) for t in sorted(self.op_counts)]
        return ",".join(names) + "\n" + ",".join(values) + "\n"


def _build_model(entries: TableEntrySet) -> LoadedModel:
    mid = entries.model_id
    meta = entries.meta
    if meta is None:
        raise MalformedEntriesError(f"model {mid}: no metadata entry")
    if meta.n_layers > MAX_DEPTH:
        raise MalformedEntriesError(
            f"model {mid}: {meta.n_layers} layers exceeds the limit of {MAX_DEPTH}"
        )
    for w in meta.widths:
        if w > MAX_LAYER_WIDTH:
            raise MalformedEntriesError(
                f"model {mid}: width {w} exceeds the limit of {MAX_LAYER_WIDTH}"
            )

    for key, raw in list(entries.weights.items()) + list(entries.biases.items()):
        if key[0] != mid:
            raise MalformedEntriesError(
                f"model {mid}: entry {key} belongs to model {key[0]}"
            )
        if not I32_MIN <= raw <= I32_MAX:
            raise MalformedEntriesError(
                f"model {mid}: entry {key} value {raw} does not fit 32 bits"
            )

    fmt = FixedPointFormat(meta.scale_bits)
    layers = []
    seen_w: set = set()
    seen_b: set = set()
    for l in range(meta.n_layers):
        in_w, out_w = meta.widths[l], meta.widths[l + 1]
        rows = []
        biases = []
        for n in range(out_w):
            row = []
            for i in range(in_w):
                key = (mid, l, n, i)
                if key not in entries.weights:
                    raise MalformedEntriesError(
                        f"model {mid}: missing weight layer {l} neuron {n} input {i}"
                    )
                seen_w.add(key)
                row.append(entries.weights[key])
            rows.append(tuple(row))
            bkey = (mid, l, n)
            if bkey not in entries.biases:
                raise MalformedEntriesError(
                    f"model {mid}: missing bias layer {l} neuron {n}"
                )
            seen_b.add(bkey)
            biases.append(entries.biases[bkey])

        act = meta.activations[l]
        constants = None
        if act[0] == "sigmoid":
            constants = tuple(sigmoid_constants(act[1], fmt))
        layers.append(
            LoadedLayer(in_w, out_w, tuple(rows), tuple(biases), act, constants)
        )

    extra_w = set(entries.weights) - seen_w
    if extra_w:
        raise MalformedEntriesError(
            f"model {mid}: weight entry {sorted(extra_w)[0]} is outside the "
            f"declared shape"
        )
    extra_b = set(entries.biases) - seen_b
    if extra_b:
        raise MalformedEntriesError(
            f"model {mid}: bias entry {sorted(extra_b)[0]} is outside the "
            f"declared shape"
        )

    return LoadedModel(mid, meta.scale_bits, tuple(layers))


class ControlPlane:
    """Serializes table writes and publishes immutable state snapshots."""

    def __init__(self):
        self._lock = threading.Lock()
        self._state = ControlPlaneState(0, MappingProxyType({}))

    def snapshot(self) -> ControlPlaneState:
        """The current epoch; safe to read from any thread, forever."""
        return self._state

    def load_tables(self, entry_sets: Iterable[TableEntrySet]) -> int:
        """Install or replace whole models; returns the new epoch.

        Entries are validated for completeness against their metadata
        before anything is published, so a bad file never half-loads.
        """
        built = [_build_model(es) for es in entry_sets]
        with self._lock:
            models = dict(self._state.models)
            for model in built:
                models[model.model_id] = model
            self._state = ControlPlaneState(
                self._state.epoch + 1, MappingProxyType(models)
            )
            return self._state.epoch

    def update_entry(self, key: tuple, raw: int) -> int:
        """Patch one weight or bias in place; returns the new epoch.

        Keys match the entry-set shapes: (model, layer, neuron, input)
        for a weight, (model, layer, neuron) for a bias.
        """
        if not isinstance(raw, int) or not I32_MIN <= raw <= I32_MAX:
            raise ValueError(f"raw value {raw!r} does not fit 32 bits")
        if len(key) not in (3, 4):
            raise UnknownKeyError(
                f"keys have 4 fields (weight) or 3 (bias), got {key!r}"
            )

        with self._lock:
            state = self._state
            mid = key[0]
            model = state.models.get(mid)
            if model is None:
                raise UnknownKeyError(f"no model {mid} is loaded")
            l = key[1]
            if not 0 <= l < len(model.layers):
                raise UnknownKeyError(f"model {mid} has no layer {l}")
            layer = model.layers[l]
            n = key[2]
            if not 0 <= n < layer.out_width:
                raise UnknownKeyError(f"model {mid} layer {l} has no neuron {n}")

            if len(key) == 4:
                i = key[3]
                if not 0 <= i < layer.in_width:
                    raise UnknownKeyError(
                        f"model {mid} layer {l} neuron {n} has no input {i}"
                    )
                row = layer.weights[n][:i] + (raw,) + layer.weights[n][i + 1 :]
                weights = layer.weights[:n] + (row,) + layer.weights[n + 1 :]
                new_layer = LoadedLayer(
                    layer.in_width, layer.out_width, weights, layer.biases,
                    layer.act, layer.sig_constants,
                )
            else:
                biases = layer.biases[:n] + (raw,) + layer.biases[n + 1 :]
                new_layer = LoadedLayer(
                    layer.in_width, layer.out_width, layer.weights, biases,
                    layer.act, layer.sig_constants,
                )

            new_model = LoadedModel(
                mid, model.scale_bits, model.layers[:l] + (new_layer,) + model.layers[l + 1 :]
            )
            models = dict(state.models)
            models[mid] = new_model
            self._state = ControlPlaneState(
                state.epoch + 1, MappingProxyType(models)
            )
            return self._state.epoch


def _forward(
    model: LoadedModel, features: Sequence[int], trace: list | None
) -> tuple[list[int], bool, bool]:
    """Fixed-point forward pass; returns (outputs, saturated, clamped)."""
    fmt = model.fmt
    scale = model.scale_bits
    saturated = False
    clamped = False
    vals: Sequence[int] = features

    for layer in model.layers:
        nxt = []
        for n in range(layer.out_width):
            row = layer.weights[n]
            acc = 0
            for i in range(layer.in_width):
                if trace is not None:
                    trace.append(ops.TABLE_LOOKUP)
                    trace.append(ops.MUL)
                    trace.append(ops.ADD)
                step = saturate64(acc + row[i] * vals[i])
                acc = step.raw
                saturated |= step.saturated
            # one rescale for the whole dot product, then the bias
            rescaled = q_shift_round(acc, scale)
            saturated |= rescaled.saturated
            if trace is not None:
                trace.extend(ops.RESCALE_TAGS)
                trace.append(ops.TABLE_LOOKUP)
                trace.append(ops.ADD)
            pre = q_add(rescaled.raw, layer.biases[n])
            saturated |= pre.saturated
            x = pre.raw

            act = layer.act
            if act[0] == "linear":
                out = x
            elif act[0] == "relu":
                out = relu(x, trace)
            elif act[0] == "leaky":
                if trace is not None:
                    trace.append(ops.TABLE_LOOKUP)
                r = leaky_relu(x, act[1], fmt, trace)
                saturated |= r.saturated
                out = r.raw
            else:
                if trace is not None:
                    trace.extend([ops.TABLE_LOOKUP] * len(layer.sig_constants))
                r = sigmoid_taylor(x, act[1], fmt, layer.sig_constants, trace)
                saturated |= r.saturated
                clamped |= r.clamped
                out = r.raw
            nxt.append(out)
        vals = nxt
    return list(vals), saturated, clamped


def process_packet(
    frame: bytes, state: ControlPlaneState, trace: list | None = None
) -> bytes:
    """Run one request through the pipeline; returns the result packet.

    Raises PacketDropped for anything refused.  All validation reads one
    state snapshot, so a packet sees exactly one configuration epoch.
    """
    try:
        packet = decode_packet(frame)
    except WireError as exc:
        raise PacketDropped("parse_error", str(exc)) from exc
    if isinstance(packet, InferenceResult):
        raise PacketDropped("parse_error", "result packet on the request path")

    model = state.models.get(packet.model_id)
    if model is None:
        raise PacketDropped("lookup_miss", f"no model {packet.model_id} is loaded")
    if packet.scale != model.scale_bits:
        raise PacketDropped(
            "scale_mismatch",
            f"packet scale {packet.scale}, model scale {model.scale_bits}",
        )
    if packet.feature_cnt != model.n_features:
        raise PacketDropped(
            "feature_count_mismatch",
            f"packet carries {packet.feature_cnt} features, model takes "
            f"{model.n_features}",
        )
    if packet.output_cnt not in (0, model.n_outputs):
        # 0 means the sender did not pre-declare an output count
        raise PacketDropped(
            "output_count_mismatch",
            f"packet expects {packet.output_cnt} outputs, model produces "
            f"{model.n_outputs}",
        )

    if trace is not None:
        trace.append(ops.TABLE_LOOKUP)  # model metadata fetch
    outputs, saturated, clamped = _forward(model, packet.features, trace)

    flags = FLAG_RESPONSE | (packet.flags & FLAG_PADDED)
    if saturated:
        flags |= FLAG_SATURATED
    if clamped:
        flags |= FLAG_CLAMPED
    result = InferenceResult(
        packet.model_id, packet.scale, flags, tuple(outputs), packet.payload
    )
    return encode_result(result)


def op_trace(frame: bytes, state: ControlPlaneState) -> list[str]:
    """The op tag sequence one packet induces; drops propagate."""
    tags: list[str] = []
    process_packet(frame, state, tags)
    return tags


def process_stream(
    frames: Iterable[bytes], state: ControlPlaneState, trace: bool = False
) -> tuple[list[bytes], PipelineStats]:
    """Run many packets against one snapshot, collecting statistics."""
    stats = PipelineStats()
    outputs: list[bytes] = []
    for frame in frames:
        stats.packets_in += 1
        tags: list | None = [] if trace else None
        try:
            out = process_packet(frame, state, tags)
        except PacketDropped as drop:
            counter = DROP_COUNTERS[drop.reason]
            setattr(stats, counter, getattr(stats, counter) + 1)
            continue
        outputs.append(out)
        stats.packets_out += 1
        flags = out[6]  # flags byte of the result header
        if flags & FLAG_SATURATED:
            stats.saturation_events += 1
        if flags & FLAG_CLAMPED:
            stats.clamp_events += 1
        if tags is not None:
            for tag in tags:
                stats.op_counts[tag] = stats.op_counts.get(tag, 0) + 1
    return outputs, stats
