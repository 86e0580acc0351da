"""Control plane epochs, packet processing, drops, stats, and op traces."""

import threading

import pytest

from inml import ops
from inml.compiler import TableEntrySet, TableMeta, parse_model, parse_table_entries, quantize_model
from inml.dataplane import (
    MAX_DEPTH,
    MAX_LAYER_WIDTH,
    ControlPlane,
    MalformedEntriesError,
    PacketDropped,
    PipelineStats,
    UnknownKeyError,
    op_trace,
    process_packet,
    process_stream,
)
from inml.fixedpoint import I32_MAX, FixedPointFormat, encode
from inml.wire import (
    FLAG_CLAMPED,
    FLAG_PADDED,
    FLAG_RESPONSE,
    FLAG_SATURATED,
    InferenceRequest,
    InferenceResult,
    decode_packet,
    encode_request,
    encode_result,
)

TWO_FEATURE = """\
model 1 scale=16
layer 0 in=2 out=1 act=linear
w 0 0 0.5
w 0 1 0.25
b 0 0.5
"""

IDENTITY = """\
model 2 scale=16
layer 0 in=1 out=1 act=linear
w 0 0 1.0
"""

SIGMOID = """\
model 3 scale=16
layer 0 in=1 out=1 act=sigmoid:3
w 0 0 1.0
"""


def plane_with(*texts) -> ControlPlane:
    plane = ControlPlane()
    plane.load_tables([quantize_model(parse_model(t)) for t in texts])
    return plane


def request_frame(model_id, feats, scale=16, ocnt=0, flags=0, payload=b"") -> bytes:
    fmt = FixedPointFormat(scale)
    raws = tuple(encode(f, fmt).raw for f in feats)
    return encode_request(
        InferenceRequest(model_id, ocnt, scale, flags, raws, payload)
    )


class TestProcessPacket:
    def test_two_feature_dot_product(self):
        state = plane_with(TWO_FEATURE).snapshot()
        out = decode_packet(process_packet(request_frame(1, [1.0, 2.0]), state))
        assert out.outputs == (98304,)  # 0.5*1 + 0.25*2 + 0.5 = 1.5
        assert out.model_id == 1
        assert out.scale == 16
        assert out.flags & FLAG_RESPONSE

    def test_identity_model_echoes_feature(self):
        state = plane_with(IDENTITY).snapshot()
        out = decode_packet(process_packet(request_frame(2, [0.75]), state))
        assert out.outputs == (49152,)

    def test_payload_carried_through(self):
        state = plane_with(IDENTITY).snapshot()
        frame = request_frame(2, [1.0], payload=b"\x01\x02opaque")
        out = decode_packet(process_packet(frame, state))
        assert out.payload == b"\x01\x02opaque"

    def test_padded_flag_propagates(self):
        state = plane_with(IDENTITY).snapshot()
        frame = request_frame(2, [1.0], flags=FLAG_PADDED, payload=b"\x00\x00")
        out = decode_packet(process_packet(frame, state))
        assert out.flags & FLAG_PADDED

    def test_saturation_sets_flag(self):
        state = plane_with(
            "model 4 scale=16\nlayer 0 in=1 out=1 act=linear\nw 0 0 16384.0\n"
        ).snapshot()
        out = decode_packet(process_packet(request_frame(4, [16384.0]), state))
        assert out.flags & FLAG_SATURATED
        assert out.outputs == (I32_MAX,)

    def test_clamp_sets_flag(self):
        state = plane_with(SIGMOID).snapshot()
        hot = decode_packet(process_packet(request_frame(3, [5.0]), state))
        cool = decode_packet(process_packet(request_frame(3, [0.5]), state))
        assert hot.flags & FLAG_CLAMPED
        assert not cool.flags & FLAG_CLAMPED

    def test_declared_output_count_accepted(self):
        state = plane_with(IDENTITY).snapshot()
        process_packet(request_frame(2, [1.0], ocnt=1), state)
        process_packet(request_frame(2, [1.0], ocnt=0), state)


class TestDrops:
    def test_garbage_is_parse_error(self):
        state = plane_with(IDENTITY).snapshot()
        with pytest.raises(PacketDropped) as exc:
            process_packet(b"\x00\x01", state)
        assert exc.value.reason == "parse_error"

    def test_result_packet_on_request_path(self):
        state = plane_with(IDENTITY).snapshot()
        frame = encode_result(InferenceResult(2, 16, FLAG_RESPONSE, (1,)))
        with pytest.raises(PacketDropped) as exc:
            process_packet(frame, state)
        assert exc.value.reason == "parse_error"

    def test_unknown_model_is_lookup_miss(self):
        state = plane_with(IDENTITY).snapshot()
        with pytest.raises(PacketDropped) as exc:
            process_packet(request_frame(999, [1.0]), state)
        assert exc.value.reason == "lookup_miss"

    def test_scale_mismatch(self):
        state = plane_with(IDENTITY).snapshot()
        with pytest.raises(PacketDropped) as exc:
            process_packet(request_frame(2, [1.0], scale=8), state)
        assert exc.value.reason == "scale_mismatch"

    def test_feature_count_mismatch(self):
        state = plane_with(IDENTITY).snapshot()
        with pytest.raises(PacketDropped) as exc:
            process_packet(request_frame(2, [1.0, 2.0]), state)
        assert exc.value.reason == "feature_count_mismatch"

    def test_output_count_mismatch(self):
        state = plane_with(IDENTITY).snapshot()
        with pytest.raises(PacketDropped) as exc:
            process_packet(request_frame(2, [1.0], ocnt=5), state)
        assert exc.value.reason == "output_count_mismatch"


class TestControlPlane:
    def test_epochs_count_up_from_zero(self):
        plane = ControlPlane()
        assert plane.snapshot().epoch == 0
        e1 = plane.load_tables([quantize_model(parse_model(IDENTITY))])
        e2 = plane.load_tables([quantize_model(parse_model(TWO_FEATURE))])
        assert (e1, e2) == (1, 2)
        assert set(plane.snapshot().models) == {1, 2}

    def test_reload_replaces_a_model(self):
        plane = plane_with(IDENTITY)
        doubled = IDENTITY.replace("w 0 0 1.0", "w 0 0 2.0")
        plane.load_tables([quantize_model(parse_model(doubled))])
        out = decode_packet(process_packet(request_frame(2, [1.0]), plane.snapshot()))
        assert out.outputs == (131072,)

    def test_old_snapshots_keep_serving_old_weights(self):
        plane = plane_with(IDENTITY)
        before = plane.snapshot()
        plane.update_entry((2, 0, 0, 0), encode(0.75, FixedPointFormat(16)).raw)
        after = plane.snapshot()
        frame = request_frame(2, [1.0])
        old = decode_packet(process_packet(frame, before))
        new = decode_packet(process_packet(frame, after))
        assert old.outputs == (65536,)
        assert new.outputs == (49152,)
        assert after.epoch == before.epoch + 1

    def test_update_bias_key_has_three_fields(self):
        plane = plane_with(IDENTITY)
        plane.update_entry((2, 0, 0), encode(0.5, FixedPointFormat(16)).raw)
        out = decode_packet(process_packet(request_frame(2, [1.0]), plane.snapshot()))
        assert out.outputs == (98304,)  # 1.0 + 0.5

    def test_last_writer_wins(self):
        plane = plane_with(IDENTITY)
        plane.update_entry((2, 0, 0, 0), 111)
        plane.update_entry((2, 0, 0, 0), 222)
        assert plane.snapshot().models[2].layers[0].weights[0][0] == 222

    @pytest.mark.parametrize(
        "key",
        [
            (99, 0, 0, 0),  # no such model
            (2, 5, 0, 0),  # no such layer
            (2, 0, 9, 0),  # no such neuron
            (2, 0, 0, 9),  # no such input
            (2, 5, 0),  # bias in a missing layer
            (2, 0),  # wrong arity
        ],
    )
    def test_update_rejects_unknown_keys(self, key):
        plane = plane_with(IDENTITY)
        with pytest.raises(UnknownKeyError):
            plane.update_entry(key, 0)

    def test_update_rejects_bad_raw(self):
        plane = plane_with(IDENTITY)
        with pytest.raises(ValueError):
            plane.update_entry((2, 0, 0, 0), 2**31)
        with pytest.raises(ValueError):
            plane.update_entry((2, 0, 0, 0), 0.5)

    def test_failed_load_changes_nothing(self):
        plane = plane_with(IDENTITY)
        before = plane.snapshot()
        good = quantize_model(parse_model(TWO_FEATURE))
        bad = parse_table_entries("W 9 0 0 0 5\n")[9]  # no metadata
        with pytest.raises(MalformedEntriesError):
            plane.load_tables([good, bad])
        assert plane.snapshot() is before


class TestLoadValidation:
    def test_metadata_required(self):
        bad = parse_table_entries("W 9 0 0 0 5\nB 9 0 0 1\n")[9]
        with pytest.raises(MalformedEntriesError) as exc:
            ControlPlane().load_tables([bad])
        assert "no metadata" in str(exc.value)

    def test_missing_weight_detected(self):
        es = quantize_model(parse_model(TWO_FEATURE))
        weights = dict(es.weights)
        del weights[(1, 0, 0, 1)]
        broken = TableEntrySet(1, es.meta, weights, es.biases)
        with pytest.raises(MalformedEntriesError) as exc:
            ControlPlane().load_tables([broken])
        assert "missing weight" in str(exc.value)

    def test_missing_bias_detected(self):
        es = quantize_model(parse_model(TWO_FEATURE))
        broken = TableEntrySet(1, es.meta, es.weights, {})
        with pytest.raises(MalformedEntriesError) as exc:
            ControlPlane().load_tables([broken])
        assert "missing bias" in str(exc.value)

    def test_entry_outside_shape_detected(self):
        es = quantize_model(parse_model(TWO_FEATURE))
        weights = dict(es.weights)
        weights[(1, 0, 0, 7)] = 42
        broken = TableEntrySet(1, es.meta, weights, es.biases)
        with pytest.raises(MalformedEntriesError) as exc:
            ControlPlane().load_tables([broken])
        assert "outside the declared shape" in str(exc.value)

    def test_width_limit_enforced(self):
        meta = TableMeta(16, (MAX_LAYER_WIDTH + 1, 1), (("linear",),))
        broken = TableEntrySet(1, meta, {}, {})
        with pytest.raises(MalformedEntriesError) as exc:
            ControlPlane().load_tables([broken])
        assert "width" in str(exc.value)

    def test_depth_limit_enforced(self):
        n = MAX_DEPTH + 1
        meta = TableMeta(16, (1,) * (n + 1), (("linear",),) * n)
        broken = TableEntrySet(1, meta, {}, {})
        with pytest.raises(MalformedEntriesError) as exc:
            ControlPlane().load_tables([broken])
        assert "layers" in str(exc.value)

    def test_foreign_entry_detected(self):
        es = quantize_model(parse_model(TWO_FEATURE))
        weights = dict(es.weights)
        weights[(5, 0, 0, 0)] = 1
        broken = TableEntrySet(1, es.meta, weights, es.biases)
        with pytest.raises(MalformedEntriesError) as exc:
            ControlPlane().load_tables([broken])
        assert "belongs to model" in str(exc.value)


class TestProcessStream:
    def test_counts_partition_the_stream(self):
        state = plane_with(IDENTITY).snapshot()
        frames = [
            request_frame(2, [0.5]),
            b"junk",
            request_frame(999, [0.5]),
            request_frame(2, [0.5], scale=8),
            request_frame(2, [0.5, 0.5]),
            request_frame(2, [0.5], ocnt=3),
            request_frame(2, [1.5]),
        ]
        outputs, stats = process_stream(frames, state)
        assert stats.packets_in == 7
        assert stats.packets_out == 2
        assert stats.parse_errors == 1
        assert stats.lookup_misses == 1
        assert stats.mismatch_drops == 3
        assert len(outputs) == stats.packets_out
        total = (
            stats.packets_out
            + stats.parse_errors
            + stats.lookup_misses
            + stats.mismatch_drops
        )
        assert total == stats.packets_in

    def test_event_counters_are_per_packet(self):
        state = plane_with(SIGMOID).snapshot()
        frames = [request_frame(3, [5.0]), request_frame(3, [0.1])]
        _, stats = process_stream(frames, state)
        assert stats.clamp_events == 1
        assert stats.saturation_events == 0

    def test_empty_stream(self):
        outputs, stats = process_stream([], ControlPlane().snapshot())
        assert outputs == []
        assert stats.packets_in == 0
        assert stats.total_ops() == 0

    def test_op_counts_only_when_tracing(self):
        state = plane_with(IDENTITY).snapshot()
        frames = [request_frame(2, [1.0])]
        _, quiet = process_stream(frames, state)
        _, traced = process_stream(frames, state, trace=True)
        assert quiet.op_counts == {}
        assert traced.total_ops() > 0
        assert set(traced.op_counts) <= ops.OP_WHITELIST

    def test_render_kv_and_csv(self):
        state = plane_with(IDENTITY).snapshot()
        _, stats = process_stream([request_frame(2, [1.0])], state, trace=True)
        kv = stats.render_kv()
        assert "packets_in=1\n" in kv
        assert "op.TABLE_LOOKUP=" in kv
        csv_text = stats.render_csv()
        header, row, trailer = csv_text.split("\n")
        assert trailer == ""
        assert header.split(",")[:2] == ["packets_in", "packets_out"]
        assert len(header.split(",")) == len(row.split(","))


class TestOpTrace:
    def test_two_feature_linear_lookup_budget(self):
        # metadata + 2 weights + 1 bias = 4 lookups; 2 MACs; 1 rescale
        state = plane_with(TWO_FEATURE).snapshot()
        tags = op_trace(request_frame(1, [1.0, 2.0]), state)
        assert tags.count(ops.TABLE_LOOKUP) == 4
        assert tags.count(ops.MUL) == 2
        assert tags.count(ops.ADD) == 4
        assert tags.count(ops.SHIFT) == 1

    def test_whitelist_holds_for_every_activation(self):
        texts = [
            TWO_FEATURE,
            SIGMOID,
            "model 5 scale=16\nlayer 0 in=1 out=1 act=relu\nw 0 0 1.0\n",
            "model 6 scale=16\nlayer 0 in=1 out=1 act=leaky:0.1\nw 0 0 1.0\n",
        ]
        state = plane_with(*texts).snapshot()
        for mid in (1, 3, 5, 6):
            feats = [0.5, -0.5] if mid == 1 else [-0.5]
            tags = op_trace(request_frame(mid, feats), state)
            assert set(tags) <= ops.OP_WHITELIST

    def test_trace_is_deterministic(self):
        state = plane_with(SIGMOID).snapshot()
        frame = request_frame(3, [0.3])
        assert op_trace(frame, state) == op_trace(frame, state)

    def test_sigmoid_order_cost_is_per_neuron_constant(self):
        def trace_len(width, order):
            lines = [f"model 1 scale=16", f"layer 0 in=1 out={width} act=sigmoid:{order}"]
            lines += [f"w {n} 0 0.5" for n in range(width)]
            state = plane_with("\n".join(lines) + "\n").snapshot()
            return len(op_trace(request_frame(1, [1.0]), state))

        per_neuron = trace_len(1, 3) - trace_len(1, 1)
        assert per_neuron > 0
        assert trace_len(4, 3) - trace_len(4, 1) == 4 * per_neuron

    def test_drops_propagate(self):
        state = plane_with(IDENTITY).snapshot()
        with pytest.raises(PacketDropped):
            op_trace(request_frame(999, [1.0]), state)


class TestConcurrency:
    def test_packets_never_see_torn_updates(self):
        plane = plane_with(IDENTITY)
        fmt = FixedPointFormat(16)
        lo = encode(0.25, fmt).raw
        hi = encode(0.75, fmt).raw
        frame = request_frame(2, [1.0])
        stop = threading.Event()

        def writer():
            value = lo
            while not stop.is_set():
                plane.update_entry((2, 0, 0, 0), value)
                value = hi if value == lo else lo

        thread = threading.Thread(target=writer)
        thread.start()
        try:
            seen = set()
            for _ in range(2000):
                out = decode_packet(process_packet(frame, plane.snapshot()))
                seen.add(out.outputs[0])
        finally:
            stop.set()
            thread.join()
        assert seen <= {lo, hi, 65536}  # initial weight 1.0 or either update
