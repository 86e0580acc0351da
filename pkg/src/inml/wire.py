"""Packet encoding for inference requests and results.

Every packet starts with a fixed 7-byte big-endian header:

    model_id:16  feature_cnt:8  output_cnt:8  scale:16  flags:8

followed by feature_cnt (requests) or output_cnt (results) signed 32-bit
big-endian fixed-point values, then an opaque payload.  Results set the
response flag and carry feature_cnt 0; the scale field states the
Q-format of the values so an endpoint can reject, rather than
misinterpret, a packet encoded at a different precision.

Frame files bundle packets for replay: magic `INML`, a version byte,
then each frame as a 32-bit big-endian length prefix plus its bytes.

All decode failures raise a subclass of WireError, itself a ValueError:
a corrupt packet must never surface as an IndexError or struct.error.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .fixedpoint import I32_MAX, I32_MIN, MAX_SCALE_BITS

FLAG_RESPONSE = 0x01  # packet carries outputs, not features
FLAG_SATURATED = 0x02  # some arithmetic step hit the 32-bit rails
FLAG_CLAMPED = 0x04  # some activation input or output was clamped
FLAG_PADDED = 0x08  # payload is padding, not meaningful bytes
RESERVED_FLAG_MASK = 0xF0  # must be zero on the wire

HEADER_STRUCT = struct.Struct(">HBBHB")
HEADER_LEN = HEADER_STRUCT.size  # 7
VALUE_STRUCT = struct.Struct(">i")

FRAME_MAGIC = b"INML"
FRAME_VERSION = 1


class WireError(ValueError):
    """Base for every packet or frame decoding failure."""


class TruncatedHeaderError(WireError):
    """Fewer bytes than one header."""


class TruncatedFeaturesError(WireError):
    """Header promises more 32-bit values than the packet carries."""


class MalformedHeaderError(WireError):
    """Header fields are inconsistent (reserved flags, bad counts)."""


class MalformedScaleError(WireError):
    """Scale field outside the representable fractional range."""


class BadMagicError(WireError):
    """Frame file does not start with the expected magic."""


class BadVersionError(WireError):
    """Frame file written by an unknown format version."""


class TruncatedFrameError(WireError):
    """Frame file ends mid-length-prefix or mid-frame."""


def _check_common(model_id: int, scale: int, flags: int):
    if not 0 <= model_id <= 0xFFFF:
        raise ValueError(f"model id must fit in 16 bits, got {model_id}")
    if not 0 <= scale <= MAX_SCALE_BITS:
        raise ValueError(f"scale must be in [0, {MAX_SCALE_BITS}], got {scale}")
    if not 0 <= flags <= 0xFF:
        raise ValueError(f"flags must fit in 8 bits, got {flags}")
    if flags & RESERVED_FLAG_MASK:
        raise ValueError(f"reserved flag bits set: {flags:#04x}")


def _check_values(values: tuple[int, ...], what: str):
    if not 1 <= len(values) <= 0xFF:
        raise ValueError(f"{what} count must be in [1, 255], got {len(values)}")
    for idx, v in enumerate(values):
        if not I32_MIN <= v <= I32_MAX:
            raise ValueError(f"{what} {idx} does not fit 32 bits: {v}")


@dataclass(frozen=True)
class InferenceRequest:
    """A feature vector headed for one model.

    output_cnt declares how many outputs the sender expects; 0 means
    unspecified, accept whatever the model produces.
    """

    model_id: int
    output_cnt: int
    scale: int
    flags: int
    features: tuple[int, ...]
    payload: bytes = b""

    def __post_init__(self):
        _check_common(self.model_id, self.scale, self.flags)
        if self.flags & FLAG_RESPONSE:
            raise ValueError("request must not carry the response flag")
        if not 0 <= self.output_cnt <= 0xFF:
            raise ValueError(
                f"output count must be in [0, 255], got {self.output_cnt}"
            )
        _check_values(self.features, "feature")

    @property
    def feature_cnt(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class InferenceResult:
    """Model outputs returned for one request."""

    model_id: int
    scale: int
    flags: int
    outputs: tuple[int, ...]
    payload: bytes = b""

    def __post_init__(self):
        _check_common(self.model_id, self.scale, self.flags)
        if not self.flags & FLAG_RESPONSE:
            raise ValueError("result must carry the response flag")
        _check_values(self.outputs, "output")

    @property
    def output_cnt(self) -> int:
        return len(self.outputs)


def encode_request(req: InferenceRequest) -> bytes:
    header = HEADER_STRUCT.pack(
        req.model_id, req.feature_cnt, req.output_cnt, req.scale, req.flags
    )
    body = b"".join(VALUE_STRUCT.pack(v) for v in req.features)
    return header + body + req.payload


def encode_result(res: InferenceResult) -> bytes:
    header = HEADER_STRUCT.pack(res.model_id, 0, res.output_cnt, res.scale, res.flags)
    body = b"".join(VALUE_STRUCT.pack(v) for v in res.outputs)
    return header + body + res.payload


def decode_packet(data: bytes) -> InferenceRequest | InferenceResult:
    """Decode one packet, dispatching on the response flag.

    Raises a WireError subclass on any defect; never returns a partially
    decoded packet.
    """
    if len(data) < HEADER_LEN:
        raise TruncatedHeaderError(
            f"packet is {len(data)} bytes, header needs {HEADER_LEN}"
        )
    model_id, feature_cnt, output_cnt, scale, flags = HEADER_STRUCT.unpack_from(data)
    if flags & RESERVED_FLAG_MASK:
        raise MalformedHeaderError(f"reserved flag bits set: {flags:#04x}")
    if scale > MAX_SCALE_BITS:
        raise MalformedScaleError(
            f"scale {scale} exceeds the maximum of {MAX_SCALE_BITS}"
        )

    if flags & FLAG_RESPONSE:
        if feature_cnt != 0:
            raise MalformedHeaderError(
                f"result packet carries feature count {feature_cnt}, expected 0"
            )
        if output_cnt == 0:
            raise MalformedHeaderError("result packet carries no outputs")
        count = output_cnt
    else:
        if feature_cnt == 0:
            raise MalformedHeaderError("request packet carries no features")
        count = feature_cnt

    need = HEADER_LEN + 4 * count
    if len(data) < need:
        raise TruncatedFeaturesError(
            f"header promises {count} values ({need} bytes), packet has {len(data)}"
        )
    values = tuple(
        VALUE_STRUCT.unpack_from(data, HEADER_LEN + 4 * i)[0] for i in range(count)
    )
    payload = data[need:]

    if flags & FLAG_RESPONSE:
        return InferenceResult(model_id, scale, flags, values, payload)
    return InferenceRequest(model_id, output_cnt, scale, flags, values, payload)


def write_frames(frames: list[bytes]) -> bytes:
    """Serialize packets into a frame file image."""
    parts = [FRAME_MAGIC, bytes([FRAME_VERSION])]
    for frame in frames:
        parts.append(struct.pack(">I", len(frame)))
        parts.append(frame)
    return b"".join(parts)


def read_frames(data: bytes) -> list[bytes]:
    """Split a frame file image back into packets."""
    if len(data) < len(FRAME_MAGIC) + 1:
        raise BadMagicError("frame file shorter than its magic")
    if data[: len(FRAME_MAGIC)] != FRAME_MAGIC:
        raise BadMagicError(f"bad magic {data[:len(FRAME_MAGIC)]!r}")
    version = data[len(FRAME_MAGIC)]
    if version != FRAME_VERSION:
        raise BadVersionError(f"unsupported frame version {version}")

    frames = []
    pos = len(FRAME_MAGIC) + 1
    while pos < len(data):
        if pos + 4 > len(data):
            raise TruncatedFrameError("frame file ends inside a length prefix")
        (length,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + length > len(data):
            raise TruncatedFrameError(
                f"frame promises {length} bytes, file has {len(data) - pos}"
            )
        frames.append(data[pos : pos + length])
        pos += length
    return frames
