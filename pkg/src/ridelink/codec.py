"""Deterministic binary codec and stream framing.

Wire layout (documented with hex examples in docs/wire-format.md):

  envelope   = kind:u8 payload
  integers   = fixed-width big-endian (u64 for timestamps and counters)
  string     = len:u16 utf8-bytes
  optional X = present:u8(0|1) [X]
  enums      = u8 holding the enum's wire value
  cause sets = u8 bitmask, bit (value-1) set per member

Decoding is strict: truncated or trailing bytes, bad UTF-8, and flag
bytes other than 0/1 raise MalformedFrame; unknown kind tags raise
UnknownKind; values that violate payload invariants raise
InvalidMessage. decode() never raises anything outside that family.

Frames are a 4-byte big-endian length followed by the encoded body,
capped at 64 KiB.
"""

from __future__ import annotations

import struct
from typing import Optional

from .messages import (
    DisengagementCause,
    DisengagementRequest,
    DisengagementSurvey,
    EgoPosition,
    Envelope,
    EventFlag,
    EventSurvey,
    Heartbeat,
    IntendedExplanation,
    InvalidMessage,
    LateralCause,
    LoginSurvey,
    LoginSurveyRequest,
    LongitudinalCause,
    MalformedFrame,
    MessageKind,
    OddContext,
    ProtocolError,
    SafetyDetail,
    UnknownKind,
)

MAX_FRAME_BYTES = 64 * 1024

_U64 = struct.Struct(">Q")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")


class StreamClosed(ProtocolError):
    """The underlying byte stream ended before a complete frame arrived."""


class FrameTooLarge(ProtocolError):
    """Declared frame length exceeds the 64 KiB cap; the connection must be dropped."""


# ---------------------------------------------------------------------------
# primitive writers


def _put_str(out: bytearray, value: str) -> None:
    raw = value.encode("utf-8")
    out += _U16.pack(len(raw))
    out += raw


def _put_opt_str(out: bytearray, value: Optional[str]) -> None:
    if value is None:
        out.append(0)
    else:
        out.append(1)
        _put_str(out, value)


def _causes_mask(causes) -> int:
    mask = 0
    for c in causes:
        mask |= 1 << (c.value - 1)
    return mask


def _put_detail(out: bytearray, detail: SafetyDetail) -> None:
    out.append(_causes_mask(detail.longitudinal_causes))
    out.append(_causes_mask(detail.lateral_causes))
    out.append(detail.ego_position.value)


# ---------------------------------------------------------------------------
# primitive readers


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedFrame(f"truncated: wanted {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def string(self) -> str:
        (n,) = _U16.unpack(self.take(2))
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"bad UTF-8 in string field: {exc}") from None

    def flag(self) -> bool:
        b = self.u8()
        if b not in (0, 1):
            raise MalformedFrame(f"presence flag must be 0 or 1, got {b}")
        return b == 1

    def opt_str(self) -> Optional[str]:
        return self.string() if self.flag() else None

    def enum(self, enum_type):
        b = self.u8()
        try:
            return enum_type(b)
        except ValueError:
            raise InvalidMessage(f"bad {enum_type.__name__} value: {b}") from None

    def causes(self, enum_type) -> frozenset:
        mask = self.u8()
        members = set()
        for member in enum_type:
            bit = 1 << (member.value - 1)
            if mask & bit:
                members.add(member)
                mask &= ~bit
        if mask:
            raise InvalidMessage(f"unknown bits 0x{mask:02x} in {enum_type.__name__} set")
        return frozenset(members)

    def detail(self) -> SafetyDetail:
        longitudinal = self.causes(LongitudinalCause)
        lateral = self.causes(LateralCause)
        ego = self.enum(EgoPosition)
        return SafetyDetail(longitudinal, lateral, ego)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedFrame(f"{len(self.data) - self.pos} trailing bytes after payload")


# ---------------------------------------------------------------------------
# payload codecs


def _encode_payload(out: bytearray, env: Envelope) -> None:
    p = env.payload
    if env.kind == MessageKind.HEARTBEAT:
        out += _U64.pack(p.timestamp_ms)
    elif env.kind == MessageKind.LOGIN_SURVEY_REQUEST:
        pass
    elif env.kind == MessageKind.LOGIN_SURVEY_RESPONSE:
        _put_str(out, p.pilot_id)
        _put_str(out, p.copilot_id)
    elif env.kind == MessageKind.DISENGAGEMENT_SURVEY_REQUEST:
        out += _U64.pack(p.lateral_seq)
        out += _U64.pack(p.longitudinal_seq)
    elif env.kind == MessageKind.DISENGAGEMENT_SURVEY_RESPONSE:
        out += _U64.pack(p.lateral_seq)
        out += _U64.pack(p.longitudinal_seq)
        out.append(p.longitudinal_comfort)
        out.append(p.lateral_comfort)
        out.append(p.cause.value)
        if p.safety_detail is None:
            out.append(0)
        else:
            out.append(1)
            _put_detail(out, p.safety_detail)
        if p.intended_explanation is None:
            out.append(0)
        else:
            out.append(1)
            out.append(p.intended_explanation.value)
        if p.odd_context is None:
            out.append(0)
        else:
            out.append(1)
            out.append(p.odd_context.value)
        _put_opt_str(out, p.other_text)
        _put_opt_str(out, p.additional_info)
    elif env.kind == MessageKind.EVENT_FLAG:
        out += _U64.pack(p.event_seq)
    elif env.kind == MessageKind.EVENT_SURVEY_RESPONSE:
        out += _U64.pack(p.event_seq)
        out.append(p.longitudinal_comfort)
        out.append(p.lateral_comfort)
        if p.detail is None:
            out.append(0)
        else:
            out.append(1)
            _put_detail(out, p.detail)
        _put_opt_str(out, p.additional_info)
    else:  # pragma: no cover - Envelope construction forbids this
        raise InvalidMessage(f"unencodable kind {env.kind!r}")


def _decode_payload(kind: MessageKind, r: _Reader):
    if kind == MessageKind.HEARTBEAT:
        return Heartbeat(timestamp_ms=r.u64())
    if kind == MessageKind.LOGIN_SURVEY_REQUEST:
        return LoginSurveyRequest()
    if kind == MessageKind.LOGIN_SURVEY_RESPONSE:
        return LoginSurvey(pilot_id=r.string(), copilot_id=r.string())
    if kind == MessageKind.DISENGAGEMENT_SURVEY_REQUEST:
        return DisengagementRequest(lateral_seq=r.u64(), longitudinal_seq=r.u64())
    if kind == MessageKind.DISENGAGEMENT_SURVEY_RESPONSE:
        return DisengagementSurvey(
            lateral_seq=r.u64(),
            longitudinal_seq=r.u64(),
            longitudinal_comfort=r.u8(),
            lateral_comfort=r.u8(),
            cause=r.enum(DisengagementCause),
            safety_detail=r.detail() if r.flag() else None,
            intended_explanation=r.enum(IntendedExplanation) if r.flag() else None,
            odd_context=r.enum(OddContext) if r.flag() else None,
            other_text=r.opt_str(),
            additional_info=r.opt_str(),
        )
    if kind == MessageKind.EVENT_FLAG:
        return EventFlag(event_seq=r.u64())
    return EventSurvey(
        event_seq=r.u64(),
        longitudinal_comfort=r.u8(),
        lateral_comfort=r.u8(),
        detail=r.detail() if r.flag() else None,
        additional_info=r.opt_str(),
    )


# ---------------------------------------------------------------------------
# public codec


def encode(env: Envelope) -> bytes:
    """Encode a valid envelope to its canonical byte sequence.

    Re-validates the payload so tampered objects cannot reach the wire.
    """
    if not isinstance(env, Envelope):
        raise InvalidMessage(f"expected Envelope, got {type(env).__name__}")
    env.payload._validate()
    out = bytearray([env.kind.value])
    _encode_payload(out, env)
    if len(out) > MAX_FRAME_BYTES:
        raise InvalidMessage(f"encoded size {len(out)} exceeds {MAX_FRAME_BYTES} bytes")
    return bytes(out)


def decode(data: bytes) -> Envelope:
    """Decode bytes into an Envelope, or raise a typed ProtocolError."""
    if len(data) == 0:
        raise MalformedFrame("empty input")
    try:
        kind = MessageKind(data[0])
    except ValueError:
        raise UnknownKind(f"unknown kind tag 0x{data[0]:02x}") from None
    r = _Reader(data)
    r.pos = 1
    payload = _decode_payload(kind, r)
    r.done()
    return Envelope(kind=kind, payload=payload)


# ---------------------------------------------------------------------------
# stream framing


def _stream_write(stream, data: bytes) -> None:
    sendall = getattr(stream, "sendall", None)
    if sendall is not None:
        sendall(data)
    else:
        stream.write(data)


def _stream_read_exact(stream, n: int) -> bytes:
    """Read exactly n bytes, retrying partial reads; raise StreamClosed on EOF."""
    recv = getattr(stream, "recv", None)
    read = recv if recv is not None else stream.read
    buf = bytearray()
    while len(buf) < n:
        chunk = read(n - len(buf))
        if not chunk:
            raise StreamClosed(f"stream closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def write_frame(stream, env: Envelope) -> None:
    """Encode and send one length-prefixed frame."""
    body = encode(env)
    _stream_write(stream, _U32.pack(len(body)) + body)


def read_frame(stream) -> Envelope:
    """Read one length-prefixed frame and decode it."""
    header = _stream_read_exact(stream, 4)
    (length,) = _U32.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"declared length {length} exceeds {MAX_FRAME_BYTES}")
    body = _stream_read_exact(stream, length)
    return decode(body)
