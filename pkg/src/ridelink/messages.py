"""Message taxonomy for the vehicle / co-pilot data link.

Seven wire message kinds, their payload types, and the validation rules
each payload must satisfy before it may be encoded. Every payload
dataclass validates in ``__post_init__``, so a payload object that
exists satisfies its invariants.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union


class ProtocolError(Exception):
    """Base class for wire-protocol errors."""


class InvalidMessage(ProtocolError):
    """A message violates a type invariant (bad rating, missing conditional field, ...)."""


class MalformedFrame(ProtocolError):
    """Byte-level damage: truncated, trailing garbage, bad UTF-8, bad flag byte."""


class UnknownKind(ProtocolError):
    """The kind tag does not name any known message type."""


MAX_ID_BYTES = 128   # pilot/copilot identifier limit (UTF-8 bytes)
MAX_TEXT_BYTES = 4096  # free-text field limit, keeps any message well under the frame cap

ComfortRating = int  # integer 0..5, 0 = least comfortable


class MessageKind(enum.IntEnum):
    """One-byte kind tags. Exactly seven; decoding any other tag is an error."""

    HEARTBEAT = 0x01
    LOGIN_SURVEY_REQUEST = 0x02
    LOGIN_SURVEY_RESPONSE = 0x03
    DISENGAGEMENT_SURVEY_REQUEST = 0x04
    DISENGAGEMENT_SURVEY_RESPONSE = 0x05
    EVENT_FLAG = 0x06
    EVENT_SURVEY_RESPONSE = 0x07


class DisengagementCause(enum.IntEnum):
    SAFETY_ISSUE = 1
    INTENDED_AND_SAFE = 2
    END_OF_DRIVE = 3
    OTHER = 4


class IntendedExplanation(enum.IntEnum):
    EXITING_ODD_ROAD_TYPE = 1
    PRIVATE_TEST_AREA = 2
    PLANNED_BREAK_STOP = 3
    ACCIDENTAL_DISENGAGEMENT = 4
    EMERGENCY_VEHICLE = 5
    BETTER_ROUTE_LANE = 6
    HIGH_ACCIDENT_ZONE = 7
    DISENGAGEMENT_TESTING = 8
    PROACTIVE_OR_DISCRETIONARY = 9
    OTHER = 10


class OddContext(enum.IntEnum):
    HIGH_TRAFFIC_AREA = 1
    WEATHER_CONDITIONS = 2
    CONSTRUCTION_ZONE = 3


class LongitudinalCause(enum.IntEnum):
    COLLISION_THREAT = 1
    TOO_FAST = 2
    TOO_SLOW = 3
    JERKY_ACCELERATION = 4
    JERKY_BRAKE = 5
    FALSE_BRAKING = 6


class LateralCause(enum.IntEnum):
    COLLISION_THREAT = 1
    SWERVE = 2
    LATERAL_JERK = 3
    TOO_AGGRESSIVE = 4
    TOO_CONSERVATIVE = 5


class EgoPosition(enum.IntEnum):
    LANE_KEEP = 1
    MERGE = 2
    LANE_CHANGE = 3
    SPLIT = 4
    RAMP = 5


U64_MAX = 2**64 - 1


def _check_u64(name: str, value: int, minimum: int = 0) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise InvalidMessage(f"{name} must be an integer, got {value!r}")
    if value < minimum or value > U64_MAX:
        raise InvalidMessage(f"{name} out of range: {value}")


def _check_comfort(name: str, value: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= 5:
        raise InvalidMessage(f"{name} must be an integer in [0, 5], got {value!r}")


def _check_text(name: str, value: Optional[str], limit: int, required: bool = False) -> None:
    if value is None:
        if required:
            raise InvalidMessage(f"{name} is required")
        return
    if not isinstance(value, str):
        raise InvalidMessage(f"{name} must be a string")
    if required and not value:
        raise InvalidMessage(f"{name} must be non-empty")
    if len(value.encode("utf-8")) > limit:
        raise InvalidMessage(f"{name} exceeds {limit} bytes")


@dataclass(frozen=True)
class Heartbeat:
    """Liveness tick; timestamp is milliseconds since the sender's process epoch."""

    timestamp_ms: int

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        _check_u64("timestamp_ms", self.timestamp_ms)

    def as_dict(self) -> dict:
        return {"timestamp_ms": self.timestamp_ms}

    @classmethod
    def from_dict(cls, d: dict) -> "Heartbeat":
        return cls(timestamp_ms=d["timestamp_ms"])


@dataclass(frozen=True)
class LoginSurveyRequest:
    """Vehicle asks the co-pilot side who is driving; empty payload."""

    def _validate(self) -> None:
        pass

    def as_dict(self) -> dict:
        return {}

    @classmethod
    def from_dict(cls, d: dict) -> "LoginSurveyRequest":
        return cls()


@dataclass(frozen=True)
class LoginSurvey:
    """Pilot and co-pilot identifiers; the login survey response payload."""

    pilot_id: str
    copilot_id: str

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        _check_text("pilot_id", self.pilot_id, MAX_ID_BYTES, required=True)
        _check_text("copilot_id", self.copilot_id, MAX_ID_BYTES, required=True)

    def as_dict(self) -> dict:
        return {"pilot_id": self.pilot_id, "copilot_id": self.copilot_id}

    @classmethod
    def from_dict(cls, d: dict) -> "LoginSurvey":
        return cls(pilot_id=d["pilot_id"], copilot_id=d["copilot_id"])


@dataclass(frozen=True)
class DisengagementRequest:
    """Vehicle-side disengagement notification carrying the correlation counters."""

    lateral_seq: int
    longitudinal_seq: int

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        _check_u64("lateral_seq", self.lateral_seq, minimum=1)
        _check_u64("longitudinal_seq", self.longitudinal_seq, minimum=1)

    def as_dict(self) -> dict:
        return {"lateral_seq": self.lateral_seq, "longitudinal_seq": self.longitudinal_seq}

    @classmethod
    def from_dict(cls, d: dict) -> "DisengagementRequest":
        return cls(lateral_seq=d["lateral_seq"], longitudinal_seq=d["longitudinal_seq"])


@dataclass(frozen=True)
class SafetyDetail:
    """Discomfort causes per axis plus the ego vehicle's road position."""

    longitudinal_causes: frozenset
    lateral_causes: frozenset
    ego_position: EgoPosition

    def __post_init__(self) -> None:
        object.__setattr__(self, "longitudinal_causes", frozenset(self.longitudinal_causes))
        object.__setattr__(self, "lateral_causes", frozenset(self.lateral_causes))
        self._validate()

    def _validate(self) -> None:
        for c in self.longitudinal_causes:
            if not isinstance(c, LongitudinalCause):
                raise InvalidMessage(f"bad longitudinal cause: {c!r}")
        for c in self.lateral_causes:
            if not isinstance(c, LateralCause):
                raise InvalidMessage(f"bad lateral cause: {c!r}")
        if not isinstance(self.ego_position, EgoPosition):
            raise InvalidMessage(f"bad ego position: {self.ego_position!r}")

    def as_dict(self) -> dict:
        return {
            "longitudinal_causes": sorted(c.name for c in self.longitudinal_causes),
            "lateral_causes": sorted(c.name for c in self.lateral_causes),
            "ego_position": self.ego_position.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SafetyDetail":
        return cls(
            longitudinal_causes=frozenset(_enum_by_name(LongitudinalCause, n) for n in d["longitudinal_causes"]),
            lateral_causes=frozenset(_enum_by_name(LateralCause, n) for n in d["lateral_causes"]),
            ego_position=_enum_by_name(EgoPosition, d["ego_position"]),
        )


@dataclass(frozen=True)
class DisengagementSurvey:
    """Full disengagement survey response.

    Conditional fields:
      * ``safety_detail``        present iff cause == SAFETY_ISSUE
      * ``intended_explanation`` present iff cause == INTENDED_AND_SAFE
      * ``odd_context``          allowed only when explanation == EXITING_ODD_ROAD_TYPE
      * ``other_text``           present iff cause == OTHER or explanation == OTHER
    """

    lateral_seq: int
    longitudinal_seq: int
    longitudinal_comfort: ComfortRating
    lateral_comfort: ComfortRating
    cause: DisengagementCause
    safety_detail: Optional[SafetyDetail] = None
    intended_explanation: Optional[IntendedExplanation] = None
    odd_context: Optional[OddContext] = None
    other_text: Optional[str] = None
    additional_info: Optional[str] = None

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        _check_u64("lateral_seq", self.lateral_seq, minimum=1)
        _check_u64("longitudinal_seq", self.longitudinal_seq, minimum=1)
        _check_comfort("longitudinal_comfort", self.longitudinal_comfort)
        _check_comfort("lateral_comfort", self.lateral_comfort)
        if not isinstance(self.cause, DisengagementCause):
            raise InvalidMessage(f"bad cause: {self.cause!r}")

        if self.cause == DisengagementCause.SAFETY_ISSUE:
            if self.safety_detail is None:
                raise InvalidMessage("safety_detail required when cause is SAFETY_ISSUE")
        elif self.safety_detail is not None:
            raise InvalidMessage(f"safety_detail not allowed with cause {self.cause.name}")
        if self.safety_detail is not None:
            self.safety_detail._validate()

        if self.cause == DisengagementCause.INTENDED_AND_SAFE:
            if self.intended_explanation is None:
                raise InvalidMessage("intended_explanation required when cause is INTENDED_AND_SAFE")
            if not isinstance(self.intended_explanation, IntendedExplanation):
                raise InvalidMessage(f"bad intended_explanation: {self.intended_explanation!r}")
        elif self.intended_explanation is not None:
            raise InvalidMessage(f"intended_explanation not allowed with cause {self.cause.name}")

        if self.odd_context is not None:
            if self.intended_explanation != IntendedExplanation.EXITING_ODD_ROAD_TYPE:
                raise InvalidMessage("odd_context requires explanation EXITING_ODD_ROAD_TYPE")
            if not isinstance(self.odd_context, OddContext):
                raise InvalidMessage(f"bad odd_context: {self.odd_context!r}")

        other_needed = (
            self.cause == DisengagementCause.OTHER
            or self.intended_explanation == IntendedExplanation.OTHER
        )
        if other_needed:
            _check_text("other_text", self.other_text, MAX_TEXT_BYTES, required=True)
        elif self.other_text is not None:
            raise InvalidMessage("other_text only allowed with cause OTHER or explanation OTHER")

        _check_text("additional_info", self.additional_info, MAX_TEXT_BYTES)

    def as_dict(self) -> dict:
        return {
            "lateral_seq": self.lateral_seq,
            "longitudinal_seq": self.longitudinal_seq,
            "longitudinal_comfort": self.longitudinal_comfort,
            "lateral_comfort": self.lateral_comfort,
            "cause": self.cause.name,
            "safety_detail": self.safety_detail.as_dict() if self.safety_detail else None,
            "intended_explanation": self.intended_explanation.name if self.intended_explanation else None,
            "odd_context": self.odd_context.name if self.odd_context else None,
            "other_text": self.other_text,
            "additional_info": self.additional_info,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DisengagementSurvey":
        return cls(
            lateral_seq=d["lateral_seq"],
            longitudinal_seq=d["longitudinal_seq"],
            longitudinal_comfort=d["longitudinal_comfort"],
            lateral_comfort=d["lateral_comfort"],
            cause=_enum_by_name(DisengagementCause, d["cause"]),
            safety_detail=SafetyDetail.from_dict(d["safety_detail"]) if d.get("safety_detail") else None,
            intended_explanation=_enum_by_name(IntendedExplanation, d["intended_explanation"])
            if d.get("intended_explanation")
            else None,
            odd_context=_enum_by_name(OddContext, d["odd_context"]) if d.get("odd_context") else None,
            other_text=d.get("other_text"),
            additional_info=d.get("additional_info"),
        )


@dataclass(frozen=True)
class EventFlag:
    """Timestamps a discomfort event vehicle-side; carries the event counter."""

    event_seq: int

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        _check_u64("event_seq", self.event_seq, minimum=1)

    def as_dict(self) -> dict:
        return {"event_seq": self.event_seq}

    @classmethod
    def from_dict(cls, d: dict) -> "EventFlag":
        return cls(event_seq=d["event_seq"])


@dataclass(frozen=True)
class EventSurvey:
    """Event survey response; ``detail`` is absent for comfort-feedback-only submissions."""

    event_seq: int
    longitudinal_comfort: ComfortRating
    lateral_comfort: ComfortRating
    detail: Optional[SafetyDetail] = None
    additional_info: Optional[str] = None

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        _check_u64("event_seq", self.event_seq, minimum=1)
        _check_comfort("longitudinal_comfort", self.longitudinal_comfort)
        _check_comfort("lateral_comfort", self.lateral_comfort)
        if self.detail is not None:
            if not isinstance(self.detail, SafetyDetail):
                raise InvalidMessage(f"bad detail: {self.detail!r}")
            self.detail._validate()
        _check_text("additional_info", self.additional_info, MAX_TEXT_BYTES)

    def as_dict(self) -> dict:
        return {
            "event_seq": self.event_seq,
            "longitudinal_comfort": self.longitudinal_comfort,
            "lateral_comfort": self.lateral_comfort,
            "detail": self.detail.as_dict() if self.detail else None,
            "additional_info": self.additional_info,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventSurvey":
        return cls(
            event_seq=d["event_seq"],
            longitudinal_comfort=d["longitudinal_comfort"],
            lateral_comfort=d["lateral_comfort"],
            detail=SafetyDetail.from_dict(d["detail"]) if d.get("detail") else None,
            additional_info=d.get("additional_info"),
        )


Payload = Union[
    Heartbeat,
    LoginSurveyRequest,
    LoginSurvey,
    DisengagementRequest,
    DisengagementSurvey,
    EventFlag,
    EventSurvey,
]

PAYLOAD_TYPE_FOR_KIND = {
    MessageKind.HEARTBEAT: Heartbeat,
    MessageKind.LOGIN_SURVEY_REQUEST: LoginSurveyRequest,
    MessageKind.LOGIN_SURVEY_RESPONSE: LoginSurvey,
    MessageKind.DISENGAGEMENT_SURVEY_REQUEST: DisengagementRequest,
    MessageKind.DISENGAGEMENT_SURVEY_RESPONSE: DisengagementSurvey,
    MessageKind.EVENT_FLAG: EventFlag,
    MessageKind.EVENT_SURVEY_RESPONSE: EventSurvey,
}

KIND_FOR_PAYLOAD_TYPE = {t: k for k, t in PAYLOAD_TYPE_FOR_KIND.items()}


@dataclass(frozen=True)
class Envelope:
    """One wire message: a kind tag plus the matching typed payload."""

    kind: MessageKind
    payload: Payload

    def __post_init__(self) -> None:
        expected = PAYLOAD_TYPE_FOR_KIND.get(self.kind)
        if expected is None:
            raise InvalidMessage(f"unknown kind: {self.kind!r}")
        if type(self.payload) is not expected:
            raise InvalidMessage(
                f"payload {type(self.payload).__name__} does not match kind {self.kind.name}"
            )

    @classmethod
    def of(cls, payload: Payload) -> "Envelope":
        kind = KIND_FOR_PAYLOAD_TYPE.get(type(payload))
        if kind is None:
            raise InvalidMessage(f"no message kind for payload {type(payload).__name__}")
        return cls(kind=kind, payload=payload)

    def as_dict(self) -> dict:
        return {"kind": self.kind.name, "payload": self.payload.as_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Envelope":
        kind = _enum_by_name(MessageKind, d["kind"])
        payload_type = PAYLOAD_TYPE_FOR_KIND[kind]
        return cls(kind=kind, payload=payload_type.from_dict(d["payload"]))


def _enum_by_name(enum_type, name):
    try:
        return enum_type[name]
    except KeyError:
        raise InvalidMessage(f"unknown {enum_type.__name__} name: {name!r}") from None
