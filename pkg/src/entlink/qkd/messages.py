"""Protocol messages and their length-prefixed JSON framing.

A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON object
with exactly the fields ``session``, ``seq``, ``type`` and ``body``. Keys are
sorted and whitespace-free so identical messages give identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

MESSAGE_TYPES = (
    "Discard",
    "BasisReveal",
    "SampleIndices",
    "SampleBits",
    "QberReport",
    "ParityRequest",
    "ParityResponse",
    "HashSeed",
    "Confirmation",
    "Abort",
)

LENGTH = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


class FramingError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolMessage:
    session: str
    seq: int
    type: str
    body: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.type not in MESSAGE_TYPES:
            raise FramingError(f"unknown message type {self.type!r}")
        if not isinstance(self.seq, int) or self.seq < 0:
            raise FramingError("seq must be a nonnegative integer")

    def to_dict(self) -> dict:
        return {"session": self.session, "seq": self.seq, "type": self.type, "body": self.body}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolMessage":
        if set(d) != {"session", "seq", "type", "body"}:
            raise FramingError(f"bad message fields {sorted(d)}")
        if not isinstance(d["body"], dict):
            raise FramingError("message body must be an object")
        return cls(d["session"], d["seq"], d["type"], d["body"])

    def key_bits(self) -> int:
        """Number of key-derived bits this message discloses."""
        if self.type == "SampleBits":
            return len(self.body["bits"])
        if self.type == "ParityResponse":
            return len(self.body["parities"])
        if self.type == "Confirmation" and "tag" in self.body:
            return 64
        return 0


def encode_frame(msg: ProtocolMessage) -> bytes:
    payload = msg.to_json().encode("utf-8")
    if len(payload) > MAX_FRAME:
        raise FramingError("frame too large")
    return LENGTH.pack(len(payload)) + payload


def decode_frame(data: bytes) -> tuple[ProtocolMessage, bytes]:
    """Decode one frame from the front of ``data``; return it and the rest."""
    if len(data) < LENGTH.size:
        raise FramingError("incomplete length prefix")
    (size,) = LENGTH.unpack_from(data)
    if size > MAX_FRAME:
        raise FramingError("frame too large")
    end = LENGTH.size + size
    if len(data) < end:
        raise FramingError("incomplete frame")
    try:
        obj = json.loads(data[LENGTH.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FramingError(f"malformed frame: {exc}") from exc
    return ProtocolMessage.from_dict(obj), data[end:]


def transcript_line(direction: str, msg: ProtocolMessage) -> str:
    d = msg.to_dict()
    d["dir"] = direction
    return json.dumps(d, sort_keys=True, separators=(",", ":"))
