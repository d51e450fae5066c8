"""Ordered, reliable duplex transports between the two protocol parties.

Every transport is wrapped by :class:`Endpoint`, which stamps sequence
numbers, checks them on receipt, and keeps the party's transcript.
"""

from __future__ import annotations

import asyncio
import queue
import socket
from typing import Callable

from .messages import LENGTH, FramingError, ProtocolMessage, decode_frame, encode_frame, transcript_line


class ProtocolAbort(Exception):
    """A session stopped; ``stage`` names the protocol step that failed."""

    def __init__(self, stage: str, reason: str):
        super().__init__(f"[{stage}] {reason}")
        self.stage = stage
        self.reason = reason


class Transport:
    async def send_frame(self, frame: bytes) -> None:
        raise NotImplementedError

    async def recv_frame(self) -> bytes:
        raise NotImplementedError

    async def close(self) -> None:
        pass


class QueueTransport(Transport):
    """Both parties on one event loop."""

    def __init__(self, outbox: asyncio.Queue, inbox: asyncio.Queue):
        self.outbox = outbox
        self.inbox = inbox

    async def send_frame(self, frame: bytes) -> None:
        await self.outbox.put(frame)

    async def recv_frame(self) -> bytes:
        return await self.inbox.get()

    @classmethod
    def pair(cls) -> tuple["QueueTransport", "QueueTransport"]:
        a, b = asyncio.Queue(), asyncio.Queue()
        return cls(a, b), cls(b, a)


class ThreadTransport(Transport):
    """Parties on separate threads, each with its own event loop."""

    def __init__(self, outbox: queue.Queue, inbox: queue.Queue):
        self.outbox = outbox
        self.inbox = inbox

    async def send_frame(self, frame: bytes) -> None:
        self.outbox.put(frame)

    async def recv_frame(self) -> bytes:
        return await asyncio.to_thread(self.inbox.get)

    @classmethod
    def pair(cls) -> tuple["ThreadTransport", "ThreadTransport"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b), cls(b, a)


class StreamTransport(Transport):
    """Length-prefixed frames over an asyncio stream (TCP socket)."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer

    async def send_frame(self, frame: bytes) -> None:
        self.writer.write(frame)
        await self.writer.drain()

    async def recv_frame(self) -> bytes:
        head = await self.reader.readexactly(LENGTH.size)
        (size,) = LENGTH.unpack(head)
        return head + await self.reader.readexactly(size)

    async def close(self) -> None:
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass

    @classmethod
    async def from_socket(cls, sock: socket.socket) -> "StreamTransport":
        reader, writer = await asyncio.open_connection(sock=sock)
        return cls(reader, writer)


Tamper = Callable[[ProtocolMessage], ProtocolMessage]


class Endpoint:
    """One party's view of the channel.

    ``tamper`` (tests only) rewrites each outgoing message before framing.
    """

    def __init__(self, transport: Transport, session: str, role: str, tamper: Tamper | None = None):
        self.transport = transport
        self.session = session
        self.role = role
        self.tamper = tamper
        self.next_seq = 0
        self.expected_seq = 0
        self.transcript: list[str] = []
        self.sent_key_bits = 0
        self.received_key_bits = 0

    async def send(self, type_: str, body: dict) -> ProtocolMessage:
        msg = ProtocolMessage(self.session, self.next_seq, type_, body)
        self.next_seq += 1
        self.transcript.append(transcript_line("send", msg))
        self.sent_key_bits += msg.key_bits()
        wire = self.tamper(msg) if self.tamper else msg
        await self.transport.send_frame(encode_frame(wire))
        return msg

    async def recv(self, *expected: str) -> ProtocolMessage:
        frame = await self.transport.recv_frame()
        try:
            msg, rest = decode_frame(frame)
        except FramingError as exc:
            raise ProtocolAbort("channel", str(exc)) from exc
        if rest:
            raise ProtocolAbort("channel", "trailing bytes after frame")
        self.transcript.append(transcript_line("recv", msg))
        if msg.session != self.session:
            raise ProtocolAbort("channel", f"session mismatch: {msg.session!r}")
        if msg.seq != self.expected_seq:
            raise ProtocolAbort("channel", f"sequence gap: expected {self.expected_seq}, got {msg.seq}")
        self.expected_seq += 1
        self.received_key_bits += msg.key_bits()
        if msg.type == "Abort":
            raise ProtocolAbort(msg.body.get("stage", "peer"), "peer aborted: " + msg.body.get("reason", ""))
        if expected and msg.type not in expected:
            raise ProtocolAbort("channel", f"expected {'/'.join(expected)}, got {msg.type}")
        return msg

    async def abort(self, stage: str, reason: str) -> None:
        try:
            await self.send("Abort", {"stage": stage, "reason": reason})
        except (ConnectionError, OSError):
            pass
