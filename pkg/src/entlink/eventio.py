"""Serialization of event streams.

CSV columns: ``receiver,detector,time_ns,pulse_index,offset_ns`` with times
printed exactly (picosecond resolution, three decimals of ns).

Binary layout (all little-endian)::

    header, 32 bytes
      magic          4s   b"ENTL"
      version        u2   1
      reserved       u2   0
      record_count   u8
      period_ps      i8   sync pulse period
      reserved       8x
    record, 26 bytes each
      receiver       u1   0 = alice, 1 = bob
      detector       u1   0..3
      time_ps        i8
      pulse_index    i8
      offset_ps      i8
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .linksim import RECEIVERS, EventStream

MAGIC = b"ENTL"
VERSION = 1
HEADER = struct.Struct("<4sHHQq8x")
RECORD_DTYPE = np.dtype(
    [
        ("receiver", "u1"),
        ("detector", "u1"),
        ("time_ps", "<i8"),
        ("pulse_index", "<i8"),
        ("offset_ps", "<i8"),
    ]
)
CSV_HEADER = ("receiver", "detector", "time_ns", "pulse_index", "offset_ns")


def format_ps_as_ns(ps: int) -> str:
    sign = "-" if ps < 0 else ""
    q, r = divmod(abs(int(ps)), 1000)
    return f"{sign}{q}.{r:03d}"


def _records(streams: Iterable[EventStream]) -> np.ndarray:
    parts = []
    for s in streams:
        rec = np.empty(len(s), dtype=RECORD_DTYPE)
        rec["receiver"] = RECEIVERS.index(s.receiver)
        rec["detector"] = s.detector
        rec["time_ps"] = s.time_ps
        rec["pulse_index"] = s.pulse_index
        rec["offset_ps"] = s.offset_ps
        parts.append(rec)
    return np.concatenate(parts) if parts else np.empty(0, dtype=RECORD_DTYPE)


def write_csv(streams: Iterable[EventStream], out) -> None:
    rec = _records(streams)
    own = isinstance(out, (str, Path))
    fh = open(out, "w", newline="") if own else out
    try:
        fh.write(",".join(CSV_HEADER) + "\n")
        lines = (
            f"{RECEIVERS[r]},{d},{format_ps_as_ns(t)},{p},{format_ps_as_ns(o)}\n"
            for r, d, t, p, o in zip(
                rec["receiver"].tolist(), rec["detector"].tolist(), rec["time_ps"].tolist(),
                rec["pulse_index"].tolist(), rec["offset_ps"].tolist(),
            )
        )
        fh.writelines(lines)
    finally:
        if own:
            fh.close()


def read_csv(path) -> np.ndarray:
    """Parse an event CSV back into a record array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = list(reader)
    rec = np.empty(len(rows), dtype=RECORD_DTYPE)
    for k, (r, d, t, p, o) in enumerate(rows):
        rec[k] = (RECEIVERS.index(r), int(d), _ns_to_ps(t), int(p), _ns_to_ps(o))
    return rec


def _ns_to_ps(text: str) -> int:
    neg = text.startswith("-")
    whole, _, frac = text.lstrip("-").partition(".")
    ps = int(whole) * 1000 + int((frac + "000")[:3])
    return -ps if neg else ps


def write_binary(streams: Iterable[EventStream], out) -> None:
    streams = list(streams)
    rec = _records(streams)
    period = streams[0].period_ps if streams else 0
    with open(out, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, 0, rec.size, period))
        fh.write(rec.tobytes())


def read_binary(path) -> tuple[np.ndarray, int]:
    """Return (records, period_ps)."""
    data = Path(path).read_bytes()
    magic, version, _, count, period = HEADER.unpack_from(data, 0)
    if magic != MAGIC or version != VERSION:
        raise ValueError("not an entlink event file")
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    return rec.copy(), period


def write_json(streams: Iterable[EventStream], out) -> None:
    rec = _records(streams)
    payload = [
        {
            "receiver": RECEIVERS[int(r["receiver"])],
            "detector": int(r["detector"]),
            "time_ps": int(r["time_ps"]),
            "pulse_index": int(r["pulse_index"]),
            "offset_ps": int(r["offset_ps"]),
        }
        for r in rec
    ]
    with open(out, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def to_csv_string(streams: Iterable[EventStream]) -> str:
    buf = io.StringIO()
    write_csv(streams, buf)
    return buf.getvalue()
