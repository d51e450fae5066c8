"""Running the two parties together, in one loop, two threads or two processes.

Given the same inputs and seed, all three placements produce byte-identical
transcripts: each party's behaviour depends only on its own seeded stream and
the ordered messages it receives.
"""

from __future__ import annotations

import asyncio
import multiprocessing as mp
import socket
import threading
from dataclasses import dataclass, field
from typing import Awaitable, Callable

import numpy as np

from .._rng import derive_rng
from ..coincidence import Coincidences
from .cascade import CascadeStats, cascade_alice, cascade_bob
from .channel import Endpoint, ProtocolAbort, QueueTransport, StreamTransport, ThreadTransport
from .keys import KeyBlock, confirmation_tag
from .parties import (
    PartyResult,
    PartyView,
    QkdConfig,
    _guard,
    alice_session,
    bob_session,
    estimate_qber_alice,
    estimate_qber_bob,
    sift_alice,
    sift_bob,
)

PLACEMENTS = ("inline", "threads", "processes")

Role = Callable[[Endpoint], Awaitable]


def party_rngs(seed: int):
    return derive_rng(seed, "protocol", "alice"), derive_rng(seed, "protocol", "bob")


def views_from_records(records: Coincidences) -> tuple[PartyView, PartyView]:
    ids = np.arange(len(records), dtype=np.int64)
    return PartyView(ids, records.alice_detector), PartyView(ids, records.bob_detector)


async def _both(alice: Role, bob: Role, ea: Endpoint, eb: Endpoint):
    ra, rb = await asyncio.gather(alice(ea), bob(eb), return_exceptions=True)
    return ra, rb


def run_pair(alice: Role, bob: Role, session: str = "local", tamper_alice=None, tamper_bob=None):
    """Run two role coroutines against each other on one event loop.

    Returns ``(alice_result, bob_result, alice_endpoint, bob_endpoint)``;
    a result is the raised exception if that role failed. A failing role
    sends ``Abort`` so its peer is never left waiting.
    """

    async def main():
        ta, tb = QueueTransport.pair()
        ea = Endpoint(ta, session, "alice", tamper_alice)
        eb = Endpoint(tb, session, "bob", tamper_bob)
        ra, rb = await _both(lambda ep: _guard(ep, alice(ep)), lambda ep: _guard(ep, bob(ep)), ea, eb)
        return ra, rb, ea, eb

    return asyncio.run(main())


def _raise_first(*results):
    for r in results:
        if isinstance(r, BaseException):
            raise r


# --- step-level helpers ---------------------------------------------------------


def sift(alice_view: PartyView, bob_view: PartyView, session: str = "sift"):
    """Both halves of basis sifting; returns (alice_key, bob_key, kept_ids)."""
    ra, rb, _, _ = run_pair(
        lambda ep: sift_alice(alice_view, ep), lambda ep: sift_bob(bob_view, ep), session
    )
    _raise_first(ra, rb)
    return ra[0], rb[0], ra[1]


def estimate_qber(alice: KeyBlock, bob: KeyBlock, sample_fraction: float, seed: int = 0):
    """Returns (alice_key, bob_key, qber) with the sampled positions removed."""
    rng_a, _ = party_rngs(seed)
    ra, rb, _, _ = run_pair(
        lambda ep: estimate_qber_alice(alice, ep, rng_a, sample_fraction),
        lambda ep: estimate_qber_bob(bob, ep),
        "estimate_qber",
    )
    _raise_first(ra, rb)
    return ra[0], rb[0], ra[1]


@dataclass
class ReconcileResult:
    alice: np.ndarray
    bob: np.ndarray
    leakage: int
    stats: CascadeStats
    transcript: list = field(default_factory=list)


def reconcile(alice_bits, bob_bits, qber: float, seed: int = 0, passes: int = 4,
              block_size: int | None = None, tamper_alice=None) -> ReconcileResult:
    """Cascade between two bit arrays; Alice's bits are never modified."""
    alice_bits = np.asarray(alice_bits, dtype=np.uint8)
    _, rng_b = party_rngs(seed)
    ra, rb, ea, _ = run_pair(
        lambda ep: cascade_alice(alice_bits, ep),
        lambda ep: cascade_bob(bob_bits, qber, ep, rng_b, passes, block_size),
        "reconcile",
        tamper_alice=tamper_alice,
    )
    _raise_first(ra, rb)
    return ReconcileResult(alice_bits, rb[0], ra, rb[1], ea.transcript)


def confirm_keys(alice_bits, bob_bits, hash_key: int) -> bool:
    return confirmation_tag(alice_bits, hash_key) == confirmation_tag(bob_bits, hash_key)


# --- whole sessions -------------------------------------------------------------


@dataclass
class SessionResult:
    alice: PartyResult | None
    bob: PartyResult | None
    transcript_alice: list[str]
    transcript_bob: list[str]
    aborted: ProtocolAbort | None = None
    ledger: dict = field(default_factory=dict)

    @property
    def keys_match(self) -> bool:
        return (
            self.alice is not None
            and self.bob is not None
            and np.array_equal(self.alice.key.bits, self.bob.key.bits)
        )

    def transcript_audit(self) -> int:
        """Key-derived bits on the wire, recounted from the transcript text."""
        import json

        total = 0
        for line in self.transcript_alice:
            d = json.loads(line)
            body = d["body"]
            if d["type"] == "SampleBits":
                total += len(body["bits"])
            elif d["type"] == "ParityResponse":
                total += len(body["parities"])
            elif d["type"] == "Confirmation" and "tag" in body:
                total += 64
        return total


def _collect(ra, rb, ea_transcript, eb_transcript) -> SessionResult:
    aborted = None
    for r in (ra, rb):
        if isinstance(r, ProtocolAbort):
            aborted = aborted or r
        elif isinstance(r, BaseException):
            raise r
    if aborted is not None:
        ra = rb = None
    res = SessionResult(ra, rb, list(ea_transcript), list(eb_transcript), aborted)
    if ra is not None:
        led = dict(ra.ledger)
        led["corrections"] = rb.ledger["corrections"]
        # sample errors plus Cascade's corrections: the error rate over the
        # whole sifted key, known to Bob once reconciliation has finished
        sample_errors = int(round(led["qber"] * led["sample_size"]))
        led["qber_sifted"] = (sample_errors + led["corrections"]) / max(led["sifted"], 1)
        led["keys_match"] = res.keys_match
        res.ledger = led
    return res


def _session_inline(va, vb, cfg, seed, session, tamper_alice=None, tamper_bob=None):
    rng_a, rng_b = party_rngs(seed)
    ra, rb, ea, eb = run_pair(
        lambda ep: alice_session(va, cfg, ep, rng_a),
        lambda ep: bob_session(vb, cfg, ep, rng_b),
        session, tamper_alice, tamper_bob,
    )
    return _collect(ra, rb, ea.transcript, eb.transcript)


def _session_threads(va, vb, cfg, seed, session):
    rng_a, rng_b = party_rngs(seed)
    ta, tb = ThreadTransport.pair()
    ea = Endpoint(ta, session, "alice")
    eb = Endpoint(tb, session, "bob")
    out = {}

    def run(name, coro_fn):
        try:
            out[name] = asyncio.run(coro_fn())
        except BaseException as exc:  # surfaced by _collect
            out[name] = exc

    t1 = threading.Thread(target=run, args=("a", lambda: alice_session(va, cfg, ea, rng_a)))
    t2 = threading.Thread(target=run, args=("b", lambda: bob_session(vb, cfg, eb, rng_b)))
    t1.start()
    t2.start()
    t1.join()
    t2.join()
    return _collect(out["a"], out["b"], ea.transcript, eb.transcript)


def _bob_process(port: int, ids, detectors, cfg, seed, session, results) -> None:
    async def main():
        sock = socket.create_connection(("127.0.0.1", port))
        transport = await StreamTransport.from_socket(sock)
        ep = Endpoint(transport, session, "bob")
        _, rng_b = party_rngs(seed)
        try:
            res = await bob_session(PartyView(ids, detectors), cfg, ep, rng_b)
            payload = ("ok", res.key.bits, res.key.leaked_bits, res.key.qber_estimate, res.ledger)
        except ProtocolAbort as exc:
            payload = ("abort", exc.stage, exc.reason)
        finally:
            await transport.close()
        return payload, ep.transcript

    payload, transcript = asyncio.run(main())
    results.put((payload, transcript))


def _session_processes(va, vb, cfg, seed, session):
    ctx = mp.get_context("spawn")
    results = ctx.Queue()
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    port = listener.getsockname()[1]
    proc = ctx.Process(
        target=_bob_process, args=(port, vb.ids, vb.detectors, cfg, seed, session, results)
    )
    proc.start()
    try:
        conn, _ = listener.accept()
    finally:
        listener.close()

    async def main():
        transport = await StreamTransport.from_socket(conn)
        ep = Endpoint(transport, session, "alice")
        rng_a, _ = party_rngs(seed)
        try:
            res = await alice_session(va, cfg, ep, rng_a)
        except ProtocolAbort as exc:
            res = exc
        finally:
            await transport.close()
        return res, ep.transcript

    ra, ta = asyncio.run(main())
    payload, tb = results.get()
    proc.join()
    if payload[0] == "ok":
        _, bits, leaked, qber, ledger = payload
        rb = PartyResult(KeyBlock(bits, "final", leaked, qber), ledger)
    else:
        rb = ProtocolAbort(payload[1], payload[2])
    return _collect(ra, rb, ta, tb)


def run_session(
    records_or_views,
    config: QkdConfig | None = None,
    seed: int = 0,
    placement: str = "inline",
    session: str | None = None,
    duration: float | None = None,
    tamper_alice=None,
    tamper_bob=None,
) -> SessionResult:
    """Run balance, sift, QBER estimation, Cascade, privacy amplification and
    confirmation between the two parties.

    ``records_or_views`` is a :class:`Coincidences` table or a pair of
    :class:`PartyView`. With ``duration`` the ledger gains a key rate.
    A protocol abort is reported in ``SessionResult.aborted``, not raised.
    """
    config = config or QkdConfig()
    if isinstance(records_or_views, Coincidences):
        va, vb = views_from_records(records_or_views)
    else:
        va, vb = records_or_views
    session = session or f"qkd-{seed}"
    if placement not in PLACEMENTS:
        raise ValueError(f"placement must be one of {PLACEMENTS}")
    if (tamper_alice or tamper_bob) and placement != "inline":
        raise ValueError("message tampering is only supported inline")
    if placement == "inline":
        res = _session_inline(va, vb, config, seed, session, tamper_alice, tamper_bob)
    elif placement == "threads":
        res = _session_threads(va, vb, config, seed, session)
    else:
        res = _session_processes(va, vb, config, seed, session)
    if duration and res.ledger:
        res.ledger["duration"] = duration
        res.ledger["rate_bits_per_s"] = res.ledger["final"] / duration
    return res
