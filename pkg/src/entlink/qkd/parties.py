"""The two roles of the entanglement-based BB84 post-processing protocol.

Each step is a pair of coroutines, one per role, that talk only through their
:class:`~entlink.qkd.channel.Endpoint`. Bit values are the detector port
(0 for the transmitted +1 output, 1 for the reflected -1 output); Bob inverts
his sifted bits because the singlet gives anti-correlated results.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .cascade import DEFAULT_PASSES, cascade_alice, cascade_bob
from .channel import Endpoint, ProtocolAbort
from .keys import (
    CONFIRMATION_BITS,
    KeyBlock,
    bits_to_str,
    confirmation_tag,
    final_key_length,
    str_to_bits,
    toeplitz_hash,
)

PA_MODES = ("formula", "paper-margin")


@dataclass(frozen=True)
class QkdConfig:
    sample_fraction: float = 0.1
    abort_qber: float = 0.11
    passes: int = DEFAULT_PASSES
    block_size: int | None = None
    epsilon: float = 1e-6
    pa_mode: str = "formula"
    balance: bool = True

    def __post_init__(self):
        if not 0 < self.sample_fraction < 1:
            raise ValueError("sample_fraction must lie in (0, 1)")
        if not 0 < self.abort_qber <= 0.5:
            raise ValueError("abort_qber must lie in (0, 0.5]")
        if self.passes < 1:
            raise ValueError("Cascade needs at least one pass")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.pa_mode not in PA_MODES:
            raise ValueError(f"pa_mode must be one of {PA_MODES}")


@dataclass
class PartyView:
    """What one party knows about the shared coincidences: ids and own detector."""

    ids: np.ndarray
    detectors: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.detectors = np.asarray(self.detectors, dtype=np.uint8)
        if self.ids.shape != self.detectors.shape:
            raise ValueError("ids and detectors differ in length")

    def __len__(self) -> int:
        return int(self.ids.size)

    def without(self, ids) -> "PartyView":
        keep = ~np.isin(self.ids, np.asarray(ids, dtype=np.int64))
        return PartyView(self.ids[keep], self.detectors[keep])

    def digest(self) -> str:
        return hashlib.sha256(self.ids.astype("<i8").tobytes()).hexdigest()


@dataclass
class PartyResult:
    key: KeyBlock
    ledger: dict = field(default_factory=dict)


def balancing_discards(view: PartyView, rng: np.random.Generator) -> np.ndarray:
    """Ids to drop so every detector keeps as many events as the rarest one."""
    counts = np.bincount(view.detectors, minlength=4)[:4]
    target = int(counts.min())
    drop = []
    for det in range(4):
        idx = np.flatnonzero(view.detectors == det)
        excess = idx.size - target
        if excess > 0:
            drop.append(np.sort(rng.choice(idx, size=excess, replace=False)))
    if not drop:
        return np.empty(0, dtype=np.int64)
    return np.sort(view.ids[np.concatenate(drop)])


# --- balancing ----------------------------------------------------------------


async def balance_alice(view: PartyView, ep: Endpoint, rng) -> PartyView:
    mine = balancing_discards(view, rng)
    await ep.send("Discard", {"ids": mine.tolist()})
    view = view.without(mine)
    theirs = await ep.recv("Discard")
    return view.without(theirs.body["ids"])


async def balance_bob(view: PartyView, ep: Endpoint, rng) -> PartyView:
    theirs = await ep.recv("Discard")
    view = view.without(theirs.body["ids"])
    mine = balancing_discards(view, rng)
    await ep.send("Discard", {"ids": mine.tolist()})
    return view.without(mine)


# --- sifting ------------------------------------------------------------------


def _bases(view: PartyView) -> np.ndarray:
    return (view.detectors // 2).astype(np.uint8)


def _bits(view: PartyView) -> np.ndarray:
    return (view.detectors % 2).astype(np.uint8)


async def sift_alice(view: PartyView, ep: Endpoint) -> tuple[KeyBlock, np.ndarray]:
    await ep.send(
        "BasisReveal",
        {"count": len(view), "digest": view.digest(), "bases": bits_to_str(_bases(view))},
    )
    reply = await ep.recv("BasisReveal")
    theirs = str_to_bits(reply.body["bases"])
    same = _bases(view) == theirs
    return KeyBlock(_bits(view)[same], "sifted"), view.ids[same]


async def sift_bob(view: PartyView, ep: Endpoint) -> tuple[KeyBlock, np.ndarray]:
    msg = await ep.recv("BasisReveal")
    body = msg.body
    if body["count"] != len(view) or body["digest"] != view.digest():
        raise ProtocolAbort("sift", "coincidence identifiers differ between parties")
    await ep.send("BasisReveal", {"bases": bits_to_str(_bases(view))})
    theirs = str_to_bits(body["bases"])
    same = _bases(view) == theirs
    return KeyBlock(1 - _bits(view)[same], "sifted"), view.ids[same]


# --- parameter estimation -----------------------------------------------------


def _sample_size(n: int, fraction: float) -> int:
    return int(round(n * fraction))


async def estimate_qber_alice(key: KeyBlock, ep: Endpoint, rng, fraction: float):
    n = len(key)
    k = _sample_size(n, fraction)
    if k < 1:
        raise ProtocolAbort("estimate_qber", "empty sample")
    idx = np.sort(rng.choice(n, size=k, replace=False))
    await ep.send("SampleIndices", {"indices": idx.tolist()})
    await ep.send("SampleBits", {"bits": bits_to_str(key.bits[idx])})
    report = await ep.recv("QberReport")
    errors, size = int(report.body["errors"]), int(report.body["size"])
    if size != k:
        raise ProtocolAbort("estimate_qber", "sample size mismatch")
    qber = errors / k
    keep = np.ones(n, dtype=bool)
    keep[idx] = False
    return key.advance("sifted", key.bits[keep], leaked=k, qber_estimate=qber), qber


async def estimate_qber_bob(key: KeyBlock, ep: Endpoint):
    idx_msg = await ep.recv("SampleIndices")
    bits_msg = await ep.recv("SampleBits")
    idx = np.asarray(idx_msg.body["indices"], dtype=np.int64)
    theirs = str_to_bits(bits_msg.body["bits"])
    n = len(key)
    if idx.size == 0:
        raise ProtocolAbort("estimate_qber", "empty sample")
    if theirs.size != idx.size or np.any(idx < 0) or np.any(idx >= n):
        raise ProtocolAbort("estimate_qber", "malformed sample")
    errors = int(np.count_nonzero(key.bits[idx] != theirs))
    await ep.send("QberReport", {"errors": errors, "size": int(idx.size)})
    qber = errors / idx.size
    keep = np.ones(n, dtype=bool)
    keep[idx] = False
    return key.advance("sifted", key.bits[keep], leaked=int(idx.size), qber_estimate=qber), qber


# --- reconciliation -------------------------------------------------------------


async def reconcile_alice(key: KeyBlock, ep: Endpoint) -> tuple[KeyBlock, int]:
    leaked = await cascade_alice(key.bits, ep)
    return key.advance("reconciled", leaked=leaked), leaked


async def reconcile_bob(key: KeyBlock, qber: float, ep: Endpoint, rng, cfg: QkdConfig):
    bits, stats = await cascade_bob(key.bits, qber, ep, rng, cfg.passes, cfg.block_size)
    return key.advance("reconciled", bits, leaked=stats.parities), stats


# --- privacy amplification ------------------------------------------------------


def target_length(n: int, qber: float, leakage: int, cfg: QkdConfig) -> int:
    if cfg.pa_mode == "paper-margin":
        # half of what remains once the disclosed parities are written off
        return max(n - leakage, 0) // 2
    return final_key_length(n, qber, leakage, cfg.epsilon, extra=CONFIRMATION_BITS)


def privacy_amplify(key: KeyBlock, length: int, seed: int) -> KeyBlock:
    """Toeplitz-hash a reconciled key down to ``length`` bits."""
    if key.stage != "reconciled":
        raise ValueError(f"privacy amplification needs a reconciled key, got {key.stage}")
    return key.advance("final", toeplitz_hash(key.bits, length, seed))


async def amplify_alice(key: KeyBlock, qber: float, leakage: int, ep: Endpoint, rng, cfg: QkdConfig):
    m = target_length(len(key), qber, leakage, cfg)
    seed = int(rng.integers(0, 2**63 - 1))
    hash_key = int(rng.integers(1, 2**63 - 1))
    await ep.send("HashSeed", {"toeplitz_seed": seed, "length": m, "hash_key": hash_key})
    return privacy_amplify(key, m, seed), hash_key


async def amplify_bob(key: KeyBlock, qber: float, leakage: int, ep: Endpoint, cfg: QkdConfig):
    msg = await ep.recv("HashSeed")
    m = target_length(len(key), qber, leakage, cfg)
    if msg.body["length"] != m:
        raise ProtocolAbort("privacy_amplify", "parties disagree on the final length")
    return privacy_amplify(key, m, int(msg.body["toeplitz_seed"])), int(msg.body["hash_key"])


# --- confirmation ---------------------------------------------------------------


async def confirm_alice(key: KeyBlock, hash_key: int, ep: Endpoint) -> KeyBlock:
    await ep.send("Confirmation", {"tag": confirmation_tag(key.bits, hash_key)})
    reply = await ep.recv("Confirmation")
    if not reply.body.get("match"):
        raise ProtocolAbort("confirm", "confirmation hash mismatch")
    return key.advance("final", leaked=CONFIRMATION_BITS)


async def confirm_bob(key: KeyBlock, hash_key: int, ep: Endpoint) -> KeyBlock:
    msg = await ep.recv("Confirmation")
    ok = msg.body["tag"] == confirmation_tag(key.bits, hash_key)
    await ep.send("Confirmation", {"match": ok})
    if not ok:
        raise ProtocolAbort("confirm", "confirmation hash mismatch")
    return key.advance("final", leaked=CONFIRMATION_BITS)


# --- whole sessions -------------------------------------------------------------


async def _guard(ep: Endpoint, coro):
    try:
        return await coro
    except ProtocolAbort as exc:
        if not exc.reason.startswith("peer aborted"):
            await ep.abort(exc.stage, exc.reason)
        raise
    except Exception as exc:
        await ep.abort("internal", repr(exc))
        raise


def _ledger(coinc, balanced, sifted, sample, qber, key_after_sample, ec_leak, final, cfg):
    n = len(key_after_sample)
    return {
        "coincidences": coinc,
        "balanced": balanced,
        "sifted": sifted,
        "sample_size": sample,
        "after_sampling": n,
        "qber": qber,
        "reconciled": n,
        "reconciliation_leakage": ec_leak,
        "reconciled_effective": n - ec_leak,
        "final": final,
        "pa_mode": cfg.pa_mode,
    }


async def alice_session(view: PartyView, cfg: QkdConfig, ep: Endpoint, rng) -> PartyResult:
    async def run():
        coinc = len(view)
        v = await balance_alice(view, ep, rng) if cfg.balance else view
        key, _ = await sift_alice(v, ep)
        sifted = len(key)
        key, qber = await estimate_qber_alice(key, ep, rng, cfg.sample_fraction)
        sample = sifted - len(key)
        if qber > cfg.abort_qber:
            raise ProtocolAbort("estimate_qber", f"QBER {qber:.4f} above {cfg.abort_qber}")
        after = key
        key, ec_leak = await reconcile_alice(key, ep)
        key, hash_key = await amplify_alice(key, qber, ec_leak, ep, rng, cfg)
        key = await confirm_alice(key, hash_key, ep)
        ledger = _ledger(coinc, len(v), sifted, sample, qber, after, ec_leak, len(key), cfg)
        ledger["leaked_bits"] = key.leaked_bits
        return PartyResult(key, ledger)

    return await _guard(ep, run())


async def bob_session(view: PartyView, cfg: QkdConfig, ep: Endpoint, rng) -> PartyResult:
    async def run():
        coinc = len(view)
        v = await balance_bob(view, ep, rng) if cfg.balance else view
        key, _ = await sift_bob(v, ep)
        sifted = len(key)
        key, qber = await estimate_qber_bob(key, ep)
        sample = sifted - len(key)
        if qber > cfg.abort_qber:
            raise ProtocolAbort("estimate_qber", f"QBER {qber:.4f} above {cfg.abort_qber}")
        after = key
        key, stats = await reconcile_bob(key, qber, ep, rng, cfg)
        key, hash_key = await amplify_bob(key, qber, stats.parities, ep, cfg)
        key = await confirm_bob(key, hash_key, ep)
        ledger = _ledger(coinc, len(v), sifted, sample, qber, after, stats.parities, len(key), cfg)
        ledger["leaked_bits"] = key.leaked_bits
        ledger["corrections"] = stats.corrections
        return PartyResult(key, ledger)

    return await _guard(ep, run())

