"""Cascade interactive parity reconciliation over an :class:`Endpoint`.

Bob drives the protocol and corrects his key; Alice only answers parity
queries, so her key never changes. Queries are batched: each round Bob sends
one ``ParityRequest`` with every range he needs and Alice answers with one
``ParityResponse`` string. Every parity Alice sends is counted as leakage.

Pass ``i`` splits the (permuted) key into blocks of ``k1 * 2**i`` bits with
``k1 = ceil(0.73 / qber)``. Pass 0 uses the key order; later passes use a
permutation seeded by Bob and announced with the pass. An error fixed in a
later pass re-opens the blocks containing it in every earlier pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import Endpoint, ProtocolAbort
from .keys import bits_to_str, str_to_bits

DEFAULT_PASSES = 4


def first_block_size(qber: float, n: int) -> int:
    if qber <= 0:
        return max(n, 1)
    # 1e-9 keeps exact quotients such as 0.73/(0.73/1024) from rounding up
    return int(min(max(math.ceil(0.73 / qber - 1e-9), 2), max(n, 1)))


def pass_block_sizes(k1: int, n: int, passes: int) -> list[int]:
    return [min(k1 * 2**i, max(n, 1)) for i in range(passes)]


def permutation(seed: int | None, n: int) -> np.ndarray:
    if seed is None:
        return np.arange(n, dtype=np.int64)
    return np.random.default_rng(seed).permutation(n).astype(np.int64)


@dataclass
class CascadeStats:
    parities: int = 0
    rounds: int = 0
    corrections: int = 0
    block_sizes: tuple = ()


async def cascade_alice(bits: np.ndarray, ep: Endpoint) -> int:
    """Answer Bob's parity queries until he signals completion.

    Returns the number of parity bits disclosed.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    n = bits.size
    prefix: dict[int, np.ndarray] = {}
    disclosed = 0
    while True:
        msg = await ep.recv("ParityRequest")
        body = msg.body
        if body.get("done"):
            return disclosed
        setup = body.get("setup")
        if setup is not None:
            perm = permutation(setup["perm_seed"], n)
            table = np.zeros(n + 1, dtype=np.uint8)
            np.cumsum(bits[perm], out=table[1:], dtype=np.uint8)
            prefix[int(setup["pass"])] = table & 1
        flat = body["ranges"]
        if len(flat) % 3:
            raise ProtocolAbort("reconcile", "malformed parity request")
        out = np.empty(len(flat) // 3, dtype=np.uint8)
        for k in range(len(flat) // 3):
            j, s, e = flat[3 * k], flat[3 * k + 1], flat[3 * k + 2]
            table = prefix.get(j)
            if table is None or not 0 <= s < e <= n:
                raise ProtocolAbort("reconcile", f"bad parity range {(j, s, e)}")
            out[k] = table[e] ^ table[s]
        disclosed += out.size
        await ep.send("ParityResponse", {"parities": bits_to_str(out)})


class _BobState:
    def __init__(self, bits: np.ndarray):
        self.bits = np.array(bits, dtype=np.uint8)
        self.n = self.bits.size
        self.perms: list[np.ndarray] = []
        self.pos: list[np.ndarray] = []
        self.permuted: list[np.ndarray] = []
        self.sizes: list[int] = []
        self.alice: dict[tuple[int, int, int], int] = {}
        self.corrections = 0
        self.flipped: set[int] = set()

    def add_pass(self, perm: np.ndarray, size: int) -> None:
        pos = np.empty_like(perm)
        pos[perm] = np.arange(perm.size)
        self.perms.append(perm)
        self.pos.append(pos)
        self.permuted.append(self.bits[perm])
        self.sizes.append(size)

    def parity(self, j: int, s: int, e: int) -> int:
        return int(self.permuted[j][s:e].sum()) & 1

    def flip(self, p: int) -> list[tuple[int, int, int]]:
        """Correct bit p; return earlier-pass blocks that now disagree."""
        # with honest parities every flip fixes a real error, so a bit can
        # only be corrected once; a second flip means a corrupted parity
        if p in self.flipped:
            raise ProtocolAbort("reconcile", f"inconsistent parities: bit {p} corrected twice")
        self.flipped.add(p)
        self.bits[p] ^= 1
        self.corrections += 1
        reopened = []
        for j in range(len(self.perms)):
            q = int(self.pos[j][p])
            self.permuted[j][q] ^= 1
            k = self.sizes[j]
            s = (q // k) * k
            e = min(s + k, self.n)
            if self.parity(j, s, e) != self.alice[(j, s, e)]:
                reopened.append((j, s, e))
        return reopened


async def cascade_bob(
    bits: np.ndarray,
    qber: float,
    ep: Endpoint,
    rng: np.random.Generator,
    passes: int = DEFAULT_PASSES,
    block_size: int | None = None,
) -> tuple[np.ndarray, CascadeStats]:
    """Run Cascade as the correcting party; return corrected bits and stats."""
    st = _BobState(bits)
    n = st.n
    stats = CascadeStats()
    if n == 0:
        await ep.send("ParityRequest", {"done": True})
        return st.bits, stats
    k1 = block_size or first_block_size(qber, n)
    sizes = pass_block_sizes(k1, n, passes)
    stats.block_sizes = tuple(sizes)

    async def ask(ranges, setup=None):
        body = {"ranges": [x for r in ranges for x in r]}
        if setup is not None:
            body["setup"] = setup
        await ep.send("ParityRequest", body)
        reply = await ep.recv("ParityResponse")
        got = str_to_bits(reply.body["parities"])
        if got.size != len(ranges):
            raise ProtocolAbort("reconcile", "parity response length mismatch")
        stats.parities += got.size
        stats.rounds += 1
        for r, p in zip(ranges, got.tolist()):
            st.alice[r] = p

    for i, k in enumerate(sizes):
        seed = None if i == 0 else int(rng.integers(0, 2**63 - 1))
        st.add_pass(permutation(seed, n), k)
        top = [(i, s, min(s + k, n)) for s in range(0, n, k)]
        await ask(top, {"pass": i, "perm_seed": seed})
        searches = [r for r in top if st.parity(*r) != st.alice[r]]
        await _binary_searches(st, searches, ask)

    await ep.send("ParityRequest", {"done": True})
    stats.corrections = st.corrections
    return st.bits, stats


async def _binary_searches(st: _BobState, searches, ask) -> None:
    active = list(dict.fromkeys(searches))
    while active:
        need: list[tuple[int, int, int]] = []
        waiting: list[tuple[int, int, int]] = []
        reopened: list[tuple[int, int, int]] = []
        for j, s, e in active:
            while True:
                if st.parity(j, s, e) == st.alice[(j, s, e)]:
                    break
                if e - s == 1:
                    reopened.extend(st.flip(int(st.perms[j][s])))
                    break
                m = (s + e) // 2
                left = st.alice.get((j, s, m))
                if left is None:
                    need.append((j, s, m))
                    waiting.append((j, s, e))
                    break
                # the right half's parity follows from the parent's
                st.alice.setdefault((j, m, e), st.alice[(j, s, e)] ^ left)
                if st.parity(j, s, m) != left:
                    e = m
                else:
                    s = m
        if need:
            await ask(list(dict.fromkeys(need)))
        active = list(dict.fromkeys(waiting + reopened))
