import json
import math

import numpy as np
import pytest

from entlink.polarization import binary_entropy
from entlink.qkd.cascade import first_block_size, pass_block_sizes, permutation
from entlink.qkd.channel import ProtocolAbort
from entlink.qkd.messages import ProtocolMessage
from entlink.qkd.session import reconcile


def _noisy(n, q, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n, dtype=np.uint8)
    return a, a ^ (rng.random(n) < q).astype(np.uint8)


def test_block_schedule():
    assert first_block_size(0.0583, 10_000) == math.ceil(0.73 / 0.0583)
    assert first_block_size(0.73 / 1024, 4096) == 1024
    assert first_block_size(0.0, 500) == 500
    assert first_block_size(0.5, 100) == 2
    assert pass_block_sizes(13, 100, 4) == [13, 26, 52, 100]


def test_permutation_seeded():
    assert np.array_equal(permutation(None, 5), np.arange(5))
    p = permutation(3, 100)
    assert np.array_equal(np.sort(p), np.arange(100))
    assert np.array_equal(p, permutation(3, 100))


def test_error_free_keys_cost_only_top_level_parities():
    a, _ = _noisy(5000, 0, 1)
    r = reconcile(a, a.copy(), 0.05, seed=1)
    blocks = sum(math.ceil(5000 / k) for k in pass_block_sizes(first_block_size(0.05, 5000), 5000, 4))
    assert r.leakage == blocks == r.stats.parities
    assert r.stats.corrections == 0


def test_single_error_found_in_eleven_parities():
    a, _ = _noisy(1024, 0, 2)
    b = a.copy()
    b[700] ^= 1
    r = reconcile(a, b, 0.73 / 1024, passes=1)
    assert r.stats.block_sizes == (1024,)
    assert r.leakage == math.ceil(math.log2(1024)) + 1
    assert np.array_equal(r.bob, a)


def test_alice_key_never_changes():
    a, b = _noisy(4000, 0.06, 3)
    before = a.copy()
    r = reconcile(a, b, 0.06, seed=3)
    assert np.array_equal(a, before)
    assert np.array_equal(r.alice, before)
    assert np.array_equal(r.bob, a)


@pytest.mark.parametrize("q", [0.01, 0.03, 0.0583, 0.08])
def test_corrects_across_error_rates(q):
    fails = 0
    for s in range(10):
        a, b = _noisy(4000, q, 100 + s)
        fails += not np.array_equal(reconcile(a, b, q, seed=s).bob, a)
    assert fails == 0


def test_leakage_near_shannon_bound():
    a, b = _noisy(10_000, 0.0583, 9)
    r = reconcile(a, b, 0.0583, seed=9)
    ratio = r.leakage / (10_000 * binary_entropy(0.0583))
    assert 1.1 <= ratio <= 1.6


def test_parities_counted_from_transcript():
    a, b = _noisy(3000, 0.05, 4)
    r = reconcile(a, b, 0.05, seed=4)
    sent = sum(len(json.loads(line)["body"]["parities"]) for line in r.transcript
               if json.loads(line)["type"] == "ParityResponse" and json.loads(line)["dir"] == "send")
    assert sent == r.leakage


def test_corrupted_parity_cannot_loop_forever():
    a, b = _noisy(3000, 0.05, 5)
    count = {"n": 0}

    def tamper(msg: ProtocolMessage) -> ProtocolMessage:
        if msg.type != "ParityResponse":
            return msg
        count["n"] += 1
        if count["n"] != 2:
            return msg
        p = msg.body["parities"]
        flipped = ("1" if p[0] == "0" else "0") + p[1:]
        return ProtocolMessage(msg.session, msg.seq, msg.type, {"parities": flipped})

    try:
        r = reconcile(a, b, 0.05, seed=5, tamper_alice=tamper)
    except ProtocolAbort as exc:
        assert exc.stage == "reconcile"
    else:
        # if the corruption slipped through, the keys must differ so that
        # confirmation catches it
        assert not np.array_equal(r.bob, a)


def test_bad_range_aborts():
    a, b = _noisy(100, 0.05, 6)

    def tamper(msg):
        if msg.type == "ParityRequest" and "ranges" in msg.body:
            return ProtocolMessage(msg.session, msg.seq, msg.type,
                                   {**msg.body, "ranges": [0, 50, 500]})
        return msg

    from entlink.qkd.cascade import cascade_alice, cascade_bob
    from entlink.qkd.session import run_pair

    ra, rb, _, _ = run_pair(lambda ep: cascade_alice(a, ep),
                            lambda ep: cascade_bob(b, 0.05, ep, np.random.default_rng(0)),
                            tamper_bob=tamper)
    assert isinstance(ra, ProtocolAbort) and ra.stage == "reconcile"
    assert isinstance(rb, ProtocolAbort) and rb.reason.startswith("peer aborted")
