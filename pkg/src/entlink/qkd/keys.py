"""Key blocks, final-length bound, Toeplitz hashing and the confirmation hash."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import fftconvolve

from ..polarization import binary_entropy

STAGES = ("raw", "sifted", "reconciled", "final")

# largest prime below 2**64; the confirmation tag is a polynomial hash mod P
HASH_PRIME = 2**64 - 59
HASH_CHUNK_BITS = 32
CONFIRMATION_BITS = 64


@dataclass(frozen=True)
class KeyBlock:
    """An ordered bit string with its stage and leakage ledger."""

    bits: np.ndarray
    stage: str = "raw"
    leaked_bits: int = 0
    qber_estimate: float | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or np.any(bits > 1):
            raise ValueError("key bits must be a 1-d array of 0/1")
        object.__setattr__(self, "bits", bits)
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.leaked_bits < 0:
            raise ValueError("leaked_bits must be nonnegative")

    def __len__(self) -> int:
        return int(self.bits.size)

    def advance(self, stage: str, bits=None, leaked: int = 0, **changes) -> "KeyBlock":
        if STAGES.index(stage) < STAGES.index(self.stage):
            raise ValueError(f"cannot move a key from {self.stage} back to {stage}")
        if leaked < 0:
            raise ValueError("leakage only accumulates")
        return replace(
            self,
            bits=self.bits if bits is None else bits,
            stage=stage,
            leaked_bits=self.leaked_bits + leaked,
            **changes,
        )

    def hex(self) -> str:
        return bits_to_hex(self.bits)


def bits_to_str(bits) -> str:
    return np.asarray(bits, dtype=np.uint8).tobytes().translate(bytes.maketrans(b"\x00\x01", b"01")).decode()


def str_to_bits(text: str) -> np.ndarray:
    raw = np.frombuffer(text.encode("ascii"), dtype=np.uint8)
    if raw.size and not np.all((raw == 48) | (raw == 49)):
        raise ValueError("bit strings may only contain '0' and '1'")
    return (raw - 48).astype(np.uint8)


def bits_to_hex(bits) -> str:
    """Lowercase hex, most significant bit first, zero-padded to whole nibbles."""
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-bits.size) % 8
    packed = np.packbits(np.concatenate([bits, np.zeros(pad, dtype=np.uint8)]))
    text = packed.tobytes().hex()
    nibbles = (bits.size + 3) // 4
    return text[:nibbles]


def final_key_length(
    n: int,
    qber: float,
    leakage: int,
    epsilon: float = 1e-6,
    extra: int = 0,
) -> int:
    """``floor(n*(1 - h2(qber)) - leakage - 2*log2(1/epsilon) - extra)``, floored at 0."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    q = min(max(qber, 0.0), 0.5)
    m = n * (1.0 - binary_entropy(q)) - leakage - 2.0 * math.log2(1.0 / epsilon) - extra
    # guard against 0.9999999 style float noise at exact integers
    return max(int(math.floor(m + 1e-9)), 0)


def toeplitz_bits(seed: int, n: int, m: int) -> np.ndarray:
    """The m + n - 1 defining bits of an m x n binary Toeplitz matrix."""
    return np.random.default_rng(seed).integers(0, 2, size=m + n - 1, dtype=np.uint8)


def toeplitz_hash(bits, m: int, seed: int) -> np.ndarray:
    """Compress ``bits`` to ``m`` bits with a seeded binary Toeplitz matrix.

    Row i, column j of the matrix is ``t[i - j + n - 1]``, so the product is a
    slice of the linear convolution of ``t`` with the key.
    """
    x = np.asarray(bits, dtype=np.uint8)
    n = x.size
    if m <= 0 or n == 0:
        return np.zeros(0, dtype=np.uint8)
    t = toeplitz_bits(seed, n, m)
    conv = fftconvolve(t.astype(np.float64), x.astype(np.float64))
    window = np.rint(conv[n - 1 : n - 1 + m]).astype(np.int64)
    return (window & 1).astype(np.uint8)


def toeplitz_matrix(seed: int, n: int, m: int) -> np.ndarray:
    """Explicit matrix form, for checking :func:`toeplitz_hash` on small keys."""
    t = toeplitz_bits(seed, n, m)
    i = np.arange(m)[:, None]
    j = np.arange(n)[None, :]
    return t[i - j + n - 1]


def confirmation_tag(bits, key: int) -> str:
    """64-bit polynomial hash of a key as 16 hex digits.

    The key is split into 32-bit chunks, prefixed with its length, and
    evaluated as a polynomial at ``key`` modulo ``2**64 - 59``. Two distinct
    keys of at most L chunks collide with probability at most (L + 1)/2**64.
    """
    x = np.asarray(bits, dtype=np.uint8)
    pad = (-x.size) % HASH_CHUNK_BITS
    chunks = np.packbits(np.concatenate([x, np.zeros(pad, dtype=np.uint8)])).view(">u4")
    r = key % HASH_PRIME
    acc = x.size % HASH_PRIME
    for c in chunks.tolist():
        acc = (acc * r + c) % HASH_PRIME
    return f"{acc:016x}"


def monobit_ok(bits) -> bool:
    """|#ones/m - 1/2| <= 3/(2*sqrt(m))."""
    x = np.asarray(bits, dtype=np.uint8)
    m = x.size
    if m == 0:
        return True
    return abs(x.mean() - 0.5) <= 3.0 / (2.0 * math.sqrt(m))
