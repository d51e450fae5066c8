"""Sync-pulse referenced coincidence matching and count matrices.

Both receivers timestamp every click against the locally received sync pulse,
so a constant path-length skew between the arms drops out of the match.

Window convention: ``window`` is the *full* width of the coincidence gate, and
two clicks match when ``|offset_A - offset_B| <= window/2``. The accidental
rate for uncorrelated streams is then ``S_A * S_B * window``. Passing
``convention="half"`` treats ``window`` as the half-width instead (gate
``|delta| <= window``, accidentals ``2 * S_A * S_B * window``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .linksim import PS, EventStream, detector_basis, detector_outcome

CONVENTIONS = ("full", "half")


class UnsortedStream(ValueError):
    pass


def _half_width_ps(window: float, convention: str) -> int:
    if window <= 0:
        raise ValueError("window must be > 0")
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    w = window * PS
    return int(np.floor(w / 2 if convention == "full" else w))


class CoincidenceRecord(NamedTuple):
    alice_event: object
    bob_event: object
    delta: float
    alice_setting: tuple[float, int]  # (analyzer angle, outcome)
    bob_setting: tuple[float, int]


@dataclass
class Coincidences:
    """Matched event pairs, column-wise, sorted by Alice time."""

    alice: EventStream
    bob: EventStream
    alice_index: np.ndarray
    bob_index: np.ndarray

    def __len__(self) -> int:
        return int(self.alice_index.size)

    def __getitem__(self, k: int) -> CoincidenceRecord:
        ia, ib = int(self.alice_index[k]), int(self.bob_index[k])
        return CoincidenceRecord(
            self.alice[ia],
            self.bob[ib],
            float(self.delta_ps[k]) / PS,
            (float(self.alice_angle[k]), int(self.alice_outcome[k])),
            (float(self.bob_angle[k]), int(self.bob_outcome[k])),
        )

    def __iter__(self) -> Iterator[CoincidenceRecord]:
        for k in range(len(self)):
            yield self[k]

    @property
    def alice_detector(self) -> np.ndarray:
        return self.alice.detector[self.alice_index]

    @property
    def bob_detector(self) -> np.ndarray:
        return self.bob.detector[self.bob_index]

    @property
    def alice_outcome(self) -> np.ndarray:
        return detector_outcome(self.alice_detector)

    @property
    def bob_outcome(self) -> np.ndarray:
        return detector_outcome(self.bob_detector)

    @property
    def alice_basis(self) -> np.ndarray:
        return detector_basis(self.alice_detector)

    @property
    def bob_basis(self) -> np.ndarray:
        return detector_basis(self.bob_detector)

    @property
    def alice_angle(self) -> np.ndarray:
        return self.alice.setting.detector_angle(self.alice_detector)

    @property
    def bob_angle(self) -> np.ndarray:
        return self.bob.setting.detector_angle(self.bob_detector)

    @property
    def delta_ps(self) -> np.ndarray:
        return self.alice.offset_ps[self.alice_index] - self.bob.offset_ps[self.bob_index]

    def pairs(self) -> np.ndarray:
        return np.stack([self.alice_index, self.bob_index], axis=1)

    def subset(self, mask) -> "Coincidences":
        return Coincidences(self.alice, self.bob, self.alice_index[mask], self.bob_index[mask])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alice_time_ps", "bob_time_ps", "pulse_index", "delta_ps",
                        "alice_detector", "bob_detector"])
            pulse = self.alice.pulse_index[self.alice_index]
            for row in zip(
                self.alice.time_ps[self.alice_index].tolist(),
                self.bob.time_ps[self.bob_index].tolist(),
                pulse.tolist(), self.delta_ps.tolist(),
                self.alice_detector.tolist(), self.bob_detector.tolist(),
            ):
                w.writerow(row)


def match(
    events_alice: EventStream,
    events_bob: EventStream,
    window: float,
    convention: str = "full",
) -> Coincidences:
    """Greedy earliest-first coincidence matching.

    Candidates are event pairs in the same sync period whose offsets agree
    within the gate. They are taken in order of (earlier time, later time) and
    accepted when neither event is used yet, so the result does not depend on
    which stream is called "alice".
    """
    if events_alice.period_ps != events_bob.period_ps:
        raise ValueError("streams were referenced to different sync periods")
    for s in (events_alice, events_bob):
        if not s.is_sorted():
            raise UnsortedStream(f"{s.receiver} stream is not time-sorted")
    half = _half_width_ps(window, convention)

    ra = events_alice.referenced_ps
    rb = events_bob.referenced_ps
    lo = np.searchsorted(rb, ra - half, side="left")
    hi = np.searchsorted(rb, ra + half, side="right")
    counts = hi - lo
    total = int(counts.sum())
    empty = np.empty(0, dtype=np.int64)
    if total == 0:
        return Coincidences(events_alice, events_bob, empty, empty)

    ia = np.repeat(np.arange(ra.size, dtype=np.int64), counts)
    starts = np.repeat(lo, counts)
    within = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    ib = starts + within

    period = events_alice.period_ps
    same_pulse = (ra[ia] // period) == (rb[ib] // period)
    ia, ib = ia[same_pulse], ib[same_pulse]
    ta, tb = ra[ia], rb[ib]
    order = np.lexsort((ib, ia, np.maximum(ta, tb), np.minimum(ta, tb)))

    used_a = np.zeros(ra.size, dtype=bool)
    used_b = np.zeros(rb.size, dtype=bool)
    out_a, out_b = [], []
    for x, y in zip(ia[order].tolist(), ib[order].tolist()):
        if used_a[x] or used_b[y]:
            continue
        used_a[x] = True
        used_b[y] = True
        out_a.append(x)
        out_b.append(y)
    out_a = np.asarray(out_a, dtype=np.int64)
    out_b = np.asarray(out_b, dtype=np.int64)
    srt = np.argsort(out_a, kind="stable")
    return Coincidences(events_alice, events_bob, out_a[srt], out_b[srt])


def accidental_rate(singles_alice: float, singles_bob: float, window: float,
                    convention: str = "full") -> float:
    """Expected rate of window matches between uncorrelated click streams."""
    if singles_alice < 0 or singles_bob < 0:
        raise ValueError("singles rates must be >= 0")
    if window <= 0:
        raise ValueError("window must be > 0")
    width = window if convention == "full" else 2.0 * window
    return singles_alice * singles_bob * width


@dataclass
class CountMatrix:
    """Coincidence counts N_ij for one analyzer setting pair.

    Row index is Alice's outcome, column Bob's, with index 0 for +1 and 1 for
    -1. ``singles_*`` are per-detector click totals at each receiver over
    ``duration``; ``basis`` records which analyzer basis each side used.
    """

    n: np.ndarray
    settings: tuple[float, float]
    singles_alice: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    singles_bob: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    duration: float = 0.0
    basis: tuple[int, int] = (0, 0)
    normalized: bool = False

    def __post_init__(self):
        self.n = np.asarray(self.n)
        if self.n.shape != (2, 2):
            raise ValueError("count matrix must be 2x2")
        if np.any(self.n < 0):
            raise ValueError("counts must be nonnegative")
        self.singles_alice = np.asarray(self.singles_alice)
        self.singles_bob = np.asarray(self.singles_bob)

    @property
    def total(self):
        return self.n.sum()

    def __add__(self, other: "CountMatrix") -> "CountMatrix":
        if (self.settings, self.basis) != (other.settings, other.basis):
            raise ValueError("cannot merge count matrices for different settings")
        return CountMatrix(
            self.n + other.n,
            self.settings,
            self.singles_alice + other.singles_alice,
            self.singles_bob + other.singles_bob,
            self.duration + other.duration,
            self.basis,
            self.normalized or other.normalized,
        )

    def to_dict(self) -> dict:
        n = self.n.tolist()
        return {
            "settings": [float(self.settings[0]), float(self.settings[1])],
            "basis": list(self.basis),
            "counts": {"++": n[0][0], "+-": n[0][1], "-+": n[1][0], "--": n[1][1]},
            "singles_alice": self.singles_alice.tolist(),
            "singles_bob": self.singles_bob.tolist(),
            "duration": self.duration,
            "normalized": self.normalized,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def accumulate_counts(
    records: Coincidences,
    setting_pair: tuple[int, int] | None = None,
    duration: float = 0.0,
) -> CountMatrix:
    """Tally outcomes of the records taken at one (alice_basis, bob_basis) pair.

    With ``setting_pair=None`` every record is counted and the setting is read
    from the first record (or defaults to basis (0, 0) when empty).
    """
    ab = records.alice_basis
    bb = records.bob_basis
    if setting_pair is None:
        setting_pair = (int(ab[0]), int(bb[0])) if len(records) else (0, 0)
    sel = (ab == setting_pair[0]) & (bb == setting_pair[1])
    oa = records.alice_outcome[sel]
    ob = records.bob_outcome[sel]
    row = (oa < 0).astype(np.int64)
    col = (ob < 0).astype(np.int64)
    n = np.bincount(2 * row + col, minlength=4)[:4].reshape(2, 2).astype(np.int64)
    settings = (
        float(records.alice.setting.basis_angles[setting_pair[0]]),
        float(records.bob.setting.basis_angles[setting_pair[1]]),
    )
    return CountMatrix(
        n, settings, records.alice.singles(), records.bob.singles(), duration, tuple(setting_pair)
    )


def count_matrices(records: Coincidences, duration: float = 0.0) -> dict:
    """All four basis-pair count matrices, keyed by (alice_basis, bob_basis)."""
    return {
        (a, b): accumulate_counts(records, (a, b), duration) for a in (0, 1) for b in (0, 1)
    }


def normalize(matrix: CountMatrix) -> CountMatrix:
    """Correct N_ij for unequal detector efficiencies using singles.

    Each entry is divided by the singles share of Alice's detector i and Bob's
    detector j within their basis, then the matrix is rescaled to its original
    total.
    """
    ba, bb = matrix.basis
    sa = np.asarray(matrix.singles_alice, dtype=float)[2 * ba: 2 * ba + 2]
    sb = np.asarray(matrix.singles_bob, dtype=float)[2 * bb: 2 * bb + 2]
    if np.any(sa <= 0) or np.any(sb <= 0):
        raise ValueError("normalization needs positive singles on every involved detector")
    share_a = sa / sa.sum()
    share_b = sb / sb.sum()
    raw = np.asarray(matrix.n, dtype=float)
    weighted = raw / np.outer(share_a, share_b)
    total = raw.sum()
    if weighted.sum() > 0:
        weighted *= total / weighted.sum()
    return CountMatrix(
        weighted, matrix.settings, matrix.singles_alice, matrix.singles_bob,
        matrix.duration, matrix.basis, True,
    )
