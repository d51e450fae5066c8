"""Seeded Monte-Carlo generator of time-tagged detector clicks at two receivers.

Times are kept as integer picoseconds so that sync-pulse indices and offsets
are exactly recomputable and event streams are byte-reproducible.

Detector numbering at each receiver: ``detector = 2*basis + port`` where
``basis`` picks one of the two analyzer angles behind the passive splitter and
``port`` is 0 for the transmitted (+1) and 1 for the reflected (-1) output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple

import numpy as np

from ._rng import derive_rng
from .polarization import VisibilityModel, joint_distribution, normalize_angle

PS = 1_000_000_000_000  # picoseconds per second
SPEED_OF_LIGHT = 299_792_458.0

DEFAULT_MAX_EVENTS = 60_000_000

RECEIVERS = ("alice", "bob")


class SimulationTooLarge(ValueError):
    pass


def detector_basis(detector):
    return np.asarray(detector).astype(np.int64) // 2


def detector_outcome(detector):
    """+1 for even (transmitted) detectors, -1 for odd."""
    return 1 - 2 * (np.asarray(detector).astype(np.int64) % 2)


@dataclass(frozen=True)
class AnalyzerSetting:
    """Two analyzer angles selected passively by a beam splitter.

    ``splitter_ratio`` is the probability of routing a photon to the first
    basis.
    """

    basis_angles: tuple[float, float] = (0.0, 45.0)
    splitter_ratio: float = 0.5

    def __post_init__(self):
        if len(self.basis_angles) != 2:
            raise ValueError("an analyzer has exactly two basis angles")
        object.__setattr__(
            self, "basis_angles", tuple(normalize_angle(float(a)) for a in self.basis_angles)
        )
        if not 0.0 < self.splitter_ratio < 1.0:
            raise ValueError("splitter_ratio must lie in (0, 1)")

    def detector_angle(self, detector):
        angles = np.asarray(self.basis_angles)
        return angles[detector_basis(detector)]

    @classmethod
    def fixed(cls, angle: float) -> "AnalyzerSetting":
        """Both splitter outputs analyze at the same angle."""
        return cls((angle, angle), 0.5)


@dataclass(frozen=True)
class LinkConfig:
    """Everything needed to simulate one acquisition run.

    Rates are per second, times in seconds. Background is spread uniformly
    over a receiver's four detectors and includes dark counts and unpaired
    photons.
    """

    pair_rate: float = 10_000.0
    arm_efficiency_alice: float = 0.15
    arm_efficiency_bob: float = 0.2
    background_rate_alice: float = 0.0
    background_rate_bob: float = 0.0
    coupler_efficiencies_alice: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    coupler_efficiencies_bob: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    sync_pulse_rate: float = 10_000.0
    jitter_sigma: float = 3e-9
    window: float = 20e-9
    visibility: VisibilityModel = field(default_factory=VisibilityModel)
    settings_alice: AnalyzerSetting = field(default_factory=lambda: AnalyzerSetting((0.0, 45.0)))
    settings_bob: AnalyzerSetting = field(default_factory=lambda: AnalyzerSetting((22.5, 67.5)))
    path_delay_alice: float = 7.7e3 / SPEED_OF_LIGHT
    path_delay_bob: float = 5.3e3 / SPEED_OF_LIGHT
    duration: float = 1.0
    seed: int = 0

    def __post_init__(self):
        rates = {
            "pair_rate": self.pair_rate,
            "background_rate_alice": self.background_rate_alice,
            "background_rate_bob": self.background_rate_bob,
            "sync_pulse_rate": self.sync_pulse_rate,
            "jitter_sigma": self.jitter_sigma,
            "path_delay_alice": self.path_delay_alice,
            "path_delay_bob": self.path_delay_bob,
        }
        for name, value in rates.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
        for name in ("arm_efficiency_alice", "arm_efficiency_bob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
        for name in ("coupler_efficiencies_alice", "coupler_efficiencies_bob"):
            value = tuple(float(x) for x in getattr(self, name))
            if len(value) != 4 or any(not 0.0 <= x <= 1.0 for x in value):
                raise ValueError(f"{name} must be four fractions in [0, 1]")
            object.__setattr__(self, name, value)
        if not self.window > 0:
            raise ValueError("window must be > 0")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if not self.sync_pulse_rate > 0:
            raise ValueError("sync_pulse_rate must be > 0")
        if not isinstance(self.visibility, VisibilityModel):
            raise TypeError("visibility must be a VisibilityModel")

    def with_(self, **changes) -> "LinkConfig":
        return replace(self, **changes)

    @property
    def sync_period_ps(self) -> int:
        return int(round(PS / self.sync_pulse_rate))

    def expected_singles(self, receiver: str) -> float:
        """Mean click rate at a receiver before coupler losses."""
        eta = self.arm_efficiency_alice if receiver == "alice" else self.arm_efficiency_bob
        bg = self.background_rate_alice if receiver == "alice" else self.background_rate_bob
        return self.pair_rate * eta + bg

    def expected_events(self) -> float:
        return self.duration * (
            self.pair_rate + self.background_rate_alice + self.background_rate_bob
        )


class TimeTaggedEvent(NamedTuple):
    receiver: str
    detector: int
    time: float
    pulse_index: int
    offset: float


@dataclass
class EventStream:
    """Time-sorted clicks at one receiver, stored column-wise.

    ``sync_phase_ps`` is the local arrival time of sync pulse 0; pulse ``k``
    arrives at ``sync_phase_ps + k*period_ps``.
    """

    receiver: str
    time_ps: np.ndarray
    detector: np.ndarray
    period_ps: int
    sync_phase_ps: int
    setting: AnalyzerSetting
    pair_id: np.ndarray | None = None

    def __post_init__(self):
        self.time_ps = np.asarray(self.time_ps, dtype=np.int64)
        self.detector = np.asarray(self.detector, dtype=np.uint8)
        if self.time_ps.shape != self.detector.shape:
            raise ValueError("time and detector columns differ in length")
        if self.pair_id is not None:
            self.pair_id = np.asarray(self.pair_id, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.time_ps.size)

    def __getitem__(self, k: int) -> TimeTaggedEvent:
        ref = int(self.time_ps[k]) - self.sync_phase_ps
        pulse, offset = divmod(ref, self.period_ps)
        return TimeTaggedEvent(
            self.receiver, int(self.detector[k]), float(self.time_ps[k]) / PS, pulse, offset / PS
        )

    def __iter__(self) -> Iterator[TimeTaggedEvent]:
        for k in range(len(self)):
            yield self[k]

    @property
    def referenced_ps(self) -> np.ndarray:
        """Time since sync pulse 0 arrived (pulse_index*period + offset)."""
        return self.time_ps - self.sync_phase_ps

    @property
    def pulse_index(self) -> np.ndarray:
        return self.referenced_ps // self.period_ps

    @property
    def offset_ps(self) -> np.ndarray:
        return self.referenced_ps % self.period_ps

    @property
    def time(self) -> np.ndarray:
        return self.time_ps / PS

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.time_ps) >= 0))

    def singles(self) -> np.ndarray:
        """Clicks per detector (length 4)."""
        return np.bincount(self.detector, minlength=4)[:4].astype(np.int64)

    def subset(self, mask: np.ndarray) -> "EventStream":
        return EventStream(
            self.receiver,
            self.time_ps[mask],
            self.detector[mask],
            self.period_ps,
            self.sync_phase_ps,
            self.setting,
            None if self.pair_id is None else self.pair_id[mask],
        )


@dataclass
class SimulationResult:
    alice: EventStream
    bob: EventStream
    truth: np.ndarray  # (k, 2) int64: event index at alice, event index at bob
    config: LinkConfig

    def __iter__(self):
        # allows ``alice, bob, truth = simulate_run(cfg)``
        return iter((self.alice, self.bob, self.truth))


def sample_outcomes(rng: np.random.Generator, a, b, v, size: int | None = None):
    """Draw joint outcomes (i, j) in {+1, -1} from the singlet model.

    ``a``, ``b`` and ``v`` broadcast against each other; ``size`` is needed
    only when all three are scalars.
    """
    probs = joint_distribution(a, b, v)
    if probs.ndim == 1:
        if size is None:
            raise ValueError("size is required for scalar settings")
        probs = np.broadcast_to(probs, (size, 4))
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    k = (u[:, None] >= cdf[:, :3]).sum(axis=1)
    i = np.where(k < 2, 1, -1)
    j = np.where(k % 2 == 0, 1, -1)
    return i.astype(np.int8), j.astype(np.int8)


def apply_coupler_imbalance(
    events: EventStream, coupler_efficiencies, rng: np.random.Generator
) -> EventStream:
    """Keep each click with its detector's coupling efficiency."""
    eff = np.asarray(coupler_efficiencies, dtype=float)
    if eff.shape != (4,) or np.any(eff < 0) or np.any(eff > 1):
        raise ValueError("coupler efficiencies must be four fractions in [0, 1]")
    keep = rng.random(len(events)) < eff[events.detector]
    return events.subset(keep)


def _background(rng, rate, duration_ps):
    """Uniform-detector Poisson background clicks on [0, duration)."""
    times, dets = [], []
    for det in range(4):
        n = rng.poisson(rate / 4.0 * duration_ps / PS)
        times.append(rng.integers(0, duration_ps, size=n, dtype=np.int64))
        dets.append(np.full(n, det, dtype=np.uint8))
    return np.concatenate(times), np.concatenate(dets)


def simulate_run(config: LinkConfig, max_events: int = DEFAULT_MAX_EVENTS) -> SimulationResult:
    """Generate both receivers' event streams for one acquisition run.

    Pairs are emitted as a Poisson process; each photon independently survives
    its arm, is routed to a basis by the splitter, and its outcome is drawn
    jointly with its partner's from the singlet model. Surviving clicks get
    independent Gaussian timing jitter; background clicks are unpolarized.
    Returns the two streams and the ground-truth pairing table.
    """
    expected = config.expected_events()
    if expected > max_events:
        raise SimulationTooLarge(
            f"expected {expected:.3g} events exceeds the cap of {max_events}; "
            "shorten the run or raise max_events"
        )

    duration_ps = int(round(config.duration * PS))
    seed = config.seed
    rng = derive_rng(seed, "link", "pairs")

    n_pairs = int(rng.poisson(config.pair_rate * config.duration))
    t_pair = np.sort(rng.integers(0, duration_ps, size=n_pairs, dtype=np.int64))
    alive_a = rng.random(n_pairs) < config.arm_efficiency_alice
    alive_b = rng.random(n_pairs) < config.arm_efficiency_bob
    basis_a = (rng.random(n_pairs) >= config.settings_alice.splitter_ratio).astype(np.uint8)
    basis_b = (rng.random(n_pairs) >= config.settings_bob.splitter_ratio).astype(np.uint8)
    angle_a = np.asarray(config.settings_alice.basis_angles)[basis_a]
    angle_b = np.asarray(config.settings_bob.basis_angles)[basis_b]
    # a lone survivor keeps its joint-draw outcome: the marginal is exactly 1/2
    out_a, out_b = sample_outcomes(rng, angle_a, angle_b, config.visibility)
    det_a = (2 * basis_a + (out_a < 0)).astype(np.uint8)
    det_b = (2 * basis_b + (out_b < 0)).astype(np.uint8)
    pair_ids = np.arange(n_pairs, dtype=np.int64)

    streams = {}
    sides = (
        ("alice", alive_a, det_a, config.background_rate_alice, config.coupler_efficiencies_alice,
         config.path_delay_alice, config.settings_alice),
        ("bob", alive_b, det_b, config.background_rate_bob, config.coupler_efficiencies_bob,
         config.path_delay_bob, config.settings_bob),
    )
    for name, alive, det, bg_rate, couplers, delay, setting in sides:
        jrng = derive_rng(seed, "link", "jitter", name)
        sig_t = t_pair[alive]
        if config.jitter_sigma > 0:
            jit = np.rint(jrng.normal(0.0, config.jitter_sigma * PS, size=sig_t.size)).astype(np.int64)
            sig_t = sig_t + jit
        brng = derive_rng(seed, "link", "background", name)
        bg_t, bg_d = _background(brng, bg_rate, duration_ps)

        t_ref = np.concatenate([sig_t, bg_t])
        det_all = np.concatenate([det[alive], bg_d])
        pid = np.concatenate([pair_ids[alive], np.full(bg_t.size, -1, dtype=np.int64)])
        inside = (t_ref >= 0) & (t_ref < duration_ps)
        t_ref, det_all, pid = t_ref[inside], det_all[inside], pid[inside]
        order = np.argsort(t_ref, kind="stable")

        delay_ps = int(round(delay * PS))
        stream = EventStream(
            name, t_ref[order] + delay_ps, det_all[order], config.sync_period_ps, delay_ps,
            setting, pid[order],
        )
        crng = derive_rng(seed, "link", "coupler", name)
        streams[name] = apply_coupler_imbalance(stream, couplers, crng)

    truth = ground_truth_pairs(streams["alice"], streams["bob"])
    return SimulationResult(streams["alice"], streams["bob"], truth, config)


def ground_truth_pairs(alice: EventStream, bob: EventStream) -> np.ndarray:
    """Index pairs (alice_event, bob_event) that are two halves of one pair."""
    ia = np.flatnonzero(alice.pair_id >= 0)
    ib = np.flatnonzero(bob.pair_id >= 0)
    common, xa, xb = np.intersect1d(alice.pair_id[ia], bob.pair_id[ib], return_indices=True)
    out = np.stack([ia[xa], ib[xb]], axis=1)
    return out[np.argsort(out[:, 0], kind="stable")]
