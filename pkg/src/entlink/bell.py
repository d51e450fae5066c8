"""Correlation and CHSH estimation from coincidence counts, plus fringe scans.

Error model: counts are Poisson and errors are propagated to first order,
``sigma_E = 2*sqrt(n_same*n_diff/N**3)``; CHSH errors add in quadrature.

CHSH roles: with settings ``(a, a', b, b')`` the four estimates are ordered
``E(a,b), E(a,b'), E(a',b), E(a',b')`` and combined as
``S = |E1 - E2 + E3 + E4|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._rng import derive_int
from .coincidence import (
    CountMatrix,
    _half_width_ps,
    accidental_rate,
    count_matrices,
    match,
    normalize,
)
from .linksim import PS, AnalyzerSetting, LinkConfig, simulate_run
from .polarization import CANONICAL_SETTINGS, correlation

CLASSICAL_BOUND = 2.0

#: published correlation coefficients at (0,22.5), (0,67.5), (45,22.5), (45,67.5)
TABLE1_VALUES = (-0.681, 0.764, -0.421, -0.581)
TABLE1_DEVIATIONS = (0.040, 0.036, 0.052, 0.046)


@dataclass(frozen=True)
class CorrelationEstimate:
    e_value: float
    sigma: float
    settings: tuple[float, float]
    total: float = 0.0

    def to_dict(self) -> dict:
        return {
            "settings": [float(self.settings[0]), float(self.settings[1])],
            "e_value": float(self.e_value),
            "sigma": float(self.sigma),
            "total": float(self.total),
        }


@dataclass(frozen=True)
class ChshResult:
    s_value: float
    sigma: float
    components: tuple[CorrelationEstimate, ...]

    @property
    def significance(self) -> float:
        return violation_significance(self)

    def to_dict(self) -> dict:
        return {
            "S": float(self.s_value),
            "sigma_S": float(self.sigma),
            "significance": _json_float(self.significance),
            "components": [c.to_dict() for c in self.components],
        }


def _json_float(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def estimate_correlation(matrix: CountMatrix) -> CorrelationEstimate:
    n = np.asarray(matrix.n, dtype=float)
    total = n.sum()
    if total <= 0:
        raise ValueError("cannot estimate a correlation from zero coincidences")
    same = n[0, 0] + n[1, 1]
    diff = n[0, 1] + n[1, 0]
    e = (same - diff) / total
    sigma = 2.0 * math.sqrt(same * diff / total**3)
    return CorrelationEstimate(float(e), sigma, tuple(matrix.settings), float(total))


def compute_chsh(estimates: Sequence[CorrelationEstimate]) -> ChshResult:
    if len(estimates) != 4:
        raise ValueError("CHSH needs exactly four correlation estimates")
    e1, e2, e3, e4 = estimates
    roles_ok = (
        e1.settings[0] == e2.settings[0]
        and e3.settings[0] == e4.settings[0]
        and e1.settings[1] == e3.settings[1]
        and e2.settings[1] == e4.settings[1]
    )
    if not roles_ok:
        raise ValueError(
            "estimates must be ordered E(a,b), E(a,b'), E(a',b), E(a',b'); got settings "
            + ", ".join(str(e.settings) for e in estimates)
        )
    s = abs(e1.e_value - e2.e_value + e3.e_value + e4.e_value)
    sigma = math.sqrt(sum(e.sigma**2 for e in estimates))
    return ChshResult(s, sigma, tuple(estimates))


def violation_significance(result: ChshResult) -> float:
    """Standard deviations by which S exceeds the local-realist bound 2."""
    excess = result.s_value - CLASSICAL_BOUND
    if result.sigma == 0:
        if excess > 0:
            return math.inf
        if excess < 0:
            return -math.inf
        return 0.0
    return excess / result.sigma


def chsh_from_published(
    values: Sequence[float] = TABLE1_VALUES,
    deviations: Sequence[float] = TABLE1_DEVIATIONS,
    settings: Sequence[float] = CANONICAL_SETTINGS,
) -> ChshResult:
    a, a2, b, b2 = settings
    pairs = [(a, b), (a, b2), (a2, b), (a2, b2)]
    return compute_chsh(
        [CorrelationEstimate(v, d, p) for v, d, p in zip(values, deviations, pairs)]
    )


def bootstrap_sigma(matrix: CountMatrix, n_boot: int = 200, rng=None) -> float:
    """Standard deviation of E over bootstrap resamples of the coincidence list."""
    rng = np.random.default_rng(rng)
    n = np.asarray(matrix.n, dtype=np.int64).ravel()
    total = int(n.sum())
    draws = rng.multinomial(total, n / total, size=n_boot)
    e = (draws[:, 0] + draws[:, 3] - draws[:, 1] - draws[:, 2]) / total
    return float(np.std(e, ddof=1))


@dataclass
class BellRun:
    result: ChshResult
    matrices: dict
    coincidences: int
    singles_alice: np.ndarray
    singles_bob: np.ndarray

    def to_dict(self) -> dict:
        return {
            **self.result.to_dict(),
            "coincidences": self.coincidences,
            "singles_alice": self.singles_alice.tolist(),
            "singles_bob": self.singles_bob.tolist(),
            "matrices": [self.matrices[k].to_dict() for k in sorted(self.matrices)],
        }


def run_bell_test(
    config: LinkConfig, normalize_counts: bool = True, convention: str = "full"
) -> BellRun:
    """Simulate one passive-basis acquisition and evaluate CHSH from it.

    Alice's two basis angles play (a, a') and Bob's (b, b').
    """
    sim = simulate_run(config)
    records = match(sim.alice, sim.bob, config.window, convention)
    matrices = count_matrices(records, config.duration)
    if normalize_counts:
        matrices = {k: normalize(m) for k, m in matrices.items()}
    order = [(0, 0), (0, 1), (1, 0), (1, 1)]
    result = compute_chsh([estimate_correlation(matrices[k]) for k in order])
    return BellRun(result, matrices, len(records), sim.alice.singles(), sim.bob.singles())


def predicted_correlations(config: LinkConfig, convention: str = "full") -> dict:
    """Closed-form expected E for each basis pair, including accidentals.

    True coincidences carry the model correlation; accidental matches are
    uncorrelated, so the observed E is diluted by C/(C + A).
    """
    half_ps = _half_width_ps(config.window, convention)
    if config.jitter_sigma > 0:
        in_window = math.erf(half_ps / PS / (2.0 * config.jitter_sigma))
    else:
        in_window = 1.0
    r = config.pair_rate
    eta_a, eta_b = config.arm_efficiency_alice, config.arm_efficiency_bob
    pa = (config.settings_alice.splitter_ratio, 1 - config.settings_alice.splitter_ratio)
    pb = (config.settings_bob.splitter_ratio, 1 - config.settings_bob.splitter_ratio)
    out = {}
    for x in (0, 1):
        for y in (0, 1):
            a = config.settings_alice.basis_angles[x]
            b = config.settings_bob.basis_angles[y]
            true = r * eta_a * eta_b * pa[x] * pb[y] * in_window
            singles_a = r * eta_a * pa[x] + config.background_rate_alice / 2
            singles_b = r * eta_b * pb[y] + config.background_rate_bob / 2
            acc = accidental_rate(singles_a, singles_b, config.window, convention)
            frac = true / (true + acc) if true + acc > 0 else 0.0
            out[(x, y)] = correlation(a, b, config.visibility) * frac
    return out


def predicted_chsh(config: LinkConfig, convention: str = "full") -> float:
    e = predicted_correlations(config, convention)
    return abs(e[(0, 0)] - e[(0, 1)] + e[(1, 0)] + e[(1, 1)])


# --- fringe scans -----------------------------------------------------------


@dataclass
class FringeFit:
    offset: float = math.nan
    amplitude: float = math.nan
    phase: float = math.nan  # degrees, position of the fringe minimum
    visibility: float = math.nan
    sigma_visibility: float = math.nan
    ok: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("offset", "amplitude", "phase", "visibility",
                                           "sigma_visibility")}
        d = {k: (None if not math.isfinite(v) else float(v)) for k, v in d.items()}
        d["ok"] = self.ok
        d["error"] = self.error
        return d


def fit_fringe(angles_deg, counts, weighted: bool = False) -> FringeFit:
    """Least-squares fit of ``N = C*(1 - V*cos 2(theta - theta0))``.

    Solved linearly as ``c0 + c1*cos 2theta + c2*sin 2theta``. With
    ``weighted`` each point is weighted by ``1/sqrt(N)``. The visibility error
    uses Poisson variances of the counts.
    """
    theta = np.radians(np.asarray(angles_deg, dtype=float))
    y = np.asarray(counts, dtype=float)
    x = np.column_stack([np.ones_like(theta), np.cos(2 * theta), np.sin(2 * theta)])
    w = 1.0 / np.sqrt(np.maximum(y, 1.0)) if weighted else np.ones_like(y)
    xw = x * w[:, None]
    normal = xw.T @ xw
    if theta.size < 3 or np.linalg.matrix_rank(normal) < 3:
        return FringeFit(error="singular normal equations")
    inv = np.linalg.inv(normal)
    c = inv @ (xw.T @ (y * w))
    c0, c1, c2 = c
    if c0 <= 0:
        return FringeFit(error="non-positive fitted offset")
    amp = math.hypot(c1, c2)
    vis = amp / c0
    phase = 0.5 * math.degrees(math.atan2(-c2, -c1)) % 180.0

    # cov(c) = A var(y) A^T with A the linear map from y to c
    lin = inv @ (xw.T * w)
    cov = lin @ np.diag(np.maximum(y, 0.0)) @ lin.T
    if amp > 0:
        grad = np.array([-amp / c0**2, c1 / (amp * c0), c2 / (amp * c0)])
    else:
        grad = np.array([0.0, 1.0 / c0, 0.0])
    sigma_v = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    return FringeFit(c0, amp, phase, vis, sigma_v, True, None)


@dataclass
class ScanCurve:
    bob_angle: float
    alice_angles: np.ndarray
    counts: np.ndarray
    fit: FringeFit = field(default_factory=FringeFit)

    def to_dict(self) -> dict:
        return {
            "bob_angle": float(self.bob_angle),
            "alice_angles": [float(a) for a in self.alice_angles],
            "counts": [int(c) for c in self.counts],
            "fit": self.fit.to_dict(),
        }

    def to_csv(self) -> str:
        lines = ["alice_angle_deg,counts"]
        lines += [f"{float(a)!r},{int(c)}" for a, c in zip(self.alice_angles, self.counts)]
        return "\n".join(lines) + "\n"


def visibility_scan(
    config: LinkConfig,
    fixed_bob_angles: Sequence[float],
    alice_angles: Sequence[float],
    weighted: bool = False,
    convention: str = "full",
) -> list[ScanCurve]:
    """Coincidence fringes versus Alice's analyzer angle, one per Bob angle.

    Each point is an independent run with both analyzers fixed (both splitter
    outputs at the same angle) and counts the (+, +) coincidences.
    """
    alice_angles = np.asarray(alice_angles, dtype=float)
    if alice_angles.size < 8:
        raise ValueError("a fringe scan needs at least 8 angles")
    curves = []
    for bi, bob_angle in enumerate(fixed_bob_angles):
        counts = np.zeros(alice_angles.size, dtype=np.int64)
        for ai, theta in enumerate(alice_angles):
            cfg = config.with_(
                settings_alice=AnalyzerSetting.fixed(float(theta)),
                settings_bob=AnalyzerSetting.fixed(float(bob_angle)),
                seed=derive_int(config.seed, "scan", bi, ai),
            )
            sim = simulate_run(cfg)
            rec = match(sim.alice, sim.bob, cfg.window, convention)
            counts[ai] = int(np.count_nonzero((rec.alice_outcome > 0) & (rec.bob_outcome > 0)))
        curves.append(ScanCurve(float(bob_angle), alice_angles, counts,
                                fit_fringe(alice_angles, counts, weighted)))
    return curves

