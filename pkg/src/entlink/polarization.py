"""Analytic measurement statistics of the polarization singlet.

Every function here is pure and vectorizes over numpy arrays. Angles are in
degrees (polarizer angles live on [0, 180)); trigonometry is done in radians.

Outcomes follow the polarizing-splitter convention: ``+1`` is the transmitted
port at the analyzer angle, ``-1`` the reflected (orthogonal) port.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

H = 0.0
V = 90.0
DIAG = 45.0
ANTIDIAG = 135.0

#: (phi_A, phi_A', phi_B, phi_B') maximizing CHSH violation for the singlet.
CANONICAL_SETTINGS = (0.0, 45.0, 22.5, 67.5)


class Outcome(IntEnum):
    PLUS = 1
    MINUS = -1


def normalize_angle(angle):
    """Map an angle (or array of angles) in degrees into [0, 180)."""
    a = np.mod(np.asarray(angle, dtype=float), 180.0)
    # tiny negative inputs round up to exactly 180.0
    a = np.where(a >= 180.0, 0.0, a)
    if a.ndim == 0:
        return float(a)
    return a


def _check_visibility(v):
    arr = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"visibility must lie in [0, 1], got {v!r}")
    return arr


@dataclass(frozen=True)
class VisibilityModel:
    """Per-basis fringe visibility of the distributed state.

    For a setting pair the effective visibility interpolates between the two
    bases as ``v_hv*cos^2(2*m) + v_diag*sin^2(2*m)`` where ``m`` is the mean
    analyzer angle. The mean is taken on the 90-degree circle, so H and V
    (and +45 and -45) are treated as the same basis.
    """

    v_hv: float = 1.0
    v_diag: float = 1.0

    def __post_init__(self):
        _check_visibility(self.v_hv)
        _check_visibility(self.v_diag)

    def effective(self, a, b):
        return self.v_hv + (self.v_diag - self.v_hv) * (1.0 - hv_weight(a, b))

    @classmethod
    def uniform(cls, v: float) -> "VisibilityModel":
        return cls(v, v)


def hv_weight(a, b):
    """cos^2(2*m) for the mean ``m`` of angles a, b on the 90-degree circle.

    When the two angles sit exactly 45 degrees apart (mod 90) the mean is
    undefined; the weight is then 1/2, the limit from either side.
    """
    a4 = np.radians(4.0 * np.asarray(a, dtype=float))
    b4 = np.radians(4.0 * np.asarray(b, dtype=float))
    cx = np.cos(a4) + np.cos(b4)
    cy = np.sin(a4) + np.sin(b4)
    r = np.hypot(cx, cy)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos4m = np.where(r > 1e-12, cx / np.where(r > 1e-12, r, 1.0), 0.0)
    w = 0.5 * (1.0 + cos4m)
    return float(w) if np.ndim(w) == 0 else w


def _resolve_v(v, a, b):
    if isinstance(v, VisibilityModel):
        return v.effective(a, b)
    return _check_visibility(v)


def joint_probability(i, j, a, b, v):
    """Probability of outcomes (i, j) at analyzer angles (a, b).

    ``P = (1 - i*j*v*cos 2(a-b)) / 4``: the singlet prediction with a
    depolarizing admixture of weight ``1 - v``. ``v`` may be a scalar, an
    array, or a :class:`VisibilityModel`.
    """
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any((i != 1) & (i != -1)) or np.any((j != 1) & (j != -1)):
        raise ValueError("outcomes must be +1 or -1")
    vv = _resolve_v(v, a, b)
    c = np.cos(2.0 * np.radians(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
    p = 0.25 * (1.0 - i * j * vv * c)
    return float(p) if np.ndim(p) == 0 else p


def joint_distribution(a, b, v):
    """Array ``[..., 4]`` of probabilities ordered (++, +-, -+, --)."""
    return np.stack(
        [
            np.asarray(joint_probability(1, 1, a, b, v)),
            np.asarray(joint_probability(1, -1, a, b, v)),
            np.asarray(joint_probability(-1, 1, a, b, v)),
            np.asarray(joint_probability(-1, -1, a, b, v)),
        ],
        axis=-1,
    )


def correlation(a, b, v):
    """Analytic correlation coefficient ``E = -v cos 2(a-b)``."""
    vv = _resolve_v(v, a, b)
    e = -vv * np.cos(2.0 * np.radians(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
    return float(e) if np.ndim(e) == 0 else e


def chsh_value(settings: Sequence[float], v) -> float:
    """|E(a,b) - E(a,b') + E(a',b) + E(a',b')| for settings (a, a', b, b')."""
    if len(settings) != 4:
        raise ValueError("settings must be (phi_A, phi_A', phi_B, phi_B')")
    a, a2, b, b2 = settings
    return abs(
        correlation(a, b, v) - correlation(a, b2, v) + correlation(a2, b, v) + correlation(a2, b2, v)
    )


def mean_effective_visibility(settings: Sequence[float], v) -> float:
    """Average effective visibility over the four CHSH setting pairs."""
    a, a2, b, b2 = settings
    pairs = [(a, b), (a, b2), (a2, b), (a2, b2)]
    return float(np.mean([float(_resolve_v(v, x, y)) for x, y in pairs]))


def qber_from_visibility(v):
    vv = _check_visibility(v)
    q = (1.0 - vv) / 2.0
    return float(q) if np.ndim(q) == 0 else q


def visibility_from_qber(q):
    qq = np.asarray(q, dtype=float)
    if np.any(qq < 0) or np.any(qq > 0.5):
        raise ValueError("QBER must lie in [0, 0.5]")
    v = 1.0 - 2.0 * qq
    return float(v) if np.ndim(v) == 0 else v


def binary_entropy(x):
    """h2(x) in bits; h2(0) = h2(1) = 0."""
    xx = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -xx * np.log2(xx) - (1 - xx) * np.log2(1 - xx)
    h = np.nan_to_num(h, nan=0.0)
    return float(h) if np.ndim(h) == 0 else h


def tsirelson_bound() -> float:
    return 2.0 * math.sqrt(2.0)
