import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entlink.polarization import (
    CANONICAL_SETTINGS,
    VisibilityModel,
    binary_entropy,
    chsh_value,
    correlation,
    hv_weight,
    joint_distribution,
    joint_probability,
    mean_effective_visibility,
    normalize_angle,
    qber_from_visibility,
    tsirelson_bound,
    visibility_from_qber,
)

angles = st.floats(-720, 720, allow_nan=False)
vis = st.floats(0, 1)


def test_equal_angles_are_anticorrelated():
    assert joint_probability(1, 1, 30, 30, 1.0) == pytest.approx(0.0)
    assert joint_probability(1, -1, 30, 30, 1.0) == pytest.approx(0.5)
    assert correlation(0, 0, 1.0) == pytest.approx(-1.0)
    assert correlation(0, 90, 1.0) == pytest.approx(1.0)


def test_zero_visibility_is_uniform():
    assert np.allclose(joint_distribution(10, 77, 0.0), 0.25)


@given(angles, angles, vis)
def test_distribution_sums_to_one_with_uniform_marginals(a, b, v):
    p = joint_distribution(a, b, v)
    assert np.all(p >= -1e-15)
    assert p.sum() == pytest.approx(1.0)
    assert p[0] + p[1] == pytest.approx(0.5)  # Alice +1
    assert p[0] + p[2] == pytest.approx(0.5)  # Bob +1


@given(angles, angles, vis)
def test_correlation_matches_probabilities(a, b, v):
    p = joint_distribution(a, b, v)
    assert p[0] + p[3] - p[1] - p[2] == pytest.approx(correlation(a, b, v), abs=1e-12)


@given(angles, angles, vis)
def test_period_is_180_degrees(a, b, v):
    assert correlation(a + 180, b, v) == pytest.approx(correlation(a, b, v), abs=1e-9)


def test_ideal_chsh_reaches_tsirelson():
    assert chsh_value(CANONICAL_SETTINGS, 1.0) == pytest.approx(2 * math.sqrt(2))
    assert tsirelson_bound() == pytest.approx(2.8284271247)


@given(vis)
def test_chsh_scales_with_visibility(v):
    assert chsh_value(CANONICAL_SETTINGS, v) == pytest.approx(v * 2 * math.sqrt(2))


def test_chsh_needs_four_settings():
    with pytest.raises(ValueError):
        chsh_value((0, 45, 22.5), 1.0)


def test_bad_inputs_rejected():
    with pytest.raises(ValueError):
        joint_probability(0, 1, 0, 0, 1.0)
    with pytest.raises(ValueError):
        correlation(0, 0, 1.2)
    with pytest.raises(ValueError):
        VisibilityModel(0.9, -0.1)


def test_hv_weight_basis_cases():
    assert hv_weight(0, 0) == pytest.approx(1.0)
    assert hv_weight(0, 90) == pytest.approx(1.0)  # H and V are one basis
    assert hv_weight(45, 45) == pytest.approx(0.0)
    assert hv_weight(45, 135) == pytest.approx(0.0)
    assert hv_weight(0, 45) == pytest.approx(0.5)  # undefined mean, symmetric limit
    assert hv_weight(22.5, 22.5) == pytest.approx(0.5)


@given(angles, angles)
def test_hv_weight_in_unit_interval_and_symmetric(a, b):
    w = hv_weight(a, b)
    assert -1e-12 <= w <= 1 + 1e-12
    assert w == pytest.approx(hv_weight(b, a), abs=1e-9)


def test_visibility_model_picks_basis():
    m = VisibilityModel(0.94, 0.89)
    assert m.effective(0, 0) == pytest.approx(0.94)
    assert m.effective(45, 135) == pytest.approx(0.89)
    assert correlation(45, 45, m) == pytest.approx(-0.89)
    assert 0.89 <= mean_effective_visibility(CANONICAL_SETTINGS, m) <= 0.94


def test_normalize_angle():
    assert normalize_angle(-1e-17) == 0.0
    assert normalize_angle(190.0) == pytest.approx(10.0)
    assert np.allclose(normalize_angle([-90, 360]), [90, 0])


def test_qber_visibility_roundtrip():
    assert qber_from_visibility(0.94) == pytest.approx(0.03)
    assert visibility_from_qber(qber_from_visibility(0.883)) == pytest.approx(0.883)
    with pytest.raises(ValueError):
        visibility_from_qber(0.6)


def test_binary_entropy_values():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(1.0)
    x = 0.0583
    assert binary_entropy(x) == pytest.approx(-x * math.log2(x) - (1 - x) * math.log2(1 - x))
