import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entlink.bell import (
    TABLE1_DEVIATIONS,
    TABLE1_VALUES,
    ChshResult,
    CorrelationEstimate,
    bootstrap_sigma,
    chsh_from_published,
    compute_chsh,
    estimate_correlation,
    fit_fringe,
    predicted_chsh,
    run_bell_test,
    violation_significance,
    visibility_scan,
)
from entlink.coincidence import CountMatrix
from entlink.linksim import LinkConfig
from entlink.polarization import VisibilityModel, chsh_value


def test_table1_values_as_published():
    # the published correlation table, in E(a,b), E(a,b'), E(a',b), E(a',b') order
    assert TABLE1_VALUES == (-0.681, 0.764, -0.421, -0.581)
    assert TABLE1_DEVIATIONS == (0.040, 0.036, 0.052, 0.046)


def test_published_chsh():
    r = chsh_from_published()
    assert r.s_value == pytest.approx(0.681 + 0.764 + 0.421 + 0.581, abs=1e-12)
    assert r.sigma == pytest.approx(math.sqrt(0.04**2 + 0.036**2 + 0.052**2 + 0.046**2))
    assert round(r.s_value, 2) == 2.45 and round(r.sigma, 2) == 0.09
    assert violation_significance(r) == pytest.approx(5.09, abs=0.005)


def test_estimate_from_counts():
    m = CountMatrix(np.array([[10, 40], [40, 10]]), (0.0, 22.5))
    e = estimate_correlation(m)
    assert e.e_value == pytest.approx(-0.6)
    assert e.sigma == pytest.approx(2 * math.sqrt(20 * 80 / 100**3))
    assert e.total == 100


@given(st.integers(1, 500), st.integers(1, 500))
def test_sigma_matches_binomial_form(same, diff):
    m = CountMatrix(np.array([[same, diff], [0, 0]]), (0.0, 0.0))
    e = estimate_correlation(m)
    n = same + diff
    assert e.sigma == pytest.approx(math.sqrt((1 - e.e_value**2) / n))


def test_zero_counts_rejected():
    with pytest.raises(ValueError):
        estimate_correlation(CountMatrix(np.zeros((2, 2), int), (0, 0)))


def test_role_order_checked():
    est = [CorrelationEstimate(0.1, 0.01, s) for s in
           [(0, 22.5), (45, 22.5), (0, 67.5), (45, 67.5)]]
    with pytest.raises(ValueError):
        compute_chsh(est)
    with pytest.raises(ValueError):
        compute_chsh(est[:3])


def test_significance_edge_cases():
    e = (CorrelationEstimate(-1, 0, (0, 22.5)),) * 4
    assert violation_significance(ChshResult(2.5, 0.0, e)) == math.inf
    assert violation_significance(ChshResult(1.5, 0.0, e)) == -math.inf
    assert violation_significance(ChshResult(2.0, 0.0, e)) == 0.0


def test_bootstrap_agrees_with_propagation():
    m = CountMatrix(np.array([[300, 1200], [1150, 350]]), (0.0, 22.5))
    analytic = estimate_correlation(m).sigma
    assert bootstrap_sigma(m, 2000, rng=1) == pytest.approx(analytic, rel=0.1)


def test_ideal_simulation_reaches_model():
    cfg = LinkConfig(duration=20.0, seed=2, pair_rate=20_000)
    run = run_bell_test(cfg)
    assert abs(run.result.s_value - chsh_value((0, 45, 22.5, 67.5), 1.0)) < 4 * run.result.sigma
    assert predicted_chsh(cfg) == pytest.approx(2 * math.sqrt(2), abs=0.06)


def test_prediction_drops_with_background():
    quiet = LinkConfig(visibility=VisibilityModel(0.94, 0.89))
    noisy = quiet.with_(background_rate_alice=16_500, background_rate_bob=38_000)
    assert predicted_chsh(noisy) < predicted_chsh(quiet)


def test_fringe_fit_exact_sinusoid():
    theta = np.arange(16) * 11.25
    counts = 500 * (1 - 0.9 * np.cos(np.radians(2 * (theta - 30))))
    fit = fit_fringe(theta, counts)
    assert fit.ok
    assert fit.visibility == pytest.approx(0.9)
    assert fit.phase == pytest.approx(30)
    assert fit.offset == pytest.approx(500)
    assert fit_fringe(theta, counts, weighted=True).visibility == pytest.approx(0.9)


def test_fringe_fit_error_matches_scatter():
    rng = np.random.default_rng(3)
    theta = np.arange(16) * 11.25
    mean = 400 * (1 - 0.9 * np.cos(np.radians(2 * theta)))
    fits = [fit_fringe(theta, rng.poisson(mean)) for _ in range(400)]
    v = np.array([f.visibility for f in fits])
    assert np.mean([f.sigma_visibility for f in fits]) == pytest.approx(v.std(), rel=0.15)


def test_fringe_fit_singular():
    fit = fit_fringe([0, 0, 0], [1, 2, 3])
    assert not fit.ok and fit.error
    assert fit.to_dict()["visibility"] is None


def test_scan_needs_enough_angles():
    with pytest.raises(ValueError):
        visibility_scan(LinkConfig(), [0], [0, 45, 90])


def test_scan_recovers_visibility_quickly():
    cfg = LinkConfig(duration=2.0, seed=9, pair_rate=50_000, visibility=VisibilityModel.uniform(0.8))
    (curve,) = visibility_scan(cfg, [0.0], np.arange(8) * 22.5)
    assert curve.fit.visibility == pytest.approx(0.8, abs=4 * curve.fit.sigma_visibility)
    assert curve.to_csv().startswith("alice_angle_deg,counts\n")


def test_simulated_deviations_match_published_magnitudes():
    # the totals behind the published deviations are unknown, so only their
    # magnitude is compared, at +-50%
    from entlink.scenario import bundled_scenarios, load_scenario

    link = load_scenario(bundled_scenarios()["bell_paper"]).link
    run = run_bell_test(link.with_(seed=5))
    for est, published in zip(run.result.components, TABLE1_DEVIATIONS):
        assert 0.5 * published <= est.sigma <= 1.5 * published
