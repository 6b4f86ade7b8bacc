import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kyle_stealth.calibration import (
    EXPERIMENT_I,
    EXPERIMENT_II,
    TABLE2,
    TABLE5,
    CalibrationError,
    CalibrationStats,
    StealthRangeWarning,
    a_factor,
    calibrate,
    calibration_params,
    conditional_insider_volume,
    conditional_total_volume,
    estimate_mu,
    limiting_strategy,
    prosecution_marginal,
    ratio_tail,
    std_from_stderr,
)
from kyle_stealth.equilibrium import solve_limiting
from kyle_stealth.model import HazardModel, ModelError, ModelParams, PenaltyModel, Strategy
from kyle_stealth.numerics import lambert_w0


def _toy(p=1.0 / 3.0, n=1):
    return ModelParams(p, 1.0, n, HazardModel.absolute(1.0), PenaltyModel.civil(2.0))


# sample moments --------------------------------------------------------------------------


def test_std_from_stderr_examples():
    assert std_from_stderr(10246, 588) == pytest.approx(248452, abs=1)
    assert std_from_stderr(3.5, 1) == 3.5
    assert std_from_stderr(7.0, 40) == pytest.approx(2 * std_from_stderr(3.5, 40), rel=1e-15)


def test_std_from_stderr_rejects_bad_input():
    with pytest.raises(ValueError):
        std_from_stderr(0.0, 5)
    with pytest.raises(ValueError):
        std_from_stderr(1.0, 0)


def test_estimate_mu_experiment_one():
    s = std_from_stderr(10246, 588)
    assert estimate_mu(9819, 113909, 1000, s) == pytest.approx(1.68625, abs=1e-4)
    assert estimate_mu(9819, 113909, 1000, 248452) == pytest.approx(1.68625, abs=1e-4)


def test_estimate_mu_solves_both_equations():
    i, v, sigma, s = 9819.0, 113909.0, 1000.0, 248452.0
    mu = estimate_mu(i, v, sigma, s)
    n = (v - i) / mu
    assert n * (sigma**2 - mu**2) == pytest.approx(s * s, rel=1e-9)


@given(d=st.floats(1.0, 1e7), s=st.floats(1.0, 1e7))
def test_estimate_mu_invariant_under_joint_doubling(d, s):
    a = estimate_mu(0.0, d, 1000.0, s)
    b = estimate_mu(0.0, 2 * d, 1000.0, math.sqrt(2) * s)
    assert b == pytest.approx(a, rel=1e-12)


def test_estimate_mu_small_spread_flagged():
    with pytest.warns(UserWarning, match="not below sigma"):
        mu = estimate_mu(0.0, 1e5, 1000.0, 1e-9)
    assert mu == pytest.approx(1000.0, rel=1e-12)


def test_estimate_mu_domain():
    with pytest.raises(ValueError):
        estimate_mu(10.0, 10.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        estimate_mu(1.0, 10.0, 1.0, 0.0)


# model moments ------------------------------------------------------------------------


def test_prosecution_marginal_examples():
    assert prosecution_marginal(_toy(), Strategy(-1e-300, 1e-300)) == pytest.approx(0.0, abs=1e-299)
    sym = Strategy(-0.8, 0.8)
    assert prosecution_marginal(_toy(), sym) == pytest.approx(-math.expm1(-0.8), rel=1e-15)


def test_conditional_insider_volume_toy():
    w0, w1 = (2 / 3) * (1 - math.exp(-1)), (1 / 3) * (1 - math.exp(-2))
    expect = (w0 * 1 + w1 * 2) / (w0 + w1)
    assert conditional_insider_volume(_toy(), Strategy(-1.0, 2.0)) == pytest.approx(expect, rel=1e-15)
    assert conditional_insider_volume(_toy(), Strategy(-0.3, 0.3)) == pytest.approx(0.3, rel=1e-15)


def test_conditional_insider_volume_needs_prosecution():
    params = ModelParams(0.5, 1.0, 1, HazardModel.none(), PenaltyModel())
    with pytest.raises(ZeroDivisionError):
        conditional_insider_volume(params, Strategy(-1.0, 1.0))


def test_conditional_total_volume_examples():
    strat = Strategy(-1.0, 2.0)
    base = conditional_insider_volume(_toy(), strat)
    assert conditional_total_volume(_toy(), strat, 0.0) == base
    assert conditional_total_volume(_toy(), strat, 0.4) == pytest.approx(0.4 + base, rel=1e-15)
    with pytest.raises(ModelError):
        conditional_total_volume(_toy(), strat, 1.0)


def test_ratio_tail_limits():
    params = _toy(n=10**4)
    strat = Strategy(-3.0, 3.0)
    assert ratio_tail(params, strat, 0.9, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert ratio_tail(params, strat, 0.9, 1e9) == 0.0
    with pytest.raises(ValueError):
        ratio_tail(params, strat, 0.9, 0.5)


@given(x=st.floats(1.0, 1e4), dx=st.floats(0.0, 1e3))
def test_ratio_tail_nonincreasing(x, dx):
    params = _toy(n=50)
    strat = Strategy(-4.0, 9.0)
    a, b = ratio_tail(params, strat, 0.5, x), ratio_tail(params, strat, 0.5, x + dx)
    assert 0.0 <= b <= a + 1e-15 <= 1.0 + 1e-15


# calibration ------------------------------------------------------------------------------


def test_a_factor_matches_limiting_solver():
    for chi in (1.0, 2.0, 3.0, 7.5):
        params = ModelParams(0.5, 1.0, 1, HazardModel.quadratic(0.5, beta=0.2), PenaltyModel.civil(chi))
        # with K = 1/2 the scaled limit is sigma * a
        assert solve_limiting(params).strategy_scaled.z1 == pytest.approx(a_factor(chi), rel=1e-14)
    assert a_factor(1.0) == 1.0
    assert a_factor(3.0) == pytest.approx(math.sqrt(1 - 2 * lambert_w0(math.sqrt(math.e) / 3)), rel=1e-15)


@pytest.mark.parametrize("cell", sorted(TABLE2))
def test_table2_cells(cell):
    chi, key = cell
    n_exp, g_exp = TABLE2[cell]
    res = calibrate(EXPERIMENT_I, chi, key)
    assert res.n_int == n_exp
    assert res.gamma_hat == pytest.approx(g_exp, abs=1e-4)
    assert res.in_stealth_range


@pytest.mark.parametrize("chi", sorted(TABLE5))
def test_table5_cells(chi):
    res = calibrate(EXPERIMENT_II, chi, "e2")
    assert (res.n_int, round(res.gamma_hat, 4)) == (TABLE5[chi][0], round(TABLE5[chi][1], 4))


def test_population_estimate_independent_of_chi():
    for key in ("e1", "e2", "e3"):
        ns = {calibrate(EXPERIMENT_I, chi, key).n_hat for chi in (1.0, 2.0, 3.0, 10.0)}
        assert len(ns) == 1


def test_condition_pair_by_names():
    a = calibrate(EXPERIMENT_I, 3.0, ("volume_ratio", "insider_volume"))
    assert a.conditions_used == ("insider_volume", "volume_ratio")
    assert a == calibrate(EXPERIMENT_I, 3.0, "e2")
    with pytest.raises(CalibrationError):
        calibrate(EXPERIMENT_I, 3.0, "e4")


def test_missing_statistics():
    with pytest.raises(CalibrationError):
        calibrate(EXPERIMENT_II, 3.0, "e1")
    with pytest.raises(CalibrationError):
        CalibrationStats(insider_volume=10.0)
    stats = CalibrationStats(insider_volume=9819.0, total_volume=113909.0)
    with pytest.raises(CalibrationError, match="mu"):
        calibrate(stats, 3.0, "e1")


def test_mu_estimated_when_absent():
    stats = CalibrationStats(insider_volume=9819.0, total_volume=113909.0,
                             total_volume_stderr=10246.0, episode_count=588)
    res = calibrate(stats, 3.0, "e1")
    assert res.mu_hat == pytest.approx(1.68625, abs=1e-4)
    assert res.n_int == pytest.approx(61729, abs=3)


def test_stealth_range_warning():
    stats = CalibrationStats(insider_volume=5e6, total_volume=5.01e6, mu=1.0)
    with pytest.warns(StealthRangeWarning):
        res = calibrate(stats, 3.0, "e1")
    assert not res.in_stealth_range
    assert res.notes


def test_asymmetric_probability_noted():
    res = calibrate(CalibrationStats(insider_volume=9819.0, total_volume=113909.0, mu=1.68625, p=0.4), 3.0)
    assert any("p = 1/2" in n for n in res.notes)


def test_gamma_increasing_in_chi():
    chis = np.linspace(1.0, 30.0, 50)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StealthRangeWarning)
        gammas = [calibrate(EXPERIMENT_I, c, "e1").gamma_hat for c in chis]
    assert np.all(np.diff(gammas) > 0)


@pytest.mark.parametrize("stats,key", [(EXPERIMENT_I, "e1"), (EXPERIMENT_I, "e2"), (EXPERIMENT_I, "e3"),
                                       (EXPERIMENT_II, "e2")])
def test_round_trip(stats, key):
    res = calibrate(stats, 3.0, key)
    params = calibration_params(res)
    strat = limiting_strategy(res)
    z = res.n_hat**res.gamma_hat * res.sigma * a_factor(3.0)
    assert conditional_insider_volume(params, strat) == pytest.approx(z, rel=1e-15)
    names = res.conditions_used
    if "insider_volume" in names:
        assert conditional_insider_volume(params, strat) == pytest.approx(stats.insider_volume, rel=1e-3)
    if "total_volume" in names:
        assert conditional_total_volume(params, strat, res.mu_hat) == pytest.approx(stats.total_volume, rel=1e-3)
    if "volume_ratio" in names:
        assert ratio_tail(params, strat, res.mu_hat, 1.0 / stats.volume_ratio) == pytest.approx(0.5, abs=1e-3)


def test_implied_prosecution_matches_limiting_marginal():
    res = calibrate(EXPERIMENT_II, 3.0, "e2")
    params = calibration_params(res)
    lim = limiting_strategy(res, params.n_pop)
    assert res.implied_prosecution == pytest.approx(-math.expm1(-a_factor(3.0) ** 2 / 2), rel=1e-14)
    assert 100 * prosecution_marginal(params, lim) == pytest.approx(11.576, abs=0.005)
    assert 100 * res.implied_prosecution == pytest.approx(11.576, abs=0.005)


def test_calibration_params_shape():
    res = calibrate(EXPERIMENT_I, 3.0, "e1")
    params = calibration_params(res)
    assert params.n_pop == 61729
    assert params.hazard.K == pytest.approx(1 / (2 * 1000.0**2))
    assert params.hazard.beta == res.gamma_hat
    assert params.penalty.chi == 3.0 and params.p == 0.5
