"""Acceptance criteria 1-10 at their stated tolerances."""

import math
import time

import numpy as np
import pytest

from kyle_stealth.calibration import (
    EXPERIMENT_I,
    EXPERIMENT_II,
    TABLE2,
    TABLE3,
    TABLE5,
    TABLE6,
    calibrate,
    calibration_params,
    estimate_mu,
    limiting_strategy,
    prosecution_marginal,
    std_from_stderr,
)
from kyle_stealth.equilibrium import (
    GridSpec,
    brute_force_best_response,
    certify_epsilon_equilibrium,
    convergence_report,
    example3_regression,
    fit_loglog_slope,
    limiting_objective,
    solve_finite,
    solve_limiting,
)
from kyle_stealth.market import expected_price, limiting_price, price
from kyle_stealth.model import HazardModel, ModelParams, PenaltyModel, Strategy

from oracles import log_profit_second_differences


def best_time(fn, repeats=7):
    best = math.inf
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return out, best


# 1 ------------------------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_limiting_closed_form():
    params = ModelParams(0.5, 1.0, 1, HazardModel.quadratic(1.0, beta=0.25), PenaltyModel.civil(3.0))
    lim, elapsed = best_time(lambda: solve_limiting(params))
    assert lim.strategy_scaled.z0 == pytest.approx(-0.350753, abs=1e-5)
    assert lim.strategy_scaled.z1 == pytest.approx(0.350753, abs=1e-5)
    assert elapsed < 1e-3


# 2 ------------------------------------------------------------------------------------


@pytest.mark.criterion(2)
def test_limiting_example_two():
    params = ModelParams(1.0 / 3.0, 1.0, 1, HazardModel.absolute(1.0, beta=0.3), PenaltyModel.linear(1.0, 1.0))
    lim = solve_limiting(params)
    assert lim.strategy_scaled.z0 == pytest.approx(-0.138547, abs=1e-5)
    assert lim.strategy_scaled.z1 == pytest.approx(0.23844, abs=1e-5)


# 3 ------------------------------------------------------------------------------------


@pytest.mark.criterion(3)
def test_table2():
    t = time.perf_counter()
    results = {cell: calibrate(EXPERIMENT_I, *cell) for cell in TABLE2}
    elapsed = time.perf_counter() - t
    for cell, (n_exp, g_exp) in TABLE2.items():
        assert results[cell].n_int == n_exp, cell
        assert results[cell].gamma_hat == pytest.approx(g_exp, abs=1e-4), cell
    assert {n for n, _ in TABLE2.values()} == {45708, 59918, 61729}
    assert elapsed < 1.0


# 4 ------------------------------------------------------------------------------------


@pytest.mark.criterion(4)
def test_mu_and_std_estimates():
    assert estimate_mu(9819, 113909, 1000, 248452) == pytest.approx(1.68625, abs=1e-4)
    assert std_from_stderr(10246, 588) == pytest.approx(248452, abs=1)


# 5 ------------------------------------------------------------------------------------


@pytest.mark.criterion(5)
def test_table5():
    for chi, (n_exp, g_exp) in TABLE5.items():
        res = calibrate(EXPERIMENT_II, chi, "e2")
        assert res.n_int == n_exp == 108858
        assert res.gamma_hat == pytest.approx(g_exp, abs=1e-4)


# 6 ------------------------------------------------------------------------------------


SOLVES = {
    "e1": (EXPERIMENT_I, "e1", TABLE3["e1"][0]),
    "e2": (EXPERIMENT_I, "e2", TABLE3["e2"][0]),
    "e3": (EXPERIMENT_I, "e3", TABLE3["e3"][0]),
    "exp2": (EXPERIMENT_II, "e2", TABLE6["finite"][0]),
}


@pytest.mark.criterion(6)
@pytest.mark.parametrize("key", sorted(SOLVES))
def test_finite_solve_strategy(key):
    stats, cond, expected = SOLVES[key]
    params = calibration_params(calibrate(stats, 3.0, cond))
    t = time.perf_counter()
    sol = solve_finite(params)
    elapsed = time.perf_counter() - t
    print(f"{key}: N = {params.n_pop}, Z* = ({sol.strategy.z0:.3f}, {sol.strategy.z1:.3f}), "
          f"expected +-{expected}, {elapsed:.2f} s")
    assert elapsed < 30.0
    assert sol.strategy.z0 == pytest.approx(-expected, abs=3)
    assert sol.strategy.z1 == pytest.approx(expected, abs=3)


@pytest.mark.criterion(6)
def test_prosecution_probabilities():
    res = calibrate(EXPERIMENT_II, 3.0, "e2")
    params = calibration_params(res)
    sol = solve_finite(params)
    finite = 100 * prosecution_marginal(params, sol.strategy)
    limiting = 100 * prosecution_marginal(params, limiting_strategy(res, params.n_pop))
    assert finite == pytest.approx(TABLE6["finite"][1], abs=0.005)
    assert limiting == pytest.approx(TABLE6["limiting"][1], abs=0.005)


# 7 and 8 ------------------------------------------------------------------------------


SWEEP = [10**3, 10**4, 10**5, 10**6, 10**7]
CIVIL = ModelParams(0.4, 1.0, 1, HazardModel.quadratic(1.0, beta=0.25), PenaltyModel.civil(3.0))


@pytest.fixture(scope="module")
def sweep():
    t = time.perf_counter()
    rep = convergence_report(CIVIL, SWEEP, workers=4)
    return rep, time.perf_counter() - t


@pytest.mark.criterion(7)
def test_convergence_slope(sweep):
    rep, elapsed = sweep
    assert rep.gamma == 0.25
    assert all(not r.error for r in rep.rows)
    print(f"fitted slopes {rep.fitted_slope}, {elapsed:.1f} s")
    assert rep.fitted_slope[0] <= -0.35
    assert rep.fitted_slope[1] <= -0.35
    assert elapsed < 300.0


@pytest.mark.criterion(8)
def test_epsilon_slope():
    lim = solve_limiting(CIVIL)
    eps = [certify_epsilon_equilibrium(CIVIL.with_n(n), (lim.strategy_scaled, CIVIL.p)) for n in SWEEP]
    slope = fit_loglog_slope(SWEEP, eps)
    print(f"epsilon {eps}, slope {slope:.4f}")
    assert slope <= 0.25 - 0.5 + 0.15


# 9 ------------------------------------------------------------------------------------


@pytest.mark.criterion(9)
def test_log_concavity_draws():
    rng = np.random.default_rng(7)
    for _ in range(50):
        params = ModelParams(rng.uniform(0.05, 0.95), rng.uniform(0.1, 10.0), int(rng.integers(1, 10**6)),
                             HazardModel.quadratic(1.0), PenaltyModel.civil(2.0))
        scale = math.sqrt(params.n_pop) * params.sigma
        strat = Strategy(-scale * rng.uniform(0.01, 5.0), scale * rng.uniform(0.01, 5.0))
        for v in (0, 1):
            assert np.max(log_profit_second_differences(params, strat, v)) <= 1e-9


@pytest.mark.criterion(9)
def test_brute_force_best_response_draws():
    rng = np.random.default_rng(11)
    for _ in range(20):
        hazard = (HazardModel.quadratic(rng.uniform(0.2, 2.0), beta=rng.uniform(0.0, 0.45))
                  if rng.uniform() < 0.5 else
                  HazardModel.power(rng.uniform(0.2, 2.0), rng.uniform(1.2, 3.0), beta=rng.uniform(0.0, 0.45)))
        params = ModelParams(rng.uniform(0.2, 0.8), rng.uniform(0.5, 2.0), int(rng.integers(1, 1001)),
                             hazard, PenaltyModel.civil(rng.uniform(1.5, 4.0)))
        sol = solve_finite(params)
        grid = GridSpec.around(params.sigma * params.n_pop**sol.gamma, points=4001)
        for v in (0, 1):
            z = sol.strategy.order(v)
            br = brute_force_best_response(params, sol.strategy, v, grid)
            assert abs(br - z) <= (grid.ratio - 1.0) * abs(z), (params, v)


@pytest.mark.criterion(9)
def test_price_regimes_at_large_population():
    n, p = 10**8, 0.3
    strat = Strategy(-1.0, 2.0)
    base = ModelParams(p, 1.0, n, HazardModel.none(), PenaltyModel())
    # fixed strategy and order: the expected price is p
    assert abs(expected_price(base, strat, 0.7) - p) <= 1e-6
    # gamma = 1/2: the scaled price is the one-trader price
    y = np.linspace(-3, 3, 25)
    scaled = price(base, strat.scaled(n**0.5), n**0.5 * y)
    assert np.max(np.abs(scaled - limiting_price(strat, 0.5, y, p))) <= 1e-6
    # gamma > 1/2: a step at the midpoint of the scaled orders
    y = np.array([-2.0, 0.0, 0.4, 0.6, 1.0, 3.0])
    scaled = price(base, strat.scaled(n**0.8), n**0.8 * y)
    assert np.max(np.abs(scaled - limiting_price(strat, 0.8, y, p))) <= 1e-6
    assert price(base, strat.scaled(n**0.8), n**0.8 * 0.5) == pytest.approx(p, abs=1e-9)
    assert limiting_price(strat, 0.8, 0.5, p) == p


@pytest.mark.criterion(9)
def test_example3_continuum():
    reg = example3_regression()
    assert reg.max_tail_error == 0.0 or reg.max_tail_error <= 1e-15
    assert reg.max_interior < 0.25


# 10 -----------------------------------------------------------------------------------


@pytest.mark.criterion(10)
def test_power_closed_form_against_grid():
    params = ModelParams(0.4, 1.0, 1, HazardModel.power(1.0, 2.0, beta=0.4), PenaltyModel.power(1.0, 1.0, 3.0))
    lim = solve_limiting(params)
    assert lim.method == "power_closed_form"
    assert lim.gamma == pytest.approx(0.2, abs=1e-15)
    step = 2.5e-7
    mags = np.arange(1, int(2.0 / step) + 1) * step
    for v in (0, 1):
        sign = 1.0 if v == 1 else -1.0
        vals = limiting_objective(params, sign * mags, v)
        grid_best = sign * mags[int(np.argmax(vals))]
        assert abs(grid_best - lim.strategy_scaled.order(v)) <= 1e-6
