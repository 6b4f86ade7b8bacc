"""Method-of-moments calibration of the population size and stealth index.

Observed volume statistics are matched to their model counterparts at the
symmetric limiting strategy ``N^gamma * sigma * a * (-1, 1)``. Each pair of
conditions has a closed-form solution for ``(N, gamma)``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import equilibrium
from .model import HazardModel, ModelError, ModelParams, PenaltyModel, Strategy
from .numerics import erfc, lambert_w0


class CalibrationError(ValueError):
    """Statistics are missing or inconsistent for the requested conditions."""


class StealthRangeWarning(UserWarning):
    """A calibrated stealth index falls outside ``(0, 1/2)``."""


CONDITIONS = {
    "e1": ("insider_volume", "total_volume"),
    "e2": ("insider_volume", "volume_ratio"),
    "e3": ("total_volume", "volume_ratio"),
}


@dataclass(frozen=True)
class CalibrationStats:
    insider_volume: float
    sigma: float = 1000.0
    total_volume: float | None = None
    volume_ratio: float | None = None
    total_volume_stderr: float | None = None
    episode_count: int | None = None
    mu: float | None = None
    p: float = 0.5

    def __post_init__(self):
        if not self.insider_volume > 0:
            raise CalibrationError("insider_volume must be positive")
        if not self.sigma > 0:
            raise CalibrationError("sigma must be positive")
        if self.volume_ratio is not None and not 0 < self.volume_ratio < 1:
            raise CalibrationError("volume_ratio must lie in (0, 1)")
        if self.mu is not None and not 0 < self.mu < self.sigma:
            raise CalibrationError("mu must lie in (0, sigma)")
        if self.total_volume is None and self.volume_ratio is None:
            raise CalibrationError("need total_volume or volume_ratio besides insider_volume")


@dataclass(frozen=True)
class CalibrationResult:
    n_hat: float
    gamma_hat: float
    mu_hat: float
    conditions_used: tuple[str, str]
    implied_prosecution: float
    chi: float
    sigma: float
    notes: tuple[str, ...] = ()

    @property
    def n_int(self) -> int:
        return int(round(self.n_hat))

    @property
    def in_stealth_range(self) -> bool:
        return 0.0 < self.gamma_hat < 0.5


# summary statistics of the two insider trading data sets
EXPERIMENT_I = CalibrationStats(
    insider_volume=9819.0,
    total_volume=113909.0,
    volume_ratio=0.113,
    total_volume_stderr=10246.0,
    episode_count=588,
    mu=1.68625,
    sigma=1000.0,
)
EXPERIMENT_II = CalibrationStats(insider_volume=4900.0, volume_ratio=0.026, mu=1.68625, sigma=1000.0)


def a_factor(chi: float) -> float:
    """Limiting order of the quadratic civil case in units of sigma."""
    if chi < 1:
        raise ValueError("chi must be at least 1")
    return math.sqrt(1.0 - 2.0 * lambert_w0(math.sqrt(math.e) * (chi - 1.0) / (2.0 * chi)))


def std_from_stderr(stderr: float, episodes: int) -> float:
    """Sample standard deviation from a standard error over ``episodes`` samples."""
    if not stderr > 0 or episodes < 1:
        raise ValueError("need stderr > 0 and episodes >= 1")
    return stderr * math.sqrt(episodes)


def estimate_mu(i: float, v: float, sigma: float, s: float) -> float:
    """Per-trader mean absolute order from the total volume mean and spread.

    Solves ``N mu = v - i`` together with ``N (sigma^2 - mu^2) = s^2``.
    """
    d = v - i
    if not d > 0:
        raise ValueError("total volume must exceed insider volume")
    if not s > 0:
        raise ValueError("s must be positive")
    s2 = s * s
    # (sqrt(s^4 + 4 sigma^2 d^2) - s^2) / (2 d), rearranged to avoid cancellation
    mu = 2.0 * sigma * sigma * d / (math.sqrt(s2 * s2 + 4.0 * sigma * sigma * d * d) + s2)
    if mu >= sigma:
        warnings.warn("estimated mu is not below sigma", stacklevel=2)
    return mu


def _resolve_mu(stats: CalibrationStats) -> float:
    if stats.mu is not None:
        return stats.mu
    if stats.total_volume is None or stats.total_volume_stderr is None or stats.episode_count is None:
        raise CalibrationError("mu is absent and cannot be estimated from the statistics")
    s = std_from_stderr(stats.total_volume_stderr, stats.episode_count)
    return estimate_mu(stats.insider_volume, stats.total_volume, stats.sigma, s)


def _normalise_conditions(conditions) -> str:
    if isinstance(conditions, str):
        if conditions in CONDITIONS:
            return conditions
    else:
        pair = tuple(sorted(conditions))
        for key, names in CONDITIONS.items():
            if pair == tuple(sorted(names)):
                return key
    raise CalibrationError(f"unknown condition pair {conditions!r}; use one of {sorted(CONDITIONS)}")


def calibrate(stats: CalibrationStats, chi: float, conditions="e1") -> CalibrationResult:
    """Closed-form ``(N, gamma)`` from two moment conditions.

    ``conditions`` is ``"e1"`` (insider and total volume), ``"e2"`` (insider
    volume and ratio) or ``"e3"`` (total volume and ratio), or the matching
    pair of statistic names.
    """
    key = _normalise_conditions(conditions)
    needed = CONDITIONS[key]
    missing = [n for n in needed if getattr(stats, n) is None]
    if missing:
        raise CalibrationError(f"conditions {key} need {', '.join(missing)}")
    mu = _resolve_mu(stats)
    a = a_factor(chi)
    sig = stats.sigma
    notes = []
    if stats.p != 0.5:
        notes.append("closed forms assume p = 1/2; the symmetric strategy is used anyway")

    i, v, r = stats.insider_volume, stats.total_volume, stats.volume_ratio
    if key == "e1":
        n_hat = (v - i) / mu
        order = i
    elif key == "e2":
        n_hat = i * (1.0 - r) / (mu * r)
        order = i
    else:
        n_hat = v * (1.0 - r) / mu
        order = v * r
    if not n_hat > 1:
        raise CalibrationError(f"implied population {n_hat} is not above 1")
    gamma_hat = math.log(order / (sig * a)) / math.log(n_hat)
    if not 0 < gamma_hat < 0.5:
        warnings.warn(f"calibrated stealth index {gamma_hat:.6g} lies outside (0, 1/2)",
                      StealthRangeWarning, stacklevel=2)
        notes.append("stealth index outside (0, 1/2)")
    hazard = HazardModel.quadratic(1.0 / (2.0 * sig * sig))
    prob = float(-math.expm1(-hazard.base(sig * a)))
    return CalibrationResult(n_hat, gamma_hat, mu, needed, prob, chi, sig, tuple(notes))


def calibration_params(result: CalibrationResult, p: float = 0.5) -> ModelParams:
    """Model instance at a calibrated point: quadratic hazard, civil penalty."""
    sig = result.sigma
    return ModelParams(
        p=p,
        sigma=sig,
        n_pop=result.n_int,
        hazard=HazardModel.quadratic(1.0 / (2.0 * sig * sig), beta=result.gamma_hat),
        penalty=PenaltyModel.civil(result.chi),
    )


def limiting_strategy(result: CalibrationResult, n_pop: float | None = None) -> Strategy:
    """Limiting strategy scaled back to shares, ``N^gamma * sigma * a * (-1, 1)``."""
    n = result.n_hat if n_pop is None else n_pop
    z = n**result.gamma_hat * result.sigma * a_factor(result.chi)
    return Strategy(-z, z)


# ---------------------------------------------------------------------------
# moment counterparts
# ---------------------------------------------------------------------------


def _branch_weights(params: ModelParams, strat: Strategy):
    lam = params.hazard.value(np.array([strat.z0, strat.z1]), params.n_pop)
    prob = -np.expm1(-lam)
    return np.array([1.0 - params.p, params.p]) * prob


def prosecution_marginal(params: ModelParams, strat: Strategy) -> float:
    """Unconditional prosecution probability."""
    return float(_branch_weights(params, strat).sum())


def conditional_insider_volume(params: ModelParams, strat: Strategy) -> float:
    """Mean insider order size given prosecution."""
    w = _branch_weights(params, strat)
    total = w.sum()
    if total == 0:
        raise ZeroDivisionError("prosecution probability is zero in both states")
    return float(w @ np.abs([strat.z0, strat.z1]) / total)


def conditional_total_volume(params: ModelParams, strat: Strategy, mu: float) -> float:
    """Mean total volume given prosecution."""
    if not 0 <= mu < params.sigma:
        raise ModelError("mu must lie in [0, sigma)")
    return params.n_pop * mu + conditional_insider_volume(params, strat)


def ratio_tail(params: ModelParams, strat: Strategy, mu: float, x: float) -> float:
    """Probability given prosecution that total over insider volume exceeds ``x``.

    Liquidity volume is normal with mean ``N mu`` and variance
    ``N (sigma^2 - mu^2)``.
    """
    if x < 1:
        raise ValueError("x must be at least 1")
    if not 0 <= mu < params.sigma:
        raise ModelError("mu must lie in [0, sigma)")
    w = _branch_weights(params, strat)
    n = params.n_pop
    z = np.abs([strat.z0, strat.z1])
    arg = (z * (x - 1.0) - n * mu) / math.sqrt(2.0 * n * (params.sigma**2 - mu * mu))
    return float(w @ (0.5 * erfc(arg)) / w.sum())


# ---------------------------------------------------------------------------
# replication
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Comparison:
    name: str
    computed: float
    expected: float
    tol: float

    @property
    def passed(self) -> bool:
        return abs(self.computed - self.expected) <= self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {status} (computed {self.computed:.9g}, expected {self.expected:.9g} +- {self.tol:g})"


# published estimates: (chi, conditions) -> (N, gamma)
TABLE2 = {
    (1.0, "e1"): (61729, 0.207091), (1.0, "e2"): (45708, 0.21289), (1.0, "e3"): (59918, 0.23226),
    (2.0, "e1"): (61729, 0.249565), (2.0, "e2"): (45708, 0.256553), (2.0, "e3"): (59918, 0.274849),
    (3.0, "e1"): (61729, 0.270651), (3.0, "e2"): (45708, 0.27823), (3.0, "e3"): (59918, 0.295992),
}
TABLE5 = {1.0: (108858, 0.137029), 2.0: (108858, 0.177425), 3.0: (108858, 0.19748)}
# chi = 3 strategies: finite-N order and scaled limiting order, in shares
TABLE3 = {"e1": (9813, 9819), "e2": (9811, 9819), "e3": (12862, 12872)}
TABLE6 = {"finite": (4900, 11.572), "limiting": (4900, 11.576)}

GAMMA_TOL = 1e-4
SHARE_TOL = 3.0
LIMIT_SHARE_TOL = 1.0
PERCENT_TOL = 0.005


@dataclass(frozen=True)
class FigureData:
    name: str
    y: np.ndarray
    price_finite: np.ndarray
    price_constant: float


@dataclass
class ReplicationReport:
    table2: dict = field(default_factory=dict)
    table5: dict = field(default_factory=dict)
    table3: dict = field(default_factory=dict)
    table6: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)
    comparisons: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.comparisons)

    def failures(self) -> list:
        return [c for c in self.comparisons if not c.passed]


def _figure(name: str, params: ModelParams, sol, points: int = 201) -> FigureData:
    half = 4.0 * math.sqrt(params.n_pop) * params.sigma
    y = np.linspace(-half, half, points)
    return FigureData(name, y, np.asarray(sol.price_params(y)), params.p)


def _finite_solve(result: CalibrationResult):
    params = calibration_params(result)
    return params, equilibrium.solve_finite(params)


def replicate_tables(workers: int | None = None) -> ReplicationReport:
    """Recompute the calibration tables and compare them with the published values."""
    rep = ReplicationReport()
    for (chi, key), (n_exp, g_exp) in TABLE2.items():
        res = calibrate(EXPERIMENT_I, chi, key)
        rep.table2[(chi, key)] = res
        tag = f"table2 chi={chi:g} {key}"
        rep.comparisons.append(Comparison(f"{tag} N", res.n_int, n_exp, 0.0))
        rep.comparisons.append(Comparison(f"{tag} gamma", res.gamma_hat, g_exp, GAMMA_TOL))
    for chi, (n_exp, g_exp) in TABLE5.items():
        res = calibrate(EXPERIMENT_II, chi, "e2")
        rep.table5[chi] = res
        tag = f"table5 chi={chi:g}"
        rep.comparisons.append(Comparison(f"{tag} N", res.n_int, n_exp, 0.0))
        rep.comparisons.append(Comparison(f"{tag} gamma", res.gamma_hat, g_exp, GAMMA_TOL))

    points = [("e1", rep.table2[(3.0, "e1")]), ("e2", rep.table2[(3.0, "e2")]),
              ("e3", rep.table2[(3.0, "e3")]), ("exp2", rep.table5[3.0])]

    def run(item):
        key, res = item
        try:
            return key, res, _finite_solve(res), None
        except (equilibrium.SolverError, ArithmeticError, ValueError) as exc:
            return key, res, None, exc

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(run, points))
    else:
        solved = [run(item) for item in points]

    for key, res, out, exc in solved:
        if exc is not None:
            rep.errors.append(f"{key}: {exc}")
            continue
        params, sol = out
        lim = limiting_strategy(res, params.n_pop)
        if key in TABLE3:
            finite_exp, lim_exp = TABLE3[key]
            rep.table3[key] = (sol, lim)
            rep.comparisons.append(Comparison(f"table3 {key} finite z1", sol.strategy.z1, finite_exp, SHARE_TOL))
            rep.comparisons.append(Comparison(f"table3 {key} finite z0", sol.strategy.z0, -finite_exp, SHARE_TOL))
            rep.comparisons.append(Comparison(f"table3 {key} limiting z1", lim.z1, lim_exp, LIMIT_SHARE_TOL))
            if key == "e1":
                rep.figures.append(_figure("figure1", params, sol))
        else:
            prob_f = 100.0 * prosecution_marginal(params, sol.strategy)
            prob_l = 100.0 * prosecution_marginal(params, lim)
            rep.table6 = {"finite": (sol.strategy, prob_f), "limiting": (lim, prob_l), "solution": sol}
            (zf, pf), (zl, pl) = TABLE6["finite"], TABLE6["limiting"]
            rep.comparisons.append(Comparison("table6 finite z1", sol.strategy.z1, zf, SHARE_TOL))
            rep.comparisons.append(Comparison("table6 finite z0", sol.strategy.z0, -zf, SHARE_TOL))
            rep.comparisons.append(Comparison("table6 finite prosecution %", prob_f, pf, PERCENT_TOL))
            rep.comparisons.append(Comparison("table6 limiting z1", lim.z1, zl, LIMIT_SHARE_TOL))
            rep.comparisons.append(Comparison("table6 limiting prosecution %", prob_l, pl, PERCENT_TOL))
            rep.figures.append(_figure("figure2", params, sol))
    return rep


__all__ = [
    "CONDITIONS", "CalibrationError", "CalibrationResult", "CalibrationStats", "Comparison",
    "EXPERIMENT_I", "EXPERIMENT_II", "FigureData", "ReplicationReport", "StealthRangeWarning",
    "a_factor", "calibrate", "calibration_params", "conditional_insider_volume",
    "conditional_total_volume", "estimate_mu", "limiting_strategy", "prosecution_marginal",
    "ratio_tail", "replicate_tables", "std_from_stderr",
]

