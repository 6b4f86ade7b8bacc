"""Finite-population and limiting equilibria, convergence and epsilon checks.

The finite solver is a nested root search. For a spread ``zeta = Z(1) - Z(0)``
the sell order ``z0(zeta)`` is the unique zero of the sell-side residual on
``(z_diamond, 0)``. The outer search then looks for zeros of the buy-side
residual along ``zeta``, beyond the point where ``z1 = zeta + z0(zeta)``
turns positive.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import market
from .model import HazardModel, ModelParams, PenaltyModel, Strategy, validate_assumptions
from .numerics import (
    Bracket,
    ConvergenceError,
    NumericsError,
    SpanCapError,
    expand_bracket,
    find_root,
    gauss_hermite_rule,
    lambert_w0,
)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class SolverError(RuntimeError):
    """An equilibrium could not be computed."""


class AssumptionError(SolverError):
    """The model fails the assumption checks required by the solver."""

    def __init__(self, report):
        super().__init__("assumption check failed:\n" + str(report))
        self.report = report


class BracketingError(SolverError):
    """No admissible sign change was found. ``trace`` holds the scan."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or {}


class NonUniquenessWarning(UserWarning):
    """A first-order condition has several zeros."""


# ---------------------------------------------------------------------------
# stealth index
# ---------------------------------------------------------------------------


def stealth_index(beta: float, theta: float = 1.0, alpha: float = 1.0) -> float:
    """``min(beta*theta/(theta + alpha - 1), 1/2)``."""
    return min(beta * theta / (theta + alpha - 1.0), 0.5)


def penalty_alpha(pen: PenaltyModel) -> float:
    return pen.alpha if pen.c0_family == "power" else 1.0


def model_gamma(params: ModelParams) -> float:
    h = params.hazard
    return stealth_index(h.beta, h.theta, penalty_alpha(params.penalty))


def theory_exponent(params: ModelParams) -> float:
    """Exponent of the strategy error bound ``|N^-g Z*_N - Z~| <= K N^e``."""
    g = model_gamma(params)
    alpha = penalty_alpha(params.penalty)
    if params.beta == 0 or alpha == 1:
        return 2 * g - 1
    return max(2 * g - 1, -g * (alpha - 1) * params.hazard.theta_prime, -g * params.penalty.alpha_prime)


def epsilon_exponent(params: ModelParams) -> float:
    """Exponent of ``epsilon_N`` for the limiting strategy at constant price."""
    g = model_gamma(params)
    alpha = penalty_alpha(params.penalty)
    if params.beta == 0 or alpha == 1:
        return g - 0.5
    return max(g - 0.5, -g * (alpha - 1), -g * (alpha - 1) * params.hazard.theta_prime,
               -g * params.penalty.alpha_prime)


# ---------------------------------------------------------------------------
# finite-N solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverOptions:
    """``tol`` is relative to ``sigma * N^gamma`` for the outer spread search;
    ``inner_rel_tol`` is the same for the sell order at a fixed spread."""

    tol: float = 1e-10
    inner_rel_tol: float = 1e-12
    scan_points: int = 400
    scan_lo: float = 1e-4
    scan_hi: float = 1e3
    node_count: int = 201
    accept_residual: float = 1e-6
    check_assumptions: bool = True


@dataclass(frozen=True)
class RootRecord:
    zeta: float
    strategy: Strategy
    residual_f0: float
    residual_g1: float
    total_objective: float


@dataclass(frozen=True)
class EquilibriumSolution:
    strategy: Strategy
    zeta_star: float
    residual_f0: float
    residual_g1: float
    price_params: market.PriceParams
    n_pop: int
    all_roots: tuple[RootRecord, ...]
    gamma: float
    zeta_breve: float
    z_diamond: float
    selection: str = "max total objective"

    @property
    def scaled_strategy(self) -> Strategy:
        return self.strategy.scaled(self.n_pop ** (-self.gamma))


def z_diamond(params: ModelParams) -> float:
    """Zero of ``g1`` on ``z < 0``, or ``-inf`` when there is none in reach."""
    one = params.with_n(1)
    f = lambda z: float(market.g1(one, z))  # noqa: E731
    try:
        br = expand_bracket(f, -1e-6 * params.sigma, -1)
    except SpanCapError:
        return -math.inf
    z1 = find_root(f, br, tol=1e-15)
    return params.n_pop ** params.beta * z1


def _scale(params: ModelParams) -> float:
    return params.sigma * params.n_pop ** model_gamma(params)


def solve_finite(params: ModelParams, opts: SolverOptions | None = None) -> EquilibriumSolution:
    """Finite-population equilibrium by nested root finding."""
    opts = opts or SolverOptions()
    if opts.check_assumptions:
        report = validate_assumptions(params)
        if not report.passed:
            raise AssumptionError(report)
    rule = gauss_hermite_rule(opts.node_count)
    gamma = model_gamma(params)
    scale = _scale(params)
    zd = z_diamond(params)
    xtol = opts.inner_rel_tol * scale
    z_top = -1e-14 * scale

    def sell_order(zeta: float) -> tuple[float, float]:
        val, der = market.phi_bar(params, zeta, rule)
        f = lambda z: float(market.f0_from_phi(params, val, der, z))  # noqa: E731
        f_top = f(z_top)
        f_zd = f(zd) if math.isfinite(zd) else math.nan
        if f_zd > 0:
            br = Bracket(zd, z_top, f_zd, f_top)
        elif f_zd <= 0:
            # the residual is positive at z_diamond in exact arithmetic
            return zd, f_zd
        else:
            start = zd if math.isfinite(zd) else -scale
            f_start = f(start)
            if f_start > 0:
                br = Bracket(start, z_top, f_start, f_top)
            else:
                try:
                    br = expand_bracket(f, start, -1)
                except NumericsError:
                    # both price terms underflow at very wide spreads; no usable sell order
                    return math.nan, math.nan
        z0 = find_root(f, br, tol=opts.inner_rel_tol, xtol=xtol)
        return z0, f(z0)

    def buy_residual(zeta: float) -> float:
        z0, _ = sell_order(zeta)
        val, der = market.phi_hat(params, zeta, rule)
        return float(market.g1_from_phi(params, val, der, zeta + z0))

    grid = np.geomspace(opts.scan_lo * scale, opts.scan_hi * scale, opts.scan_points)
    z1s = np.array([zt + sell_order(zt)[0] for zt in grid])
    nonpos = np.nonzero(z1s <= 0)[0]
    trace = {"zeta": grid, "z1": z1s}
    if nonpos.size == 0:
        zeta_breve = grid[0]
        start = 0
    elif nonpos[-1] == grid.size - 1:
        raise BracketingError("z1(zeta) never turns positive on the scan", trace)
    else:
        i = nonpos[-1]
        if z1s[i] == 0.0:
            zeta_breve = grid[i]
        else:
            zeta_breve = find_root(lambda zt: zt + sell_order(zt)[0],
                                   Bracket(grid[i], grid[i + 1], z1s[i], z1s[i + 1]),
                                   tol=opts.inner_rel_tol, xtol=xtol)
        start = i + 1

    zs = np.concatenate(([zeta_breve], grid[start:]))
    gs = np.array([buy_residual(zt) for zt in zs])
    trace["g1_zeta"], trace["g1"] = zs, gs

    roots: list[RootRecord] = []
    for k in range(zs.size - 1):
        ga, gb = gs[k], gs[k + 1]
        if not (np.isfinite(ga) and np.isfinite(gb)) or np.sign(ga) * np.sign(gb) >= 0:
            continue
        try:
            zeta_star = find_root(buy_residual, Bracket(zs[k], zs[k + 1], ga, gb),
                                  tol=opts.tol, xtol=opts.tol * scale)
        except NumericsError:
            continue
        z0, r_f0 = sell_order(zeta_star)
        r_g1 = buy_residual(zeta_star)
        z1 = zeta_star + z0
        # sign changes through overflow poles refine to huge residuals; drop them
        if not abs(r_g1) <= max(opts.accept_residual, 100.0 * opts.tol) or not z1 > 0:
            continue
        strat = Strategy(z0, z1)
        total = (market.objective(params, strat, z0, 0, rule).objective
                 + market.objective(params, strat, z1, 1, rule).objective)
        roots.append(RootRecord(zeta_star, strat, r_f0, r_g1, float(total)))
    if not roots:
        raise BracketingError("no sign change of the buy-side residual beyond zeta_breve", trace)

    best = max(roots, key=lambda r: r.total_objective)
    return EquilibriumSolution(
        strategy=best.strategy,
        zeta_star=best.zeta,
        residual_f0=best.residual_f0,
        residual_g1=best.residual_g1,
        price_params=market.price_params(params, best.strategy),
        n_pop=params.n_pop,
        all_roots=tuple(roots),
        gamma=gamma,
        zeta_breve=float(zeta_breve),
        z_diamond=zd,
    )


# ---------------------------------------------------------------------------
# brute-force best response (test oracle)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Geometric grid of order magnitudes ``[lo, hi]`` with ``points`` nodes."""

    lo: float
    hi: float
    points: int = 2001

    @classmethod
    def around(cls, scale: float, lo: float = 1e-4, hi: float = 1e2, points: int = 2001) -> "GridSpec":
        return cls(lo * scale, hi * scale, points)

    def magnitudes(self) -> np.ndarray:
        return np.geomspace(self.lo, self.hi, self.points)

    @property
    def ratio(self) -> float:
        return (self.hi / self.lo) ** (1.0 / (self.points - 1))


def _golden_max(f, a: float, b: float, tol: float, max_iter: int = 200) -> float:
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (abs(a) + abs(b)) + 1e-300:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _grid_argmax(J, sign: float, grid: GridSpec, refine: bool = True):
    mags = grid.magnitudes()
    zs = sign * mags
    vals = np.asarray(J(zs), dtype=float)
    i = int(np.nanargmax(vals))
    if not refine:
        return float(zs[i]), float(vals[i])
    lo_m = mags[max(i - 1, 0)]
    hi_m = mags[min(i + 1, mags.size - 1)]
    m = _golden_max(lambda x: float(J(sign * x)), lo_m, hi_m, tol=1e-12)
    best = sign * m
    vb = float(J(best))
    if vb < vals[i]:
        return float(zs[i]), float(vals[i])
    return best, vb


def brute_force_best_response(params: ModelParams, strat: Strategy, v: int,
                              grid: GridSpec | None = None,
                              price_const: float | None = None) -> float:
    """Grid argmax of the insider's objective, refined by golden section.

    With ``price_const`` the price is that constant instead of the rational
    price of ``strat``.
    """
    grid = grid or GridSpec.around(_scale(params))
    sign = 1.0 if v == 1 else -1.0
    rule = gauss_hermite_rule()
    if price_const is None:
        J = lambda z: market.objective(params, strat, z, v, rule).objective  # noqa: E731
    else:
        J = lambda z: market.objective_constant_price(params, price_const, z, v)  # noqa: E731
    return _grid_argmax(J, sign, grid)[0]


# ---------------------------------------------------------------------------
# limiting equilibrium
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitingSolution:
    strategy_scaled: Strategy
    gamma: float
    price_constant: float | None
    method: str
    residuals: tuple[float, float] = (0.0, 0.0)
    finite: EquilibriumSolution | None = None
    roots: tuple[tuple[float, ...], tuple[float, ...]] = field(default_factory=lambda: ((), ()))


def _power_case(params: ModelParams) -> bool:
    pen = params.penalty
    return pen.c0_family == "power" and pen.alpha > 1 and params.beta > 0


def limiting_objective(params: ModelParams, z_tilde, v: int):
    """Scaled objective at constant price ``p`` in the large-population limit."""
    z = np.asarray(z_tilde, dtype=float)
    p, h, pen = params.p, params.hazard, params.penalty
    if _power_case(params):
        out = (v - p) * z - h.small_argument_constant * pen.K_alpha * np.abs(z) ** (h.theta + pen.alpha)
    else:
        lam = h.base(z)
        out = (v - p) * z * (pen.chi * np.exp(-lam) - pen.chi0) + np.expm1(-lam) * pen.c0(z)
    return out[()] if out.ndim == 0 else out


def limiting_condition(params: ModelParams, z_tilde, v: int):
    """First-order condition of the limiting objective, scaled by ``e^lambda``."""
    z = np.asarray(z_tilde, dtype=float)
    p, h, pen = params.p, params.hazard, params.penalty
    if _power_case(params):
        k = h.small_argument_constant * pen.K_alpha * (h.theta + pen.alpha)
        out = (v - p) - k * np.sign(z) * np.abs(z) ** (h.theta + pen.alpha - 1.0)
    else:
        one = params.with_n(1)
        with np.errstate(over="ignore", invalid="ignore"):
            out = ((v - p) * (pen.chi - pen.chi * z * h.base_derivative(z) - pen.chi0 * np.exp(h.base(z)))
                   + market.a_n(one, z))
    return out[()] if out.ndim == 0 else out


def _limiting_roots(params: ModelParams, v: int):
    sign = 1.0 if v == 1 else -1.0
    mags = np.geomspace(1e-8, 1e8, 1601) * params.sigma
    zs = sign * mags
    vals = limiting_condition(params, zs, v)
    f = lambda z: float(limiting_condition(params, z, v))  # noqa: E731
    roots = []
    for k in range(zs.size - 1):
        a, b = vals[k], vals[k + 1]
        if vals[k] == 0.0 and np.isfinite(a):
            roots.append(float(zs[k]))
            continue
        if not (np.isfinite(a) and np.isfinite(b)) or np.sign(a) * np.sign(b) >= 0:
            continue
        roots.append(find_root(f, Bracket.from_function(f, zs[k], zs[k + 1]), tol=1e-15))
    return roots


def solve_limiting(params: ModelParams, opts: SolverOptions | None = None) -> LimitingSolution:
    """Limiting equilibrium in the scaled variables ``N^-gamma Z``."""
    gamma = model_gamma(params)
    p, h, pen = params.p, params.hazard, params.penalty

    if gamma >= 0.5:
        if h.beta == 0.5:
            one = params.with_n(1)
        else:
            # the hazard vanishes from the rescaled problem
            one = replace(params, n_pop=1, hazard=HazardModel.none(), penalty=PenaltyModel(chi=pen.chi))
        opts = replace(opts or SolverOptions(), check_assumptions=False)
        sol = solve_finite(one, opts)
        return LimitingSolution(sol.strategy, 0.5, None, "finite_n1_delegate",
                                (sol.residual_f0, sol.residual_g1), finite=sol)

    if pen.is_civil and h.family == "quadratic":
        w = lambert_w0(math.sqrt(math.e) * pen.chi0 / (2.0 * pen.chi))
        z = math.sqrt((0.5 - w) / h.K)
        res = (float(limiting_condition(params, -z, 0)), float(limiting_condition(params, z, 1)))
        return LimitingSolution(Strategy(-z, z), gamma, p, "closed_form_lambert", res)

    if _power_case(params):
        k = h.small_argument_constant * pen.K_alpha * (h.theta + pen.alpha)
        expo = 1.0 / (h.theta + pen.alpha - 1.0)
        z0 = -((p / k) ** expo)
        z1 = ((1.0 - p) / k) ** expo
        res = (float(limiting_condition(params, z0, 0)), float(limiting_condition(params, z1, 1)))
        return LimitingSolution(Strategy(z0, z1), gamma, p, "power_closed_form", res)

    chosen = []
    all_roots = []
    for v in (0, 1):
        roots = _limiting_roots(params, v)
        if not roots:
            raise BracketingError(f"limiting first-order condition has no zero for v = {v}")
        if len(roots) > 1:
            warnings.warn(f"limiting first-order condition has {len(roots)} zeros for v = {v}",
                          NonUniquenessWarning, stacklevel=2)
        vals = [float(limiting_objective(params, r, v)) for r in roots]
        chosen.append(roots[int(np.argmax(vals))])
        all_roots.append(tuple(roots))
    res = (float(limiting_condition(params, chosen[0], 0)), float(limiting_condition(params, chosen[1], 1)))
    return LimitingSolution(Strategy(chosen[0], chosen[1]), gamma, p, "root_find", res,
                            roots=(all_roots[0], all_roots[1]))


# ---------------------------------------------------------------------------
# epsilon-equilibrium
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsilonCertificate:
    response_gap: tuple[float, float]
    price_gap: float

    @property
    def epsilon(self) -> float:
        return max(self.response_gap[0], self.response_gap[1], self.price_gap)


def _y_grid(sigma: float) -> np.ndarray:
    mags = np.geomspace(1e-3, 1e7, 501) * sigma
    return np.concatenate((-mags[::-1], [0.0], mags))


def price_gap(params: ModelParams, strat: Strategy, price_const: float, gamma: float) -> float:
    """``sup |price_const - P_N(strat; N^max(gamma,1/2) y)| / (1 + |y|)`` over a grid."""
    y = _y_grid(params.sigma)
    flow = params.n_pop ** max(gamma, 0.5) * y
    gap = np.abs(price_const - market.price(params, strat, flow)) / (1.0 + np.abs(y))
    return float(gap.max())


def epsilon_certificate(params: ModelParams, candidate: tuple[Strategy, float | None],
                        grids: GridSpec | None = None) -> EpsilonCertificate:
    strat_scaled, price_const = candidate
    gamma = model_gamma(params)
    if gamma >= 0.5:
        raise ValueError("epsilon certification needs gamma < 1/2")
    factor = params.n_pop**gamma
    strat = strat_scaled.scaled(factor)
    grids = grids or GridSpec.around(params.sigma * factor)
    rule = gauss_hermite_rule()
    gaps = []
    for v in (0, 1):
        sign = 1.0 if v == 1 else -1.0
        if price_const is None:
            J = lambda z, v=v: market.objective(params, strat, z, v, rule).objective  # noqa: E731
        else:
            J = lambda z, v=v: market.objective_constant_price(params, price_const, z, v)  # noqa: E731
        _, sup = _grid_argmax(J, sign, grids)
        gaps.append(max(0.0, (sup - float(J(strat.order(v)))) / factor))
    pg = 0.0 if price_const is None else price_gap(params, strat, price_const, gamma)
    return EpsilonCertificate((gaps[0], gaps[1]), pg)


def certify_epsilon_equilibrium(params: ModelParams, candidate: tuple[Strategy, float | None],
                                grids: GridSpec | None = None) -> float:
    """Smallest epsilon for which the scaled candidate passes both epsilon tests.

    ``candidate`` is ``(scaled strategy, constant price)``; a price of ``None``
    means the rational price of the candidate strategy itself.
    """
    return epsilon_certificate(params, candidate, grids).epsilon


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    strategy_scaled: Strategy | None
    abs_error: tuple[float, float]
    bound_exponent: float
    epsilon: float
    error: str = ""


@dataclass(frozen=True)
class ConvergenceReport:
    rows: tuple[ConvergenceRow, ...]
    fitted_slope: tuple[float, float]
    epsilon_rows: tuple[tuple[int, float], ...]
    epsilon_slope: float
    theory_exponent: float
    epsilon_exponent: float
    gamma: float
    limiting: LimitingSolution


def _fit_slope(ns, ys) -> float:
    ns, ys = np.asarray(ns, dtype=float), np.asarray(ys, dtype=float)
    ok = np.isfinite(ys) & (ys > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(ns[ok]), np.log(ys[ok]), 1)[0])


def _fit_window(n_sorted):
    # the first quartile of N values carries finite-N transients
    return len(n_sorted) // 4


def convergence_report(params_base: ModelParams, n_list, opts: SolverOptions | None = None,
                       workers: int | None = None) -> ConvergenceReport:
    """Solve at each ``N`` and compare scaled strategies with the limit."""
    gamma = model_gamma(params_base)
    if gamma >= 0.5:
        raise ValueError("convergence diagnostics need gamma < 1/2")
    ns = sorted({int(n) for n in n_list})
    lim = solve_limiting(params_base)
    expo = theory_exponent(params_base)
    p = params_base.p

    def one(n):
        params = params_base.with_n(n)
        try:
            sol = solve_finite(params, opts)
        except (SolverError, NumericsError) as exc:
            return ConvergenceRow(n, None, (math.nan, math.nan), expo, math.nan, str(exc))
        scaled = sol.strategy.scaled(n ** (-gamma))
        err = (abs(scaled.z0 - lim.strategy_scaled.z0), abs(scaled.z1 - lim.strategy_scaled.z1))
        y = _y_grid(params.sigma)
        eps = float(np.max(np.abs(sol.price_params(math.sqrt(n) * y) - p) / (1.0 + np.abs(y))))
        return ConvergenceRow(n, scaled, err, expo, eps)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, ns))
    else:
        rows = [one(n) for n in ns]

    k = _fit_window(ns)
    fit_rows = rows[k:]
    fit_n = [r.n for r in fit_rows]
    slope = (_fit_slope(fit_n, [r.abs_error[0] for r in fit_rows]),
             _fit_slope(fit_n, [r.abs_error[1] for r in fit_rows]))
    eps_slope = _fit_slope(fit_n, [r.epsilon for r in fit_rows])
    return ConvergenceReport(
        rows=tuple(rows),
        fitted_slope=slope,
        epsilon_rows=tuple((r.n, r.epsilon) for r in rows),
        epsilon_slope=eps_slope,
        theory_exponent=expo,
        epsilon_exponent=epsilon_exponent(params_base),
        gamma=gamma,
        limiting=lim,
    )


def fit_loglog_slope(ns, ys) -> float:
    """Least-squares slope of ``log y`` against ``log n``, skipping zeros."""
    return _fit_slope(ns, ys)


# ---------------------------------------------------------------------------
# non-uniqueness example
# ---------------------------------------------------------------------------


def example3_params() -> ModelParams:
    """Concave log hazard with a bounded piecewise criminal penalty, ``p = 1/3``."""
    return ModelParams(p=1.0 / 3.0, sigma=1.0, n_pop=1,
                       hazard=HazardModel.logarithmic(1.0, beta=0.0),
                       penalty=PenaltyModel.piecewise_example3(chi=1.0))


@dataclass(frozen=True)
class Example3Regression:
    tail_sell: np.ndarray
    tail_buy: np.ndarray
    interior_sell: np.ndarray
    interior_buy: np.ndarray

    @property
    def max_tail_error(self) -> float:
        return float(max(np.abs(self.tail_sell - 0.25).max(), np.abs(self.tail_buy - 0.25).max()))

    @property
    def max_interior(self) -> float:
        return float(max(self.interior_sell.max(), self.interior_buy.max()))

    @property
    def passed(self) -> bool:
        return self.max_tail_error <= 1e-12 and self.max_interior < 0.25


def example3_regression(points: int = 400) -> Example3Regression:
    """Limiting objective on the tails (flat at 1/4) and interiors (below 1/4)."""
    params = example3_params()
    tail_s = -np.geomspace(6.0, 1e4, points)
    tail_b = np.geomspace(1.2, 1e4, points)
    int_s = np.linspace(-6.0, 0.0, points + 2)[1:-1]
    int_b = np.linspace(0.0, 1.2, points + 2)[1:-1]
    return Example3Regression(
        tail_sell=limiting_objective(params, tail_s, 0),
        tail_buy=limiting_objective(params, tail_b, 1),
        interior_sell=limiting_objective(params, int_s, 0),
        interior_buy=limiting_objective(params, int_b, 1),
    )
