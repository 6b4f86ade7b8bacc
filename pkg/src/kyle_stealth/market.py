"""Price formation, the insider's objective and first-order condition terms.

The market maker's price is a logistic function of total order flow, so
every expectation in this module has the form ``E[expit(m + s X)]`` with
``X`` standard normal. Those are computed by Gauss-Hermite quadrature, with
an adaptive fallback when the logistic is too steep for the rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import expit

from .model import HazardModel, ModelError, ModelParams, PenaltyModel, Strategy
from .numerics import QuadratureRule, gauss_hermite_rule

EXP_CLAMP = 700.0
# above this slope the 201-node rule loses the 1e-10 accuracy target
STEEP_SLOPE = 3.0


@dataclass(frozen=True)
class PriceParams:
    """``P(y) = 1 / (1 + exp(a*y + b))``."""

    a: float
    b: float

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = expit(-np.clip(self.a * y + self.b, -EXP_CLAMP, EXP_CLAMP))
        return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class ObjectiveTerms:
    expected_price: float
    expected_profit: float
    expected_extra_penalty: float
    objective: float


def price_params(params: ModelParams, strat: Strategy) -> PriceParams:
    """Slope and intercept of the rational price for strategy ``strat``."""
    n_var = params.n_pop * params.sigma**2
    a = (strat.z0 - strat.z1) / n_var
    b = math.log(params.q) + (strat.z1**2 - strat.z0**2) / (2.0 * n_var)
    return PriceParams(a, b)


def price(params: ModelParams, strat: Strategy, y):
    """Probability that ``V = 1`` given total order flow ``y``."""
    return price_params(params, strat)(y)


# ---------------------------------------------------------------------------
# logistic-normal expectations
# ---------------------------------------------------------------------------


def _quad_fallback(fn, m, s):
    # split at the logistic midpoint and at the tail peaks x = +-s so the
    # adaptive rule sees every feature; a purely relative tolerance keeps
    # tiny tail values accurate
    centre = -m / s
    lo, hi = min(centre, -s, 0.0) - 40.0, max(centre, s, 0.0) + 40.0
    pts = sorted({lo, centre, -s, 0.0, s, hi})
    dens = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)  # noqa: E731
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += integrate.quad(lambda x: fn(m + s * x) * dens(x), a, b,
                                epsabs=0.0, epsrel=1e-12, limit=200)[0]
    return total


def logistic_moments(m, s: float, rule: QuadratureRule | None = None):
    """Return ``E[expit(m + sX)]`` and ``E[expit'(m + sX)]`` for ``X ~ N(0,1)``.

    ``m`` may be an array; ``s`` is a scalar slope.
    """
    rule = rule or gauss_hermite_rule()
    m_arr = np.atleast_1d(np.asarray(m, dtype=float))
    s = abs(float(s))
    if s <= STEEP_SLOPE:
        t = m_arr[:, None] + s * rule.nodes[None, :]
        sig = expit(t)
        val = sig @ rule.weights
        der = (sig * expit(-t)) @ rule.weights
    else:
        val = np.array([_quad_fallback(expit, mi, s) for mi in m_arr])
        der = np.array([_quad_fallback(lambda t: expit(t) * expit(-t), mi, s) for mi in m_arr])
    if np.ndim(m) == 0:
        return float(val[0]), float(der[0])
    return val, der


def _flow_moments(params: ModelParams, strat: Strategy, z):
    pp = price_params(params, strat)
    m = -(pp.a * np.asarray(z, dtype=float) + pp.b)
    return m, -pp.a * math.sqrt(params.n_pop) * params.sigma


def expected_price(params: ModelParams, strat: Strategy, z, rule: QuadratureRule | None = None):
    """``E[P(sqrt(N) W + z)]`` for ``W ~ Normal(0, sigma^2)``."""
    m, s = _flow_moments(params, strat, z)
    return logistic_moments(m, s, rule)[0]


def _price_gap(params: ModelParams, strat: Strategy, z, v: int, rule):
    # v - E[P]; for v = 1 the complement is E[expit(-m + sX)] by symmetry of X,
    # which avoids cancelling 1 - E[P] when the price is close to one
    m, s = _flow_moments(params, strat, z)
    if v == 1:
        return logistic_moments(-m, s, rule)[0]
    return -logistic_moments(m, s, rule)[0]


def _check_sign(z, v):
    z = np.asarray(z, dtype=float)
    if v not in (0, 1):
        raise ModelError("v must be 0 or 1")
    ok = (z >= 0) if v == 1 else (z <= 0)
    if not np.all(ok):
        raise ModelError(f"order {z} is outside the admissible half line for v = {v}")


def expected_profit(params: ModelParams, strat: Strategy, z, v: int,
                    rule: QuadratureRule | None = None):
    """``(v - Phi_N(Z; z)) * z``; zero at ``z = 0`` by continuity."""
    _check_sign(z, v)
    return _price_gap(params, strat, z, v, rule) * np.asarray(z, dtype=float)


def objective(params: ModelParams, strat: Strategy, z, v: int,
              rule: QuadratureRule | None = None) -> ObjectiveTerms:
    """Expected net profit of order ``z`` in state ``v`` against strategy ``strat``."""
    _check_sign(z, v)
    z_arr = np.asarray(z, dtype=float)
    gap = _price_gap(params, strat, z_arr, v, rule)
    phi = v - gap
    q_n = gap * z_arr
    pen = params.penalty
    psi = pen.c0(z_arr) + pen.chi0 * q_n
    survive = np.exp(-params.hazard.value(z_arr, params.n_pop))
    j = survive * q_n - (1.0 - survive) * psi
    return ObjectiveTerms(phi, q_n, psi, j)


def objective_constant_price(params: ModelParams, price_const: float, z, v: int):
    """Net profit of order ``z`` when the price is the constant ``price_const``."""
    z = np.asarray(z, dtype=float)
    q = (v - price_const) * z
    survive = np.exp(-params.hazard.value(z, params.n_pop))
    return survive * q - (1.0 - survive) * (params.penalty.c0(z) + params.penalty.chi0 * q)


# ---------------------------------------------------------------------------
# first-order condition kernels
# ---------------------------------------------------------------------------


def _phi_kernel(params: ModelParams, zeta: float, sign: float, rule):
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    n_var = params.n_pop * params.sigma**2
    # 1/(1 + q e^eta) = expit(-(eta + log q)), eta = sign*zeta^2/(2 N s^2) - (zeta/(sqrt(N) s)) X
    m = -(sign * zeta * zeta / (2.0 * n_var) + math.log(params.q))
    s = zeta / (math.sqrt(params.n_pop) * params.sigma)
    val, der = logistic_moments(m, s, rule)
    return val, zeta / n_var * der


def phi_bar(params: ModelParams, zeta: float, rule: QuadratureRule | None = None):
    """Expected price at the sell order and its slope in the order size.

    Both depend on the strategy only through the spread ``zeta = Z(1) - Z(0)``.
    """
    return _phi_kernel(params, zeta, 1.0, rule)


def phi_hat(params: ModelParams, zeta: float, rule: QuadratureRule | None = None):
    """Expected price at the buy order and its slope in the order size."""
    return _phi_kernel(params, zeta, -1.0, rule)


def g1(params: ModelParams, z):
    pen, h, n = params.penalty, params.hazard, params.n_pop
    with np.errstate(over="ignore"):
        return pen.chi * z * h.derivative(z, n) - pen.chi + pen.chi0 * np.exp(h.value(z, n))


def g2(params: ModelParams, z):
    pen, h, n = params.penalty, params.hazard, params.n_pop
    with np.errstate(over="ignore"):
        return (pen.chi0 * np.exp(h.value(z, n)) - pen.chi) * z


def a_n(params: ModelParams, z):
    pen, h, n = params.penalty, params.hazard, params.n_pop
    if pen.is_civil:
        return np.zeros_like(np.asarray(z, dtype=float))[()]
    with np.errstate(over="ignore", invalid="ignore"):
        return -h.derivative(z, n) * pen.c0(z) - np.expm1(h.value(z, n)) * pen.c0_derivative(z)


def f0_from_phi(params: ModelParams, phi_value: float, phi_derivative: float, z):
    with np.errstate(over="ignore", invalid="ignore"):
        return g1(params, z) * phi_value + g2(params, z) * phi_derivative + a_n(params, z)


def f0(params: ModelParams, zeta: float, z, rule: QuadratureRule | None = None):
    """Sell-side first-order residual at spread ``zeta`` and order ``z < 0``."""
    val, der = phi_bar(params, zeta, rule)
    return f0_from_phi(params, val, der, z)


def g1_from_phi(params: ModelParams, phi_value: float, phi_derivative: float, z1):
    with np.errstate(over="ignore", invalid="ignore"):
        return g1(params, z1) * (phi_value - 1.0) + g2(params, z1) * phi_derivative + a_n(params, z1)


def g1_condition(params: ModelParams, zeta: float, z0_of_zeta: float,
                 rule: QuadratureRule | None = None):
    """Buy-side residual at ``zeta`` with ``z1 = zeta + z0(zeta)``."""
    val, der = phi_hat(params, zeta, rule)
    return g1_from_phi(params, val, der, zeta + z0_of_zeta)


def limiting_price(strat: Strategy, gamma: float, y_tilde, p: float, sigma: float = 1.0):
    """Large-population limit of the price at scaled flow ``y_tilde``.

    Constant ``p`` below one half, the one-trader price at one half, and a
    step at the midpoint of the scaled orders above one half.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    y = np.asarray(y_tilde, dtype=float)
    if gamma < 0.5:
        out = np.full_like(y, p)
    elif gamma == 0.5:
        one = ModelParams(p=p, sigma=sigma, n_pop=1, hazard=HazardModel.none(),
                          penalty=PenaltyModel())
        out = np.asarray(price(one, strat, y), dtype=float)
    else:
        mid = strat.z0 + strat.z1
        out = np.where(2.0 * y > mid, 1.0, np.where(2.0 * y == mid, p, 0.0))
    return out[()] if out.ndim == 0 else out

