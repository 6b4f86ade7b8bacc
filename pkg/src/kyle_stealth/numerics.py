"""Special functions and generic numerical kernels.

Everything here is a pure function of its arguments. The Gauss-Hermite rule
is cached per node count and returned as read-only arrays, so it can be
shared between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import optimize, special

DEFAULT_NODE_COUNT = 201
DEFAULT_ROOT_TOL = 1e-12
DEFAULT_MAX_ITER = 200
DEFAULT_SPAN_CAP = 1e12

_INV_E = math.exp(-1.0)


class NumericsError(Exception):
    """Base class for failures raised by the numerical kernels."""


class NoSignChangeError(NumericsError, ValueError):
    """The endpoints of a bracket do not have strictly opposite signs."""


class ConvergenceError(NumericsError):
    """An iteration hit its cap. ``best`` holds the best iterate found."""

    def __init__(self, message: str, best: float = math.nan):
        super().__init__(message)
        self.best = best


class SpanCapError(NumericsError):
    """Bracket expansion reached the span cap without finding a sign change."""


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def erfc(x):
    """Complementary error function, elementwise for arrays."""
    return special.erfc(x)


def lambert_w0(x: float, max_iter: int = 60) -> float:
    """Principal branch of the Lambert W function for real ``x >= -1/e``.

    Starts from ``log1p(x)`` (or the branch-point series when ``x`` is close
    to ``-1/e``) and runs Halley's iteration on ``w e^w - x``.
    """
    x = float(x)
    if math.isnan(x):
        return math.nan
    if x < -_INV_E:
        # allow a few ulps of slack around the branch point
        if x < -_INV_E - 4 * np.finfo(float).eps:
            raise ValueError(f"lambert_w0 is undefined for x < -1/e (got {x!r})")
        return -1.0
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf

    t = 2.0 * (math.e * x + 1.0)
    if t < 0.6:
        s = math.sqrt(max(t, 0.0))
        w = -1.0 + s - s * s / 3.0 + 11.0 / 72.0 * s**3
        if t == 0.0:
            return -1.0
    elif x < 3.0:
        w = math.log1p(x)
    else:
        lx = math.log(x)
        w = lx - math.log(lx)

    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            break
        dw = f / denom
        w -= dw
        if abs(dw) <= 4e-16 * (1.0 + abs(w)):
            break
    return w


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Probabilists' Gauss-Hermite rule with weights normalised to sum to 1.

    ``sum(w * f(x))`` approximates ``E[f(X)]`` for ``X ~ Normal(0, 1)``.
    """

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.nodes.size)


@lru_cache(maxsize=16)
def gauss_hermite_rule(node_count: int = DEFAULT_NODE_COUNT) -> QuadratureRule:
    """Return the cached ``node_count``-point rule for a standard normal."""
    if node_count < 1:
        raise ValueError("node_count must be positive")
    nodes, weights = hermegauss(node_count)
    weights = weights / weights.sum()
    # symmetrise to remove the tiny asymmetry of the eigen solver
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights)


def gaussian_expectation(
    f: Callable[[np.ndarray], np.ndarray],
    sigma: float,
    rule: QuadratureRule | None = None,
) -> float:
    """Approximate ``E[f(W)]`` for ``W ~ Normal(0, sigma^2)``.

    ``f`` is called once with the full array of scaled nodes.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rule = rule or gauss_hermite_rule()
    values = np.asarray(f(sigma * rule.nodes), dtype=float)
    return float(np.dot(rule.weights, values))


# ---------------------------------------------------------------------------
# root finding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bracket:
    """An interval ``[lo, hi]`` whose endpoint values differ in sign.

    One endpoint value may be exactly zero; that endpoint is then the root.
    """

    lo: float
    hi: float
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise NoSignChangeError(f"bracket needs lo < hi, got [{self.lo}, {self.hi}]")
        s_lo, s_hi = np.sign(self.f_lo), np.sign(self.f_hi)
        if not (s_lo * s_hi < 0 or (s_lo * s_hi == 0 and s_lo + s_hi != 0)):
            raise NoSignChangeError(
                f"no sign change on [{self.lo}, {self.hi}]: f = ({self.f_lo}, {self.f_hi})"
            )

    @classmethod
    def from_function(cls, f: Callable[[float], float], a: float, b: float) -> "Bracket":
        lo, hi = (a, b) if a < b else (b, a)
        return cls(lo, hi, float(f(lo)), float(f(hi)))

    @property
    def width(self) -> float:
        return self.hi - self.lo


def find_root(
    f: Callable[[float], float],
    bracket: Bracket,
    tol: float = DEFAULT_ROOT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    xtol: float | None = None,
) -> float:
    """Zero of ``f`` inside ``bracket`` by Brent's method.

    The argument tolerance is ``xtol`` (default ``tol``) plus a relative
    part ``tol * |x|``. An endpoint that is already an exact zero is
    returned directly.
    """
    if bracket.f_lo == 0.0:
        return bracket.lo
    if bracket.f_hi == 0.0:
        return bracket.hi
    xtol = tol if xtol is None else xtol
    rtol = max(tol, 4.0 * np.finfo(float).eps)
    try:
        root, info = optimize.brentq(
            f, bracket.lo, bracket.hi, xtol=xtol, rtol=rtol,
            maxiter=max_iter, full_output=True, disp=False,
        )
    except ValueError as exc:
        # raised for NaN function values inside the bracket
        raise ConvergenceError(str(exc)) from exc
    if not info.converged:
        raise ConvergenceError(
            f"root search did not converge in {max_iter} iterations", best=float(root)
        )
    return float(root)


def expand_bracket(
    f: Callable[[float], float],
    seed: float,
    direction: int,
    span_cap: float = DEFAULT_SPAN_CAP,
    factor: float = 2.0,
) -> Bracket:
    """Grow an interval from ``seed`` towards ``direction`` until ``f`` changes sign.

    Step sizes start at ``|seed|`` (or 1 when the seed is zero) and grow
    geometrically. Raises :class:`SpanCapError` once the interval is wider
    than ``span_cap``.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be -1 or +1")
    f_seed = float(f(seed))
    if np.isnan(f_seed):
        raise ValueError("f is NaN at the seed")
    if f_seed == 0.0:
        return _zero_bracket(f, seed, abs(seed) or 1.0)

    prev, f_prev = seed, f_seed
    step = abs(seed) or 1.0
    while True:
        nxt = prev + direction * step
        f_nxt = float(f(nxt))
        if np.isnan(f_nxt):
            raise ConvergenceError(f"f returned NaN at {nxt} while expanding the bracket", best=prev)
        if np.sign(f_nxt) != np.sign(f_prev):
            if prev < nxt:
                return Bracket(prev, nxt, f_prev, f_nxt)
            return Bracket(nxt, prev, f_nxt, f_prev)
        if abs(nxt - seed) > span_cap:
            raise SpanCapError(f"no sign change within span {span_cap:g} of seed {seed}")
        prev, f_prev = nxt, f_nxt
        step *= factor


def _zero_bracket(f, x0, step):
    # the seed is an exact zero; find a bracket around it or collapse onto it
    for h in (step * 1e-6, step * 1e-3, step):
        fl, fh = float(f(x0 - h)), float(f(x0 + h))
        if np.sign(fl) * np.sign(fh) < 0:
            return Bracket(x0 - h, x0 + h, fl, fh)
    raise NoSignChangeError(f"seed {x0} is a zero without a sign change around it")
