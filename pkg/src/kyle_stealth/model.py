"""Parameter containers, hazard and penalty families, assumption checks.

All containers are frozen dataclasses. The hazard and penalty functions
accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr

from .numerics import erfc

HAZARD_FAMILIES = ("quadratic", "absolute", "power", "erfc_detection", "logarithmic", "none")
C0_FAMILIES = ("zero", "linear", "power", "piecewise_example3")

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)


class ModelError(ValueError):
    """Invalid model parameters."""


# ---------------------------------------------------------------------------
# hazard
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HazardModel:
    """Size-dependent prosecution hazard ``lambda`` and its population scaling.

    ``K`` is the scale constant of the family (``K_theta`` for ``power``,
    ``K_D`` for ``erfc_detection``). ``theta`` is the declared small-argument
    growth exponent and ``theta_prime`` the remainder exponent. ``beta``
    sets ``lambda_N(z) = lambda(N**-beta * z)``.

    The ``logarithmic`` family ``K*log(1+|z|)`` is concave and only exists to
    reproduce the non-uniqueness example. ``none`` is the identically zero
    hazard used when a population exponent above one half removes the hazard
    from the rescaled problem.
    """

    family: str
    K: float = 1.0
    beta: float = 0.0
    theta: float = 2.0
    theta_prime: float = 1.0
    theta_d: float = 1.0
    y_bar: float = 1.0
    noise_sigma: float = 1.0

    def __post_init__(self):
        if self.family not in HAZARD_FAMILIES:
            raise ModelError(f"unknown hazard family {self.family!r}")
        if self.family != "none" and not self.K > 0:
            raise ModelError("hazard scale K must be positive")
        if not self.beta >= 0:
            raise ModelError("beta must be nonnegative")
        if not self.theta >= 1:
            raise ModelError("theta must be at least 1")
        if not self.theta_prime > 0:
            raise ModelError("theta_prime must be positive")
        if self.family == "erfc_detection":
            if not self.theta_d >= 1:
                raise ModelError("theta_D must be at least 1")
            if not (self.y_bar > 0 and self.noise_sigma > 0):
                raise ModelError("y_bar and sigma of the detection family must be positive")

    # constructors -------------------------------------------------------

    @classmethod
    def quadratic(cls, K: float, beta: float = 0.0, theta_prime: float = 1.0) -> "HazardModel":
        return cls("quadratic", K=K, beta=beta, theta=2.0, theta_prime=theta_prime)

    @classmethod
    def absolute(cls, K: float, beta: float = 0.0, theta_prime: float = 1.0) -> "HazardModel":
        return cls("absolute", K=K, beta=beta, theta=1.0, theta_prime=theta_prime)

    @classmethod
    def power(cls, K_theta: float, theta: float, beta: float = 0.0,
              theta_prime: float = 1.0) -> "HazardModel":
        return cls("power", K=K_theta, beta=beta, theta=theta, theta_prime=theta_prime)

    @classmethod
    def erfc_detection(cls, K_D: float, theta_D: float, y_bar: float, sigma: float,
                       theta_prime: float = 1.0) -> "HazardModel":
        # beta is fixed at 1/2 by construction of this family
        return cls("erfc_detection", K=K_D, beta=0.5, theta=min(theta_D, 2.0),
                   theta_prime=theta_prime, theta_d=theta_D, y_bar=y_bar, noise_sigma=sigma)

    @classmethod
    def logarithmic(cls, K: float = 1.0, beta: float = 0.0) -> "HazardModel":
        return cls("logarithmic", K=K, beta=beta, theta=1.0)

    @classmethod
    def none(cls) -> "HazardModel":
        return cls("none", K=0.0, beta=0.0, theta=2.0)

    # evaluation at N = 1 -------------------------------------------------

    @property
    def small_argument_constant(self) -> float:
        """``K_theta`` in ``lambda(z) ~ K_theta |z|^theta`` as ``z -> 0``."""
        if self.family == "erfc_detection":
            return self.K * float(erfc(self.y_bar / (_SQRT2 * self.noise_sigma)))
        return self.K

    def base(self, u):
        """``lambda(u)`` for the unscaled (N = 1) hazard."""
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        fam = self.family
        if fam == "quadratic":
            out = self.K * u * u
        elif fam == "absolute":
            out = self.K * a
        elif fam == "power":
            out = self.K * a**self.theta
        elif fam == "logarithmic":
            out = self.K * np.log1p(a)
        elif fam == "none":
            out = np.zeros_like(u)
        else:
            out = -self._detection_log_survival(u)
        return out[()] if out.ndim == 0 else out

    def base_derivative(self, u):
        """``lambda'(u)``; zero at ``u = 0`` for families with a kink there."""
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        sgn = np.sign(u)
        fam = self.family
        if fam == "quadratic":
            out = 2.0 * self.K * u
        elif fam == "absolute":
            out = self.K * sgn
        elif fam == "power":
            out = self.K * self.theta * sgn * a ** (self.theta - 1.0)
        elif fam == "logarithmic":
            out = self.K * sgn / (1.0 + a)
        elif fam == "none":
            out = np.zeros_like(u)
        else:
            out = self._detection_derivative(u)
        return out[()] if out.ndim == 0 else out

    def _detection_parts(self, u):
        a = np.abs(u)
        raw = self.K * a**self.theta_d
        capped = raw >= 1.0
        D = np.where(capped, 1.0, raw)
        dD = np.where(capped, 0.0, self.K * self.theta_d * a ** (self.theta_d - 1.0)) * np.sign(u)
        c = _SQRT2 * self.noise_sigma
        hi = (self.y_bar + u) / c
        lo = (self.y_bar - u) / c
        return D, dD, hi, lo, c

    def _detection_log_survival(self, u):
        D, _, hi, lo, _ = self._detection_parts(u)
        return _log_survival_from_parts(D, hi, lo)

    def _detection_derivative(self, u):
        D, dD, hi, lo, c = self._detection_parts(u)
        log_surv = _log_survival_from_parts(D, hi, lo)
        S = erfc(hi) + erfc(lo)
        # divide by the survival inside the exponentials so deep tails stay finite
        with np.errstate(over="ignore", invalid="ignore"):
            dS_over = (2.0 / (_SQRT_PI * c)) * (np.exp(-lo * lo - log_surv) - np.exp(-hi * hi - log_surv))
            # dD vanishes wherever D is capped, which is where exp(-log_surv) could overflow
            d_term = np.where(dD != 0.0, dD * S * np.exp(-log_surv), 0.0)
        return 0.5 * (d_term + D * dS_over)

    # scaled evaluation ---------------------------------------------------

    def scale(self, n_pop: float) -> float:
        return float(n_pop) ** (-self.beta)

    def value(self, z, n_pop: float = 1):
        """``lambda_N(z) = lambda(N**-beta z)``."""
        return self.base(self.scale(n_pop) * np.asarray(z, dtype=float))

    def derivative(self, z, n_pop: float = 1):
        """``d lambda_N / dz = N**-beta lambda'(N**-beta z)``."""
        s = self.scale(n_pop)
        return s * self.base_derivative(s * np.asarray(z, dtype=float))


def _log_gap(a, b):
    # log(Phi(a) - Phi(b)) for a > b
    la, lb = log_ndtr(a), log_ndtr(b)
    return la + np.log1p(-np.exp(lb - la))


def _log_survival_from_parts(D, hi, lo):
    # survival = (1 - D) + D/2 (erf(hi) + erf(lo)), with hi + lo > 0.
    # When one argument is negative the erf sum is a difference of normal
    # CDFs, evaluated in log space so it cannot underflow.
    with np.errstate(divide="ignore", invalid="ignore"):
        log_keep = np.log1p(-D)
        log_d = np.log(D)
        r2 = _SQRT2
        tail = np.where(lo <= 0.0, _log_gap(r2 * lo, -r2 * hi), _log_gap(r2 * hi, -r2 * lo))
        both = np.log(np.maximum((1.0 - D) + 0.5 * D * (2.0 - erfc(hi) - erfc(lo)), 0.0))
        mixed = np.logaddexp(log_keep, log_d + tail)
    return np.where((lo <= 0.0) | (hi <= 0.0), mixed, both)


# ---------------------------------------------------------------------------
# penalty
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PenaltyModel:
    """Criminal penalty ``C0(z)`` plus civil multiple ``chi`` of the profit."""

    chi: float = 1.0
    c0_family: str = "zero"
    K_alpha: float = 0.0
    alpha: float = 1.0
    alpha_prime: float = 1.0

    def __post_init__(self):
        if not self.chi >= 1:
            raise ModelError("chi must be at least 1")
        if self.c0_family not in C0_FAMILIES:
            raise ModelError(f"unknown C0 family {self.c0_family!r}")
        if self.c0_family in ("linear", "power") and not self.K_alpha > 0:
            raise ModelError("K_alpha must be positive")
        if not self.alpha >= 1:
            raise ModelError("alpha must be at least 1")
        if self.c0_family == "linear" and self.alpha != 1:
            raise ModelError("the linear C0 family has alpha = 1")
        if not self.alpha_prime > 0:
            raise ModelError("alpha_prime must be positive")

    @classmethod
    def civil(cls, chi: float) -> "PenaltyModel":
        return cls(chi=chi)

    @classmethod
    def linear(cls, chi: float, K_alpha: float, alpha_prime: float = 1.0) -> "PenaltyModel":
        return cls(chi=chi, c0_family="linear", K_alpha=K_alpha, alpha=1.0, alpha_prime=alpha_prime)

    @classmethod
    def power(cls, chi: float, K_alpha: float, alpha: float,
              alpha_prime: float = 1.0) -> "PenaltyModel":
        return cls(chi=chi, c0_family="power", K_alpha=K_alpha, alpha=alpha, alpha_prime=alpha_prime)

    @classmethod
    def piecewise_example3(cls, chi: float = 1.0) -> "PenaltyModel":
        return cls(chi=chi, c0_family="piecewise_example3")

    @property
    def chi0(self) -> float:
        return self.chi - 1.0

    @property
    def is_civil(self) -> bool:
        return self.c0_family == "zero"

    def c0(self, z):
        z = np.asarray(z, dtype=float)
        fam = self.c0_family
        if fam == "zero":
            out = np.zeros_like(z)
        elif fam == "linear":
            out = self.K_alpha * np.abs(z)
        elif fam == "power":
            out = self.K_alpha * np.abs(z) ** self.alpha
        else:
            with np.errstate(divide="ignore", over="ignore"):
                out = np.select(
                    [z <= -6.0, z <= 0.0, z <= 1.2],
                    [1.0 / (4.0 * z) + 1.0 / 12.0, -z / 144.0, 25.0 * z / 144.0],
                    5.0 / 12.0 - 1.0 / (4.0 * z),
                )
        return out[()] if out.ndim == 0 else out

    def c0_derivative(self, z):
        z = np.asarray(z, dtype=float)
        fam = self.c0_family
        if fam == "zero":
            out = np.zeros_like(z)
        elif fam == "linear":
            out = self.K_alpha * np.sign(z)
        elif fam == "power":
            out = self.K_alpha * self.alpha * np.sign(z) * np.abs(z) ** (self.alpha - 1.0)
        else:
            with np.errstate(divide="ignore", over="ignore"):
                out = np.select(
                    [z <= -6.0, z <= 0.0, z <= 1.2],
                    [-1.0 / (4.0 * z * z), np.full_like(z, -1.0 / 144.0), np.full_like(z, 25.0 / 144.0)],
                    1.0 / (4.0 * z * z),
                )
        return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# market instance and strategy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """A full market instance."""

    p: float
    sigma: float
    n_pop: int
    hazard: HazardModel
    penalty: PenaltyModel

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ModelError("p must lie in (0, 1)")
        if not self.sigma > 0:
            raise ModelError("sigma must be positive")
        if int(self.n_pop) != self.n_pop or self.n_pop < 1:
            raise ModelError("n_pop must be a positive integer")
        object.__setattr__(self, "n_pop", int(self.n_pop))

    @property
    def q(self) -> float:
        return (1.0 - self.p) / self.p

    @property
    def beta(self) -> float:
        return self.hazard.beta

    def with_n(self, n_pop: int) -> "ModelParams":
        return replace(self, n_pop=int(n_pop))


@dataclass(frozen=True)
class Strategy:
    """Insider orders ``(Z(0), Z(1))`` with ``Z(0) < 0 < Z(1)``."""

    z0: float
    z1: float

    def __post_init__(self):
        if not (self.z0 < 0.0 < self.z1):
            raise ModelError(f"strategy needs z0 < 0 < z1, got ({self.z0}, {self.z1})")

    @property
    def zeta(self) -> float:
        return self.z1 - self.z0

    def order(self, v: int) -> float:
        return self.z1 if v == 1 else self.z0

    def scaled(self, factor: float) -> "Strategy":
        return Strategy(self.z0 * factor, self.z1 * factor)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def hazard_value(h: HazardModel, n_pop: float, z):
    return h.value(z, n_pop)


def hazard_derivative(h: HazardModel, n_pop: float, z):
    return h.derivative(z, n_pop)


def prosecution_probability(h: HazardModel, n_pop: float, z):
    """``1 - exp(-lambda_N(z))``."""
    return -np.expm1(-h.value(z, n_pop))


def penalty_total(pen: PenaltyModel, z, profit):
    """``C0(z) + chi * max(profit, 0)``."""
    return pen.c0(z) + pen.chi * np.maximum(profit, 0.0)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {status}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        return "\n".join(str(c) for c in self.checks)


def _magnitude_grid(lo=1e-4, hi=1e4, per_decade=64):
    decades = math.log10(hi / lo)
    return np.logspace(math.log10(lo), math.log10(hi), int(round(decades * per_decade)) + 1)


def _is_convex(x, y, rel_tol=1e-9):
    # secant slopes must be nondecreasing on an increasing grid
    slopes = np.diff(y) / np.diff(x)
    jumps = np.diff(slopes)
    scale = np.maximum(1.0, np.abs(slopes[:-1]))
    bad = jumps < -rel_tol * scale
    return not bad.any(), (float(x[1:-1][bad][0]) if bad.any() else None)


def _loglog_slope(x, y):
    ok = (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def validate_assumptions(params: ModelParams) -> ValidationReport:
    """Numerical checks of the standing assumptions on ``lambda`` and ``C0``.

    Failures are reported as entries, never raised.
    """
    h, pen = params.hazard, params.penalty
    mags = _magnitude_grid()
    pos = np.concatenate(([0.0], mags))
    checks: list[Check] = []

    lam0 = float(h.base(0.0))
    checks.append(Check("hazard at zero", lam0 == 0.0, f"lambda(0) = {lam0:g}"))

    # convexity on each half line, including the origin
    conv_detail = []
    convex = True
    with np.errstate(over="ignore", invalid="ignore"):
        for sign, label in ((1.0, "z>0"), (-1.0, "z<0")):
            xs = sign * pos
            order = np.argsort(xs)
            ok, where = _is_convex(xs[order], h.base(xs[order]))
            if not ok:
                convex = False
                conv_detail.append(f"{label} fails near z = {where:.4g}")
    checks.append(Check("hazard convexity", convex, "; ".join(conv_detail)))

    d_pos, d_neg = h.base_derivative(mags), h.base_derivative(-mags)
    sign_ok = bool(np.all(d_pos > 0) and np.all(d_neg < 0))
    checks.append(Check("hazard derivative sign", sign_ok,
                        "" if sign_ok else "lambda' must be <0 on z<0 and >0 on z>0"))

    small = np.logspace(-4, -2, 41)
    fitted_theta = _loglog_slope(small, h.base(small))
    theta_ok = abs(fitted_theta - h.theta) <= 0.05
    checks.append(Check("hazard small-argument exponent", theta_ok,
                        f"fitted theta {fitted_theta:.4f}, declared {h.theta:g}"))

    c00 = float(pen.c0(0.0))
    checks.append(Check("penalty at zero", c00 == 0.0, f"C0(0) = {c00 + 0.0:g}"))
    mono = bool(np.all(np.diff(pen.c0(pos)) >= -1e-15) and np.all(np.diff(pen.c0(-pos)) >= -1e-15))
    checks.append(Check("penalty monotonicity", mono))
    p_convex = True
    for sign in (1.0, -1.0):
        xs = np.sort(sign * pos)
        ok, _ = _is_convex(xs, pen.c0(xs))
        p_convex &= ok
    checks.append(Check("penalty convexity", p_convex))

    if pen.c0_family in ("linear", "power"):
        large = np.logspace(3, 4, 21)
        fitted_alpha = _loglog_slope(large, pen.c0(large))
        checks.append(Check("penalty large-argument exponent", abs(fitted_alpha - pen.alpha) <= 0.05,
                            f"fitted alpha {fitted_alpha:.4f}, declared {pen.alpha:g}"))
    bounded = bool(pen.c0(1e8) < 2.0 * pen.c0(1e4) + 1e-12) and pen.c0_family != "zero"
    # informational only: bounded criminal penalties are reported, never failed
    checks.append(Check("penalty boundedness", True,
                        "C0 appears bounded" if bounded else "C0 unbounded or zero"))
    return ValidationReport(tuple(checks))
