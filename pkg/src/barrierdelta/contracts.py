"""Barrier and payoff definitions plus contract validation.

validate() classifies a contract into the smooth regime (payoff C^2 on the
terminal corridor with vanishing endpoint values, so the deltas at the
barriers are continuous and bounded) or the L1 regime (payoff merely
piecewise continuous; the deltas may blow up near expiry but stay
integrable).
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import BarrierCrossing, NonpositiveBarrier, NonpositiveMaturity
from .validation import check_finite, check_positive

_REL_TOL = 1e-9


# --------------------------------------------------------------------------
# Barriers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantBarrier:
    level: float

    def __post_init__(self):
        if not (isinstance(self.level, (int, float)) and math.isfinite(self.level) and self.level > 0):
            raise NonpositiveBarrier(f"barrier level must be positive, got {self.level!r}")

    is_constant = True

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, float(self.level))
        return out if out.ndim else float(out)

    def slope(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        return out if out.ndim else float(out)

    def curvature(self, t):
        return self.slope(t)


@dataclass(frozen=True)
class ExponentialBarrier:
    """b(t) = level0 * exp(growth * t)."""

    level0: float
    growth: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.level0, (int, float)) and math.isfinite(self.level0) and self.level0 > 0):
            raise NonpositiveBarrier(f"barrier level must be positive, got {self.level0!r}")
        check_finite("growth", self.growth)

    @property
    def is_constant(self):
        return self.growth == 0.0

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = self.level0 * np.exp(self.growth * t)
        return out if out.ndim else float(out)

    def slope(self, t):
        t = np.asarray(t, dtype=float)
        out = self.growth * self.level0 * np.exp(self.growth * t)
        return out if out.ndim else float(out)

    def curvature(self, t):
        t = np.asarray(t, dtype=float)
        out = self.growth**2 * self.level0 * np.exp(self.growth * t)
        return out if out.ndim else float(out)


Barrier = Union[ConstantBarrier, ExponentialBarrier]


def barrier_value(b, t):
    return b.value(t)


def barrier_slope(b, t):
    return b.slope(t)


# --------------------------------------------------------------------------
# Payoffs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Call:
    strike: float

    def __post_init__(self):
        check_positive("strike", self.strike)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.maximum(x - self.strike, 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Put:
    strike: float

    def __post_init__(self):
        check_positive("strike", self.strike)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.maximum(self.strike - x, 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class DoubleNoTouch:
    """Pays 1 at expiry; the corridor truncation is applied by the European valuer."""

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class SmoothBump:
    """Quartic bump (x-left)^2 (right-x)^2 scaled so the midpoint value is height.

    Vanishes together with its first derivative at both ends; the second
    derivative is smooth inside (left, right).
    """

    left: float
    right: float
    height: float = 1.0

    def __post_init__(self):
        check_positive("left", self.left)
        check_positive("right", self.right)
        check_finite("height", self.height)
        if self.height < 0:
            raise ValueError("height must be non-negative")
        if self.right <= self.left:
            raise ValueError("SmoothBump requires left < right")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        half = 0.5 * (self.right - self.left)
        quartic = ((x - self.left) * (self.right - x)) ** 2 / half**4
        out = np.where((x > self.left) & (x < self.right), self.height * quartic, 0.0)
        return out if out.ndim else float(out)


Payoff = Union[Call, Put, DoubleNoTouch, SmoothBump]


def payoff_eval(payoff, x):
    """Pointwise payoff value; truncation to the corridor is not applied here."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0.0):
        raise ValueError("payoff_eval requires x >= 0")
    return payoff.value(x)


def payoff_breakpoints(payoff):
    """Interior points where the payoff is not smooth (kinks, window edges)."""
    if isinstance(payoff, (Call, Put)):
        return [payoff.strike]
    if isinstance(payoff, SmoothBump):
        return [payoff.left, payoff.right]
    pts = getattr(payoff, "breakpoints", None)
    return list(pts()) if callable(pts) else []


# --------------------------------------------------------------------------
# Contract
# --------------------------------------------------------------------------

class Regime(enum.Enum):
    SMOOTH = "smooth_regime"
    L1 = "L1_regime"


@dataclass(frozen=True)
class BarrierContract:
    payoff: object
    maturity: float
    lower: Optional[Barrier] = None
    upper: Optional[Barrier] = None
    rate: float = 0.0
    dividend: float = 0.0

    def __post_init__(self):
        if self.maturity is None or not math.isfinite(float(self.maturity)) or float(self.maturity) <= 0:
            raise NonpositiveMaturity(f"maturity must be positive, got {self.maturity!r}")
        check_finite("rate", self.rate)
        check_finite("dividend", self.dividend)
        if self.lower is None and self.upper is None:
            raise ValueError("at least one barrier must be present")

    @property
    def mu(self):
        """Risk-neutral drift r - delta used by the diffusion."""
        return self.rate - self.dividend

    def corridor_at(self, t):
        """(lower, upper) bounds at time t; absent barriers map to (0, inf)."""
        lo = self.lower.value(t) if self.lower is not None else 0.0
        hi = self.upper.value(t) if self.upper is not None else math.inf
        return lo, hi

    def barrier(self, which):
        if which == "lower":
            b = self.lower
        elif which == "upper":
            b = self.upper
        else:
            raise ValueError(f"which must be 'lower' or 'upper', got {which!r}")
        if b is None:
            raise ValueError(f"contract has no {which} barrier")
        return b

    @property
    def sides(self):
        out = []
        if self.upper is not None:
            out.append("upper")
        if self.lower is not None:
            out.append("lower")
        return out


def _close(a, b):
    return abs(a - b) <= _REL_TOL * max(1.0, abs(a), abs(b))


def payoff_inside_limit(contract, which):
    """Limit of the corridor-truncated payoff at barrier b_pm(T) from inside."""
    lo, hi = contract.corridor_at(contract.maturity)
    x = hi if which == "upper" else lo
    if which == "upper" and not math.isfinite(x):
        raise ValueError("no finite upper corridor endpoint")
    return float(payoff_eval(contract.payoff, x))


def classify_payoff(contract):
    """Regime of the payoff on the open terminal corridor.

    SMOOTH requires a twice-differentiable payoff (Hoelder second derivative)
    on the corridor with vanishing values at its finite endpoints; everything
    else is L1.
    """
    lo, hi = contract.corridor_at(contract.maturity)
    p = contract.payoff
    if isinstance(p, Call):
        # Linear on the corridor only when the kink sits at/below the lower
        # endpoint; endpoint values vanish only for K == lower and no upper cut.
        if math.isinf(hi) and _close(p.strike, lo):
            return Regime.SMOOTH
        return Regime.L1
    if isinstance(p, Put):
        if contract.lower is None and _close(p.strike, hi):
            return Regime.SMOOTH
        return Regime.L1
    if isinstance(p, SmoothBump):
        # The quartic's second derivative jumps at left/right, so those edges
        # must coincide with the corridor endpoints.
        if math.isfinite(hi) and _close(p.left, lo) and _close(p.right, hi):
            return Regime.SMOOTH
        return Regime.L1
    if isinstance(p, DoubleNoTouch):
        return Regime.L1
    claimed = getattr(p, "smooth_on", None)
    if callable(claimed) and claimed(lo, hi):
        return Regime.SMOOTH
    return Regime.L1


@dataclass
class ValidationReport:
    regime: Regime
    warnings: list = field(default_factory=list)


def validate(contract):
    """Check structural validity and classify the contract's regime.

    Raises BarrierCrossing / NonpositiveBarrier / NonpositiveMaturity; returns
    a ValidationReport with the regime and non-fatal warnings.
    """
    T = float(contract.maturity)
    for which in ("lower", "upper"):
        b = getattr(contract, which)
        if b is None:
            continue
        # Both variants are monotone in t, so endpoint positivity is exact.
        if min(b.value(0.0), b.value(T)) <= 0.0:
            raise NonpositiveBarrier(f"{which} barrier is not positive on [0, T]")
    if contract.lower is not None and contract.upper is not None:
        # log b_+ - log b_- is affine in t for these variants, so checking the
        # endpoints decides the sign everywhere on [0, T].
        for t in (0.0, T):
            if contract.lower.value(t) >= contract.upper.value(t):
                raise BarrierCrossing(
                    f"lower barrier {contract.lower.value(t):g} >= upper barrier "
                    f"{contract.upper.value(t):g} at t={t:g}"
                )

    regime = classify_payoff(contract)
    warnings = []
    lo, hi = contract.corridor_at(T)
    if math.isfinite(hi):
        xs = np.linspace(lo, hi, 65)[1:-1]
        if np.all(payoff_eval(contract.payoff, xs) == 0.0):
            warnings.append("payoff vanishes identically on the terminal corridor")
    if regime is Regime.L1:
        for which in contract.sides:
            if payoff_inside_limit(contract, which) > 0.0:
                warnings.append(
                    f"payoff does not vanish at the {which} barrier at expiry; "
                    "the delta there grows without bound near maturity"
                )
    return ValidationReport(regime=regime, warnings=warnings)
