"""Price assembly from a solved delta profile.

Z(0, S0) = phi(0, S0) - (1/2) int Delta_-(t) q_t(S0, b_-(t)) dt
                      + (1/2) int Delta_+(t) q_t(S0, b_+(t)) dt

Both premium terms are non-positive (Delta_- >= 0, Delta_+ <= 0), so the
knock-out price never exceeds the European value.  One profile serves a
whole spot ladder: prices, deltas (differentiated representation) and gammas
re-use the same solve.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ProfileMismatch, SpotOutsideCorridor
from .european import EuropeanValuator
from .models import dkernel_dx, kernel_q
from .validation import as_float_array
from .volterra import sqrt_weights_right, _trapezoid_weights


@dataclass
class PriceResult:
    """Decomposed knock-out price; all monetary fields carry e^{-rT}."""

    european: float
    premium_lower: float
    premium_upper: float
    price: float
    discount_factor: float
    undiscounted_price: float
    discounted: bool = True
    flags: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "european": self.european,
            "premium_lower": self.premium_lower,
            "premium_upper": self.premium_upper,
            "price": self.price,
            "discount_factor": self.discount_factor,
            "undiscounted_price": self.undiscounted_price,
            "discounted": self.discounted,
            "flags": dict(self.flags),
        }


@dataclass
class Ladder:
    spots: np.ndarray
    prices: np.ndarray
    deltas: np.ndarray
    gammas: np.ndarray


def _check_spot(contract, spot):
    lo, hi = contract.corridor_at(0.0)
    if not lo < spot < hi:
        raise SpotOutsideCorridor(
            f"spot {spot:g} is not strictly inside the corridor ({lo:g}, {hi:g}) at t=0"
        )


def _check_profile(contract, profile):
    if abs(profile.grid.maturity - contract.maturity) > 1e-12 * contract.maturity:
        raise ProfileMismatch("profile grid maturity differs from the contract maturity")
    for side in ("lower", "upper"):
        has_barrier = getattr(contract, side) is not None
        if has_barrier != profile.has_side(side):
            raise ProfileMismatch(f"profile and contract disagree on the {side} barrier")


def _premium_integral(model, contract, profile, side, spot, differentiate=False):
    """int_0^T Delta(t) K(t) dt with K = q_t(S0, b(t)) or its spot derivative.

    The regular part goes through the trapezoid rule on the solve grid; the
    A/sqrt(T-t) part is integrated by the exact-moment product rule.  The
    t -> 0 endpoint is the analytic limit 0 (the kernel vanishes
    exponentially there for a spot off the barrier).
    """
    grid = profile.grid
    ts = grid.nodes
    barrier = contract.barrier(side)
    levels = np.asarray(barrier.value(ts), dtype=float)
    kfun = dkernel_dx if differentiate else kernel_q
    kvals = np.empty_like(ts)
    kvals[0] = 0.0
    kvals[1:] = kfun(model, ts[1:], spot, levels[1:])
    reg, a = profile._parts(side)
    total = float(_trapezoid_weights(ts) @ (reg * kvals))
    if a != 0.0:
        total += a * float(sqrt_weights_right(ts, grid.maturity) @ kvals)
    return total


def price(model, contract, spot, profile, valuator=None):
    """Assemble the PriceResult for one spot from a solved profile."""
    _check_spot(contract, spot)
    _check_profile(contract, profile)
    v = valuator or EuropeanValuator(model, contract)
    european = v.value(0.0, spot)
    prem_lower = 0.0
    prem_upper = 0.0
    if contract.lower is not None:
        prem_lower = -0.5 * _premium_integral(model, contract, profile, "lower", spot)
    if contract.upper is not None:
        prem_upper = 0.5 * _premium_integral(model, contract, profile, "upper", spot)
    df = math.exp(-contract.rate * contract.maturity)
    european_d = df * european
    prem_lower_d = df * prem_lower
    prem_upper_d = df * prem_upper
    flags = {
        "near_expiry_unreliable": bool(
            profile.near_expiry_unreliable_plus or profile.near_expiry_unreliable_minus
        ),
    }
    # the decomposition identity price == european + premiums holds exactly
    return PriceResult(
        european=european_d,
        premium_lower=prem_lower_d,
        premium_upper=prem_upper_d,
        price=european_d + prem_lower_d + prem_upper_d,
        discount_factor=df,
        undiscounted_price=european + prem_lower + prem_upper,
        flags=flags,
    )


def ladder(model, contract, spots, profile, valuator=None):
    """Prices, deltas and gammas over a spot ladder from one solved profile.

    Deltas come from differentiating the price representation in the spot;
    gammas are central differences of the delta ladder (one-sided at the
    edges).
    """
    spots = as_float_array("spots", spots)
    _check_profile(contract, profile)
    v = valuator or EuropeanValuator(model, contract)
    df = math.exp(-contract.rate * contract.maturity)
    prices = np.empty_like(spots)
    deltas = np.empty_like(spots)
    for i, s in enumerate(spots):
        res = price(model, contract, float(s), profile, valuator=v)
        prices[i] = res.price
        d = v.spot_delta(0.0, float(s))
        if contract.lower is not None:
            d -= 0.5 * _premium_integral(model, contract, profile, "lower", float(s), True)
        if contract.upper is not None:
            d += 0.5 * _premium_integral(model, contract, profile, "upper", float(s), True)
        deltas[i] = df * d
    gammas = np.gradient(deltas, spots, edge_order=1) if len(spots) > 1 else np.zeros_like(spots)
    return Ladder(spots=spots, prices=prices, deltas=deltas, gammas=gammas)


def delta_at_barrier(profile, t):
    """(Delta_+(t), Delta_-(t)) by linear interpolation of the profile nodes.

    Entries are None for absent barriers; the near-expiry reliability flags
    live on the profile itself.
    """
    plus = profile.delta_at(t, "upper") if profile.has_side("upper") else None
    minus = profile.delta_at(t, "lower") if profile.has_side("lower") else None
    return plus, minus
