"""Independent pricing references.

Closed forms (reflection principle and doubly-infinite image series for
GBM), Brownian-bridge-corrected Monte Carlo for GBM and CEV, and a Monte
Carlo occupation-time estimator of the expected local time along a barrier.
These deliberately avoid the Volterra/Laplace machinery so they can serve as
oracles for it; they share only the elementary European building blocks.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import UnsupportedConfiguration
from .european import EuropeanValuator
from .models import CEV, GBM, kernel_q, local_vol
from .validation import check_positive


@dataclass(frozen=True)
class McConfig:
    paths: int = 100_000
    steps: int = 200
    seed: int = 0
    bridge_correction: bool = True
    chunk: int = 65_536

    def __post_init__(self):
        if self.paths < 1_000:
            raise ValueError("paths must be >= 1000 for meaningful standard errors")
        if self.steps < 50:
            raise ValueError("steps must be >= 50")


def _rng(cfg):
    # Philox is counter-based, so chunked draws stay reproducible.
    return np.random.Generator(np.random.Philox(key=cfg.seed))


# --------------------------------------------------------------------------
# Closed forms
# --------------------------------------------------------------------------

def closed_form_gbm_single(model, contract, spot):
    """Reflection-principle price for one constant barrier under GBM.

    Z = phi(S0) - (B/S0)^(2 nu / sigma^2) phi(B^2/S0) with nu = mu - sigma^2/2
    and phi the corridor-truncated European value; discounted by e^{-rT}.
    """
    if not isinstance(model, GBM):
        raise UnsupportedConfiguration("closed_form_gbm_single requires GBM")
    sides = contract.sides
    if len(sides) != 1:
        raise UnsupportedConfiguration("exactly one barrier required")
    barrier = contract.barrier(sides[0])
    if not getattr(barrier, "is_constant", False):
        raise UnsupportedConfiguration("constant barrier required")
    b = float(barrier.value(0.0))
    if (sides[0] == "lower" and spot <= b) or (sides[0] == "upper" and spot >= b):
        return 0.0
    nu = model.mu - 0.5 * model.sigma**2
    v = EuropeanValuator(model, contract)
    power = (b / spot) ** (2.0 * nu / model.sigma**2)
    z = v.value(0.0, spot) - power * v.value(0.0, b * b / spot)
    return math.exp(-contract.rate * contract.maturity) * z


def closed_form_gbm_double(model, contract, spot, terms=None, tol=1e-12):
    """Image-series price for two constant barriers under GBM.

    Doubly infinite reflection series; ``terms`` fixes the truncation index,
    otherwise images are added until the latest pair is below ``tol`` in
    absolute value.  Returns (price, last_term_magnitude).
    """
    if not isinstance(model, GBM):
        raise UnsupportedConfiguration("closed_form_gbm_double requires GBM")
    if contract.lower is None or contract.upper is None:
        raise UnsupportedConfiguration("two barriers required")
    if not (
        getattr(contract.lower, "is_constant", False)
        and getattr(contract.upper, "is_constant", False)
    ):
        raise UnsupportedConfiguration("constant barriers required")
    b_minus = float(contract.lower.value(0.0))
    b_plus = float(contract.upper.value(0.0))
    if not b_minus < spot < b_plus:
        return 0.0, 0.0
    nu = model.mu - 0.5 * model.sigma**2
    pw = 2.0 * nu / model.sigma**2
    ratio = b_plus / b_minus
    v = EuropeanValuator(model, contract)

    def direct(k):
        s_k = spot * ratio ** (2 * k)
        return ratio ** (2 * k * nu / model.sigma**2) * v.value(0.0, s_k)

    def image(k):
        s_k = (b_minus * b_minus / spot) * ratio ** (2 * k)
        w = (b_minus * b_minus * ratio ** (2 * k) / (spot * spot)) ** (nu / model.sigma**2)
        return w * v.value(0.0, s_k)

    total = direct(0) - image(0)
    last = abs(total)
    k = 1
    while True:
        term = direct(k) - image(k) + direct(-k) - image(-k)
        total += term
        last = abs(term)
        if terms is not None:
            if k >= terms:
                break
        elif last < tol or k > 200:
            break
        k += 1
    df = math.exp(-contract.rate * contract.maturity)
    return df * total, last


# --------------------------------------------------------------------------
# Monte Carlo pricing
# --------------------------------------------------------------------------

def _log_barriers(contract, ts):
    out = {}
    if contract.lower is not None:
        out["lower"] = np.log(np.asarray(contract.lower.value(ts), dtype=float))
    if contract.upper is not None:
        out["upper"] = np.log(np.asarray(contract.upper.value(ts), dtype=float))
    return out


def mc_price(model, contract, spot, cfg):
    """(estimate, standard_error) for the discounted knock-out payoff.

    GBM uses exact lognormal increments; CEV an Euler scheme absorbed at
    zero.  With bridge_correction each step multiplies the survival weight by
    1 - exp(-2 d_i d_{i+1} / (sigma_loc^2 dt)) in log space, the linearised
    (exact for constant and exponential barriers under GBM) crossing
    probability, with sigma_loc frozen at the segment start.
    """
    check_positive("spot", spot)
    T = contract.maturity
    steps = cfg.steps
    dt = T / steps
    ts = np.linspace(0.0, T, steps + 1)
    log_b = _log_barriers(contract, ts)
    rng = _rng(cfg)
    gbm = isinstance(model, GBM)

    total_wx = 0.0
    total_wx2 = 0.0
    n_done = 0
    lo_T, hi_T = contract.corridor_at(T)
    payoff = contract.payoff

    while n_done < cfg.paths:
        m = min(cfg.chunk, cfg.paths - n_done)
        s = np.full(m, float(spot))
        alive = np.ones(m, dtype=bool)
        weight = np.ones(m)
        for i in range(steps):
            z = rng.standard_normal(m)
            s_prev = s
            if gbm:
                drift = (model.mu - 0.5 * model.sigma**2) * dt
                s = s_prev * np.exp(drift + model.sigma * math.sqrt(dt) * z)
                sig_loc = np.full(m, model.sigma)
            else:
                pos = s_prev > 0.0
                sig_loc = np.zeros(m)
                sig_loc[pos] = local_vol(model, s_prev[pos])
                s = s_prev + model.mu * s_prev * dt + model.sigma0 * np.where(
                    pos, s_prev, 0.0
                ) ** model.rho * math.sqrt(dt) * z
                s = np.maximum(s, 0.0)  # absorbing boundary at zero
                s[~pos] = 0.0
            for side, lb in log_b.items():
                b0, b1 = lb[i], lb[i + 1]
                if side == "lower":
                    hit = s <= np.exp(b1)
                else:
                    hit = s >= np.exp(b1)
                hit &= alive
                alive &= ~hit
                if cfg.bridge_correction:
                    ok = alive & (s > 0.0) & (sig_loc > 0.0)
                    if np.any(ok):
                        d0 = np.log(s_prev[ok]) - b0
                        d1 = np.log(s[ok]) - b1
                        expo = -2.0 * d0 * d1 / (sig_loc[ok] ** 2 * dt)
                        weight[ok] *= -np.expm1(np.clip(expo, -700.0, 0.0))
        inside = alive & (s > lo_T) & (s < hi_T)
        x = np.zeros(m)
        if np.any(inside):
            x[inside] = payoff.value(s[inside])
        wx = np.where(inside, weight, 0.0) * x
        total_wx += float(np.sum(wx))
        total_wx2 += float(np.sum(wx * wx))
        n_done += m

    df = math.exp(-contract.rate * T)
    mean = total_wx / cfg.paths
    var = max(total_wx2 / cfg.paths - mean * mean, 0.0)
    se = math.sqrt(var / cfg.paths)
    return df * mean, df * se


def mc_local_time(model, barrier, spot, maturity, epsilon, cfg):
    """(estimate, SE) of E[L_T^b(S)] by the occupation-time estimator.

    (1/eps) * sum_i 1{S_{t_i} in [b(t_i), b(t_i)+eps)} S_i^2 sigma(S_i)^2 dt
    averaged over paths; no knock-out is applied.
    """
    check_positive("spot", spot)
    check_positive("epsilon", epsilon)
    T = maturity
    steps = cfg.steps
    dt = T / steps
    ts = np.linspace(0.0, T, steps + 1)
    b_vals = np.asarray(barrier.value(ts), dtype=float)
    rng = _rng(cfg)
    gbm = isinstance(model, GBM)

    total = 0.0
    total2 = 0.0
    n_done = 0
    while n_done < cfg.paths:
        m = min(cfg.chunk, cfg.paths - n_done)
        s = np.full(m, float(spot))
        acc = np.zeros(m)
        for i in range(1, steps + 1):
            z = rng.standard_normal(m)
            if gbm:
                drift = (model.mu - 0.5 * model.sigma**2) * dt
                s = s * np.exp(drift + model.sigma * math.sqrt(dt) * z)
            else:
                pos = s > 0.0
                s = s + model.mu * s * dt + model.sigma0 * np.where(pos, s, 0.0) ** model.rho * math.sqrt(dt) * z
                s = np.maximum(s, 0.0)
            in_band = (s >= b_vals[i]) & (s < b_vals[i] + epsilon)
            if np.any(in_band):
                sb = s[in_band]
                acc[in_band] += sb * sb * local_vol(model, sb) ** 2 * dt
        acc /= epsilon
        total += float(np.sum(acc))
        total2 += float(np.sum(acc * acc))
        n_done += m
    mean = total / cfg.paths
    var = max(total2 / cfg.paths - mean * mean, 0.0)
    return mean, math.sqrt(var / cfg.paths)


def expected_local_time_quadrature(model, barrier, spot, maturity):
    """int_0^T q_u(S0, b(u)) du, the analytic side of the local-time identity."""

    def integrand(u):
        return kernel_q(model, u, spot, float(barrier.value(u)))

    val, err = quad(integrand, 0.0, maturity, epsabs=1e-12, epsrel=1e-10, limit=200)
    return val


def local_time_band_bias(model, barrier, spot, maturity, epsilon):
    """First-order band bias (eps/2) int_0^T dq/dy (S0, b(u)) du of the estimator."""

    def integrand(u):
        b = float(barrier.value(u))
        step = 1e-5 * b
        hi = kernel_q(model, u, spot, b + step)
        lo = kernel_q(model, u, spot, b - step)
        return (hi - lo) / (2.0 * step)

    val, _ = quad(integrand, 0.0, maturity, epsabs=1e-10, epsrel=1e-8, limit=200)
    return 0.5 * epsilon * val
