"""Corridor-truncated European values along the barriers.

phi(t, x) = E_{t,x}[ payoff(S_T) * 1_{(b_-(T), b_+(T))}(S_T) ], undiscounted:
the process already carries the drift mu = r - delta, and the single e^{-rT}
discount factor is applied once at pricing time.  This function is the
right-hand side of every Volterra equation in the package.
"""

import math

import numpy as np
from scipy.integrate import quad

from .contracts import (
    Call,
    DoubleNoTouch,
    Put,
    SmoothBump,
    payoff_breakpoints,
    payoff_eval,
)
from .errors import QuadratureFailure
from .models import GBM, kernel_q, local_vol
from .special import norm_cdf, norm_pdf

_NEAR_EXPIRY = 1e-8
_QUAD_EPSREL = 1e-10
_QUAD_LIMIT = 200
_TAIL_SIGMAS = 9.0

CLOSED_FORM_PAYOFFS = (Call, Put, DoubleNoTouch)


class EuropeanValuator:
    """European valuer bound to one model and contract.

    method: 'auto' picks the GBM closed form for Call/Put/DoubleNoTouch and
    adaptive quadrature otherwise.
    """

    def __init__(self, model, contract, method="auto"):
        if method not in ("auto", "closed_form_gbm", "quadrature"):
            raise ValueError(f"unknown method {method!r}")
        if method == "closed_form_gbm":
            if not isinstance(model, GBM) or not isinstance(contract.payoff, CLOSED_FORM_PAYOFFS):
                raise ValueError("closed_form_gbm requires a GBM model and Call/Put/DoubleNoTouch payoff")
        if method == "auto":
            if isinstance(model, GBM) and isinstance(contract.payoff, CLOSED_FORM_PAYOFFS):
                method = "closed_form_gbm"
            else:
                method = "quadrature"
        self.model = model
        self.contract = contract
        self.method = method
        self._corridor = contract.corridor_at(contract.maturity)

    # -- generic entry points ------------------------------------------------

    def value(self, t, x):
        """phi(t, x) for 0 <= t <= T, x > 0."""
        T = self.contract.maturity
        if x <= 0.0:
            raise ValueError("value requires x > 0")
        if not 0.0 <= t <= T:
            raise ValueError("value requires 0 <= t <= T")
        tau = T - t
        if tau < _NEAR_EXPIRY:
            return self._terminal_limit(x)
        if self.method == "closed_form_gbm":
            return self._closed_form(tau, x)
        return self._quadrature(tau, x)

    def psi_profile(self, grid, which):
        """phi(t_i, b(t_i)) along the named barrier over the grid nodes."""
        barrier = self.contract.barrier(which)
        ts = grid.nodes
        return np.array([self.value(t, float(barrier.value(t))) for t in ts])

    def spot_delta(self, t, x):
        """d phi / dx; analytic on the closed-form path, 5-point FD otherwise."""
        T = self.contract.maturity
        tau = T - t
        if tau < _NEAR_EXPIRY:
            raise ValueError("spot_delta is not defined at expiry")
        if self.method == "closed_form_gbm":
            return self._closed_form_delta(tau, x)
        step = 1e-4 * x
        vals = [self._quadrature(tau, x + k * step) for k in (-2, -1, 1, 2)]
        return (vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * step)

    # -- terminal limit --------------------------------------------------------

    def _terminal_limit(self, x):
        """Limit of phi(t, x) as t -> T: the payoff inside the open corridor,
        half the inside value exactly on a barrier (the kernel splits its mass)."""
        lo, hi = self._corridor
        val = float(payoff_eval(self.contract.payoff, x))
        if lo < x < hi:
            scale = max(1.0, abs(x))
            if abs(x - lo) <= 1e-12 * scale or (math.isfinite(hi) and abs(x - hi) <= 1e-12 * scale):
                return 0.5 * val
            return val
        if abs(x - lo) <= 1e-12 * max(1.0, abs(x)):
            return 0.5 * val
        if math.isfinite(hi) and abs(x - hi) <= 1e-12 * max(1.0, abs(x)):
            return 0.5 * val
        return 0.0

    # -- GBM closed form -------------------------------------------------------

    def _d(self, k, x, tau, y):
        """Argument of N(.) in the truncated power moment, threshold y."""
        sig = self.model.sigma
        nu = self.model.mu - 0.5 * sig * sig
        if y <= 0.0:
            return math.inf
        if math.isinf(y):
            return -math.inf
        return (math.log(x / y) + nu * tau) / (sig * math.sqrt(tau)) + k * sig * math.sqrt(tau)

    def _moment(self, k, x, tau, a, b):
        """E[S_T^k 1_{a < S_T < b}] under GBM started at x, time to expiry tau."""
        if b <= a:
            return 0.0
        sig = self.model.sigma
        nu = self.model.mu - 0.5 * sig * sig
        amp = x**k * math.exp(k * nu * tau + 0.5 * k * k * sig * sig * tau)
        return amp * (norm_cdf(self._d(k, x, tau, a)) - norm_cdf(self._d(k, x, tau, b)))

    def _dmoment_dx(self, k, x, tau, a, b):
        if b <= a:
            return 0.0
        sig = self.model.sigma
        nu = self.model.mu - 0.5 * sig * sig
        amp = x**k * math.exp(k * nu * tau + 0.5 * k * k * sig * sig * tau)
        da, db = self._d(k, x, tau, a), self._d(k, x, tau, b)
        pdf_term = (norm_pdf(da) - norm_pdf(db)) / (sig * math.sqrt(tau))
        mom = amp * (norm_cdf(da) - norm_cdf(db))
        return (k * mom + amp * pdf_term) / x

    def _closed_form(self, tau, x):
        lo, hi = self._corridor
        p = self.contract.payoff
        if isinstance(p, Call):
            a = max(p.strike, lo)
            return self._moment(1, x, tau, a, hi) - p.strike * self._moment(0, x, tau, a, hi)
        if isinstance(p, Put):
            b = min(p.strike, hi)
            return p.strike * self._moment(0, x, tau, lo, b) - self._moment(1, x, tau, lo, b)
        return self._moment(0, x, tau, lo, hi)

    def _closed_form_delta(self, tau, x):
        lo, hi = self._corridor
        p = self.contract.payoff
        if isinstance(p, Call):
            a = max(p.strike, lo)
            return self._dmoment_dx(1, x, tau, a, hi) - p.strike * self._dmoment_dx(0, x, tau, a, hi)
        if isinstance(p, Put):
            b = min(p.strike, hi)
            return p.strike * self._dmoment_dx(0, x, tau, lo, b) - self._dmoment_dx(1, x, tau, lo, b)
        return self._dmoment_dx(0, x, tau, lo, hi)

    # -- quadrature --------------------------------------------------------------

    def _segments(self, tau, x):
        """Integration breakpoints over the terminal corridor."""
        lo, hi = self._corridor
        pts = {lo}
        for p in payoff_breakpoints(self.contract.payoff):
            if lo < p < hi:
                pts.add(float(p))
        if math.isfinite(hi):
            pts.add(hi)
        return sorted(pts), hi

    def _quadrature(self, tau, x):
        model = self.model
        payoff = self.contract.payoff

        if isinstance(model, GBM):
            # Log substitution: the weight becomes a unit Gaussian in u = log y.
            sig = model.sigma
            nu = model.mu - 0.5 * sig * sig
            center = math.log(x) + nu * tau
            width = sig * math.sqrt(tau)

            def integrand(u):
                y = math.exp(u)
                return float(payoff_eval(payoff, y)) * kernel_q(model, tau, x, y) / (y * sig * sig)

            pts, hi = self._segments(tau, x)
            lo = pts[0]
            u_lo = max(math.log(lo), center - _TAIL_SIGMAS * width) if lo > 0 else center - _TAIL_SIGMAS * width
            u_hi = min(math.log(hi), center + _TAIL_SIGMAS * width) if math.isfinite(hi) else center + _TAIL_SIGMAS * width
            if u_hi <= u_lo:
                return 0.0
            cuts = [math.log(p) for p in pts if p > 0.0]
            bounds = [u_lo] + [u for u in cuts if u_lo < u < u_hi] + [u_hi]
            return self._sum_segments(integrand, bounds)

        def integrand(y):
            lv = local_vol(model, y)
            return float(payoff_eval(payoff, y)) * kernel_q(model, tau, x, y) / (y * y * lv * lv)

        pts, hi = self._segments(tau, x)
        bounds = list(pts)
        if not math.isfinite(hi):
            bounds.append(math.inf)
        if bounds[0] == 0.0:
            bounds[0] = 1e-12  # the kernel may be endpoint-singular but integrable
        return self._sum_segments(integrand, bounds)

    def _sum_segments(self, integrand, bounds):
        total, err_total = 0.0, 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            if not a < b:
                continue
            val, err = quad(integrand, a, b, epsabs=1e-14, epsrel=_QUAD_EPSREL, limit=_QUAD_LIMIT)
            total += val
            err_total += err
        if err_total > max(1e-9 * abs(total), 1e-12):
            raise QuadratureFailure(
                f"corridor quadrature error {err_total:.2e} exceeds tolerance for value {total:.6e}"
            )
        return total
