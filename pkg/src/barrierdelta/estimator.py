"""scikit-learn style estimator facade.

``fit`` performs the one expensive step, solving the Volterra (or Laplace)
system for the deltas along the barriers; ``predict`` prices any vector of
spots from that single solve, which is what makes spot ladders cheap.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import laplace, pricing, volterra
from .contracts import (
    BarrierContract,
    Call,
    ConstantBarrier,
    DoubleNoTouch,
    ExponentialBarrier,
    Put,
    SmoothBump,
    validate,
)
from .errors import UnsupportedConfiguration
from .european import EuropeanValuator
from .models import CEV, GBM
from .validation import as_float_array

_METHODS = ("auto", "volterra", "laplace")


def _build_barrier(spec):
    if spec is None:
        return None
    if isinstance(spec, (ConstantBarrier, ExponentialBarrier)):
        return spec
    if isinstance(spec, (int, float)):
        return ConstantBarrier(level=float(spec))
    if isinstance(spec, (tuple, list)) and len(spec) == 2:
        level, growth = spec
        if growth == 0.0:
            return ConstantBarrier(level=float(level))
        return ExponentialBarrier(level0=float(level), growth=float(growth))
    raise ValueError(f"cannot interpret barrier spec {spec!r}")


def _build_payoff(payoff, strike, left, right, height):
    if not isinstance(payoff, str):
        return payoff
    kind = payoff.lower()
    if kind == "call":
        return Call(strike=float(strike))
    if kind == "put":
        return Put(strike=float(strike))
    if kind in ("double_no_touch", "dnt"):
        return DoubleNoTouch()
    if kind == "smooth_bump":
        return SmoothBump(left=float(left), right=float(right), height=float(height))
    raise ValueError(f"unknown payoff {payoff!r}")


class BarrierOptionPricer(BaseEstimator):
    """Knock-out barrier option pricer with a fit/predict interface.

    Parameters mirror the model and contract fields; ``fit`` validates the
    contract and solves for the delta profile, ``predict(spots)`` returns
    discounted prices.  ``method='auto'`` uses the semi-analytic Laplace
    route for constant-barrier GBM contracts it supports and product
    integration otherwise.
    """

    def __init__(
        self,
        model="gbm",
        sigma=0.2,
        sigma0=None,
        rho=None,
        rate=0.0,
        dividend=0.0,
        lower=None,
        upper=None,
        payoff="call",
        strike=None,
        left=None,
        right=None,
        height=1.0,
        maturity=1.0,
        n=256,
        method="auto",
    ):
        self.model = model
        self.sigma = sigma
        self.sigma0 = sigma0
        self.rho = rho
        self.rate = rate
        self.dividend = dividend
        self.lower = lower
        self.upper = upper
        self.payoff = payoff
        self.strike = strike
        self.left = left
        self.right = right
        self.height = height
        self.maturity = maturity
        self.n = n
        self.method = method

    def _build(self):
        mu = float(self.rate) - float(self.dividend)
        if isinstance(self.model, (GBM, CEV)):
            diffusion = self.model
        elif self.model == "gbm":
            diffusion = GBM(sigma=float(self.sigma), mu=mu)
        elif self.model == "cev":
            diffusion = CEV(sigma0=float(self.sigma0), rho=float(self.rho), mu=mu)
        else:
            raise ValueError(f"unknown model {self.model!r}")
        contract = BarrierContract(
            payoff=_build_payoff(self.payoff, self.strike, self.left, self.right, self.height),
            maturity=float(self.maturity),
            lower=_build_barrier(self.lower),
            upper=_build_barrier(self.upper),
            rate=float(self.rate),
            dividend=float(self.dividend),
        )
        return diffusion, contract

    def fit(self, X=None, y=None):
        """Validate the contract and solve for the deltas along the barriers."""
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}, got {self.method!r}")
        diffusion, contract = self._build()
        report = validate(contract)
        grid = volterra.TimeGrid(n=int(self.n), maturity=contract.maturity)
        method = self.method
        if method == "auto":
            method = "laplace" if laplace.supports(diffusion, contract) else "volterra"
        if method == "laplace":
            if not laplace.supports(diffusion, contract):
                raise UnsupportedConfiguration(
                    "laplace method requires a constant-barrier GBM configuration"
                )
            profile = laplace.solve_constant(diffusion, contract, grid)
        else:
            profile = volterra.solve(diffusion, contract, grid)
        self.diffusion_ = diffusion
        self.contract_ = contract
        self.classification_ = report.regime
        self.warnings_ = list(report.warnings)
        self.grid_ = grid
        self.profile_ = profile
        self.method_used_ = method
        self.valuator_ = EuropeanValuator(diffusion, contract)
        return self

    def _check_fitted(self):
        if not hasattr(self, "profile_"):
            raise NotFittedError("call fit() before predicting")

    def predict(self, spots):
        """Discounted knock-out prices at the given spots from the fitted profile."""
        self._check_fitted()
        spots = as_float_array("spots", spots)
        return np.array(
            [
                pricing.price(
                    self.diffusion_, self.contract_, float(s), self.profile_, self.valuator_
                ).price
                for s in spots
            ]
        )

    def price(self, spot):
        """Full premium decomposition at one spot."""
        self._check_fitted()
        return pricing.price(
            self.diffusion_, self.contract_, float(spot), self.profile_, self.valuator_
        )

    def ladder(self, spots):
        """Prices, deltas and gammas over a spot ladder from the single solve."""
        self._check_fitted()
        return pricing.ladder(
            self.diffusion_, self.contract_, spots, self.profile_, self.valuator_
        )

    def delta_profile(self):
        self._check_fitted()
        return self.profile_
