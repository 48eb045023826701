import math

import numpy as np
import pytest

from barrierdelta.special import norm_cdf


def bs_call(spot, strike, sigma, tau, mu=0.0):
    """Undiscounted Black-Scholes call forward value under drift mu."""
    if tau <= 0.0:
        return max(spot - strike, 0.0)
    fwd = spot * math.exp(mu * tau)
    d1 = math.log(fwd / strike) / (sigma * math.sqrt(tau)) + 0.5 * sigma * math.sqrt(tau)
    d2 = d1 - sigma * math.sqrt(tau)
    return fwd * norm_cdf(d1) - strike * norm_cdf(d2)


def bs_put(spot, strike, sigma, tau, mu=0.0):
    fwd = spot * math.exp(mu * tau)
    return bs_call(spot, strike, sigma, tau, mu) - fwd + strike


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
