"""Risk-neutral diffusion models and the kernel q_t(x, y).

q_t(x, y) is the transition density of the diffusion times the squared
diffusion coefficient at y.  It is the weight that measures expected local
time along a barrier and drives every integral operator in the package.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from .special import bessel_i_scaled
from .validation import check_finite, check_in_open_interval, check_positive

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class GBM:
    """Geometric Brownian motion: dS = mu*S dt + sigma*S dW."""

    sigma: float
    mu: float = 0.0

    def __post_init__(self):
        check_positive("sigma", self.sigma)
        check_finite("mu", self.mu)


@dataclass(frozen=True)
class CEV:
    """Constant elasticity of variance: dS = mu*S dt + sigma0*S^rho dW.

    rho is restricted to (0, 1) strictly; rho = 1 is represented as GBM.
    Zero is an absorbing boundary for the process.
    """

    sigma0: float
    rho: float
    mu: float = 0.0

    def __post_init__(self):
        check_positive("sigma0", self.sigma0)
        check_in_open_interval("rho", self.rho, 0.0, 1.0)
        check_finite("mu", self.mu)

    @property
    def bessel_order(self):
        return 1.0 / (2.0 - 2.0 * self.rho)


Diffusion = Union[GBM, CEV]


def local_vol(model, x):
    """Lognormal local volatility sigma(x); scalar or array x > 0."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0.0):
        raise ValueError("local_vol requires x > 0")
    if isinstance(model, GBM):
        out = np.full_like(x_arr, model.sigma)
    else:
        out = model.sigma0 * x_arr ** (model.rho - 1.0)
    return out if out.ndim else float(out)


def _cev_rate_parameter(model, t):
    """The k(t) parameter of the CEV kernel, with the analytic mu -> 0 limit."""
    one_m_rho = 1.0 - model.rho
    if model.mu == 0.0:
        return 1.0 / (2.0 * model.sigma0**2 * one_m_rho**2 * t)
    growth = np.exp(2.0 * t * model.mu * one_m_rho)
    return 2.0 * model.mu / (2.0 * model.sigma0**2 * one_m_rho * (growth - 1.0))


def kernel_q(model, t, x, y):
    """Kernel q_t(x, y) = p(t; x, y) * y^2 sigma(y)^2, broadcasting over arrays.

    For CEV the Bessel factor is evaluated in exponentially scaled form so the
    exp(-X-Y) product never overflows as t -> 0.
    """
    t_arr = np.asarray(t, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    if np.any(t_arr <= 0.0):
        raise ValueError("kernel_q requires t > 0")
    if np.any(x_arr <= 0.0) or np.any(y_arr <= 0.0):
        raise ValueError("kernel_q requires x > 0 and y > 0")

    if isinstance(model, GBM):
        sig = model.sigma
        nu = model.mu - 0.5 * sig * sig
        z = np.log(y_arr / x_arr) - nu * t_arr
        out = (
            y_arr
            * sig
            / np.sqrt(2.0 * np.pi * t_arr)
            * np.exp(-z * z / (2.0 * sig * sig * t_arr))
        )
        return out if out.ndim else float(out)

    rho = model.rho
    one_m_rho = 1.0 - rho
    order = model.bessel_order
    k = _cev_rate_parameter(model, t_arr)
    big_x = k * x_arr ** (2.0 * one_m_rho) * np.exp(2.0 * t_arr * model.mu * one_m_rho)
    big_y = k * y_arr ** (2.0 * one_m_rho)
    sqrt_xy = np.sqrt(big_x * big_y)
    log_pref = (
        np.log(2.0 * model.sigma0**2 * one_m_rho)
        + 2.0 * rho * np.log(y_arr)
        + np.log(k) / (2.0 * one_m_rho)
        + (np.log(big_x) + (1.0 - 4.0 * rho) * np.log(big_y)) / (4.0 * one_m_rho)
    )
    # exp(-X - Y) * I_nu(2 sqrt(XY)) = ive(nu, 2 sqrt(XY)) * exp(-(sqrt(X)-sqrt(Y))^2)
    gap = np.sqrt(big_x) - np.sqrt(big_y)
    out = np.exp(log_pref - gap * gap) * bessel_i_scaled(order, 2.0 * sqrt_xy)
    return out if out.ndim else float(out)


def kernel_diag(model, t, b):
    """Diagonal limit lim_{s->0} sqrt(s) * q_s(b, b) = b * sigma(b) / sqrt(2 pi).

    Independent of t for the supported models; t is accepted so callers can
    treat it uniformly with kernel_q along a curve.
    """
    b_arr = np.asarray(b, dtype=float)
    if np.any(b_arr <= 0.0):
        raise ValueError("kernel_diag requires b > 0")
    out = b_arr * local_vol(model, b_arr) / _SQRT_2PI
    return out if out.ndim else float(out)


def dkernel_dx(model, t, x, y):
    """Spatial derivative d q_t(x, y) / dx.

    Analytic for GBM; central finite difference with relative step 1e-4 for
    CEV (Greeks tolerances do not justify differentiating the Bessel form).
    """
    if isinstance(model, GBM):
        sig = model.sigma
        nu = model.mu - 0.5 * sig * sig
        t_arr = np.asarray(t, dtype=float)
        x_arr = np.asarray(x, dtype=float)
        y_arr = np.asarray(y, dtype=float)
        q = kernel_q(model, t_arr, x_arr, y_arr)
        out = q * (np.log(y_arr / x_arr) - nu * t_arr) / (sig * sig * t_arr * x_arr)
        return out if np.ndim(out) else float(out)
    x_arr = np.asarray(x, dtype=float)
    step = 1e-4 * x_arr
    hi = kernel_q(model, t, x_arr + step, y)
    lo = kernel_q(model, t, x_arr - step, y)
    out = (hi - lo) / (2.0 * step)
    return out if np.ndim(out) else float(out)
