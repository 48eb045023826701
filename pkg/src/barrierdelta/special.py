"""Special functions used by the model kernels and the convolution solver.

Thin wrappers around scipy.special that pin down the domain and overflow
behaviour the rest of the package relies on.  All functions accept scalars
or numpy arrays and are stateless.
"""

import numpy as np
import scipy.special as sp

_SQRT2 = np.sqrt(2.0)

MAX_BESSEL_ORDER = 10.0


def erf(x):
    """Error function (2/sqrt(pi)) * integral of exp(-v^2) from 0 to x."""
    return sp.erf(x)


def norm_cdf(x):
    """Standard normal cumulative distribution, N(x) = (1 + erf(x/sqrt(2)))/2."""
    return sp.ndtr(x)


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return out if out.ndim else float(out)


def bessel_i(order, z):
    """Modified Bessel function of the first kind I_order(z).

    Restricted to order in [0, 10] and z >= 0; raises OverflowError once the
    unscaled value exceeds the double range (use bessel_i_scaled inside
    products with exp(-z) factors instead).
    """
    order = float(order)
    if not 0.0 <= order <= MAX_BESSEL_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_BESSEL_ORDER}], got {order}")
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0.0):
        raise ValueError("z must be non-negative")
    out = sp.iv(order, z_arr)
    if np.any(np.isinf(out)):
        raise OverflowError(f"I_{order}(z) overflows for z={z!r}; use bessel_i_scaled")
    return out if out.ndim else float(out)


_ASYMPTOTIC_Z = 1e8


def _ive_asymptotic(order, z):
    # Hankel expansion of exp(-z) I_nu(z); three correction terms leave a
    # relative error below 1e-18 for z >= 1e8 and order <= 10
    mu = 4.0 * order * order
    inv8z = 1.0 / (8.0 * z)
    c1 = mu - 1.0
    c2 = c1 * (mu - 9.0)
    c3 = c2 * (mu - 25.0)
    series = 1.0 - c1 * inv8z + c2 * inv8z**2 / 2.0 - c3 * inv8z**3 / 6.0
    return series / np.sqrt(2.0 * np.pi * z)


def bessel_i_scaled(order, z):
    """Exponentially scaled modified Bessel function, exp(-z) * I_order(z).

    scipy's ive loses the very large arguments the short-time CEV kernel
    produces, so beyond z = 1e8 the Hankel asymptotic expansion takes over.
    """
    order = float(order)
    if not 0.0 <= order <= MAX_BESSEL_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_BESSEL_ORDER}], got {order}")
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0.0):
        raise ValueError("z must be non-negative")
    out = np.where(
        z_arr >= _ASYMPTOTIC_Z,
        _ive_asymptotic(order, np.maximum(z_arr, _ASYMPTOTIC_Z)),
        sp.ive(order, np.minimum(z_arr, _ASYMPTOTIC_Z)),
    )
    return out if out.ndim else float(out)
