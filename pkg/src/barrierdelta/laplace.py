"""Semi-analytic solver for constant barriers under GBM.

With constant barriers the Volterra kernels depend only on the lag, so the
system is a convolution equation.  The scalar auxiliary equation
1 = (h * q)(y) with q(t) = exp(-alpha t)/sqrt(pi t) has the closed-form
resolvent h(x) = q(x) + sqrt(alpha) erf(sqrt(alpha x)); the double-barrier
analogue solves (1 0; 0 1) = Q * h in the Laplace domain and recovers the
four resolvent entries h_ij by fixed-Talbot numerical inversion.  The deltas
then follow from

    f(x) = h(x) Psi(0) + (h * Psi')(x),

where Psi is the (scaled) European value along the barrier in reversed time.
Both h and Psi' carry integrable 1/sqrt factors at zero lag, so each
convolution is evaluated through the substitution s = x sin^2(theta), which
maps sqrt(s)-type behaviour onto smooth functions of theta and lets a fixed
Gauss-Legendre rule integrate every row with near-spectral accuracy.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .contracts import Call, Put
from .errors import (
    DeterminantVanishing,
    InversionUnstable,
    QuadratureFailure,
    UnsupportedConfiguration,
)
from .european import EuropeanValuator
from .models import GBM, kernel_q
from .special import erf, norm_cdf, norm_pdf
from .volterra import DeltaProfile, _near_expiry_flag

_SQRT_PI = math.sqrt(math.pi)
_DET_TOL = 1e-12
_STABILITY_TOL = 1e-6
# fixed Talbot in double precision is most accurate near 24-32 nodes; larger
# degrees amplify roundoff by e^(2M/5), so the stability pair stays below 32
_TALBOT_DEGREES = (32, 24)
_THETA_NODES = 64
_SPLINE_POINTS = 1024


# --------------------------------------------------------------------------
# Scalar convolution kernel and its resolvent (single constant barrier)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvolutionKernel:
    """Difference kernel q(t) = exp(-alpha t) / sqrt(pi t) of the scalar equation."""

    alpha: float

    def __post_init__(self):
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha!r}")

    @classmethod
    def from_model(cls, model):
        nu = model.mu - 0.5 * model.sigma**2
        return cls(alpha=nu * nu / (2.0 * model.sigma**2))

    def q(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0.0):
            raise ValueError("q requires t > 0")
        out = np.exp(-self.alpha * t) / np.sqrt(np.pi * t)
        return out if out.ndim else float(out)


def auxiliary_h(alpha, t):
    """Resolvent h(t) = q(t) + sqrt(alpha) erf(sqrt(alpha t)) solving 1 = h * q."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0.0):
        raise ValueError("auxiliary_h requires t > 0")
    out = np.exp(-alpha * t_arr) / np.sqrt(np.pi * t_arr) + math.sqrt(alpha) * erf(
        np.sqrt(alpha * t_arr)
    )
    return out if out.ndim else float(out)


def _auxiliary_h_tilde(alpha, t):
    """sqrt(t) * h(t), finite at t = 0 with value 1/sqrt(pi)."""
    t_arr = np.asarray(t, dtype=float)
    return np.exp(-alpha * t_arr) / _SQRT_PI + np.sqrt(alpha * t_arr) * erf(
        np.sqrt(alpha * t_arr)
    )


# --------------------------------------------------------------------------
# Laplace transforms of the constant-barrier kernel entries
# --------------------------------------------------------------------------

_ENTRY_SIDES = {
    (1, 1): ("upper", "upper", -1.0),
    (1, 2): ("upper", "lower", 1.0),
    (2, 1): ("lower", "upper", -1.0),
    (2, 2): ("lower", "lower", 1.0),
}


def _entry_params(model, contract, entry):
    row_side, col_side, sign = _ENTRY_SIDES[entry]
    row = float(contract.barrier(row_side).value(0.0))
    col = float(contract.barrier(col_side).value(0.0))
    return row, col, sign


def transform_entry(model, contract, entry, s):
    """Closed-form L(Q_ij)(s), valid for complex s off the cut (-inf, -alpha].

    Q_ij(t) = sign * q_t(row, col) has transform
    sign * (col*sigma/sqrt(2)) * exp(l*nu/sigma^2) * exp(-(sqrt(2)|l|/sigma) w) / w,
    with l = log(col/row) and w = sqrt(s + alpha).
    """
    row, col, sign = _entry_params(model, contract, entry)
    sig = model.sigma
    nu = model.mu - 0.5 * sig * sig
    alpha = nu * nu / (2.0 * sig * sig)
    ell = math.log(col / row)
    w = np.sqrt(np.asarray(s, dtype=complex) + alpha)
    return (
        sign
        * (col * sig / math.sqrt(2.0))
        * math.exp(ell * nu / (sig * sig))
        * np.exp(-(math.sqrt(2.0) * abs(ell) / sig) * w)
        / w
    )


def laplace_transform_kernel(model, contract, entry, s):
    """L(Q_ij)(s) for real s > 0 by adaptive quadrature of the time integral.

    Diagonal entries use the t = v^2 substitution to remove the 1/sqrt(t)
    endpoint; off-diagonal integrands vanish at 0 and are integrated directly.
    Relative accuracy 1e-10; the closed form transform_entry is the oracle.
    """
    if not isinstance(model, GBM):
        raise UnsupportedConfiguration("kernel transforms require a GBM model")
    s = float(s)
    if s <= 0.0:
        raise ValueError("s must be positive")
    row, col, sign = _entry_params(model, contract, entry)
    nu = model.mu - 0.5 * model.sigma**2
    alpha = nu * nu / (2.0 * model.sigma**2)

    if entry[0] == entry[1]:
        cut = math.sqrt(45.0 / (s + alpha))

        def integrand(v):
            t = v * v
            return 2.0 * v * math.exp(-s * t) * sign * kernel_q(model, t, row, col)

        val, err = quad(integrand, 0.0, cut, epsabs=1e-15, epsrel=1e-12, limit=200)
    else:

        def integrand(t):
            return math.exp(-s * t) * sign * kernel_q(model, t, row, col)

        val, err = quad(integrand, 0.0, np.inf, epsabs=1e-15, epsrel=1e-12, limit=200)
    if err > max(1e-10 * abs(val), 1e-13):
        raise QuadratureFailure(f"transform quadrature error {err:.2e} too large")
    return val


# --------------------------------------------------------------------------
# Fixed-Talbot inversion
# --------------------------------------------------------------------------

def talbot_inverse(transform, t, degree=32):
    """Invert a Laplace transform at time t > 0 on the fixed Talbot contour.

    ``transform`` must accept a complex numpy array.  Suited to the smooth,
    non-oscillatory originals appearing here (kernels and resolvents with
    branch cuts on the negative real axis).
    """
    if t <= 0.0:
        raise ValueError("talbot_inverse requires t > 0")
    M = int(degree)
    r = 2.0 * M / 5.0
    theta = np.arange(M) * np.pi / M
    cot = np.zeros(M)
    cot[1:] = 1.0 / np.tan(theta[1:])
    p = (r / t) * theta * (cot + 1j)
    p[0] = r / t
    gamma = np.empty(M, dtype=complex)
    gamma[0] = 0.5 * np.exp(t * p[0])
    gamma[1:] = np.exp(t * p[1:]) * (
        1.0 + 1j * theta[1:] * (1.0 + cot[1:] ** 2) - 1j * cot[1:]
    )
    vals = transform(p)
    return float(np.real(np.sum(gamma * vals)) * 2.0 / (5.0 * t))


# --------------------------------------------------------------------------
# Resolvent table for the constant double barrier
# --------------------------------------------------------------------------

@dataclass
class ResolventTable:
    """Scaled resolvent samples: splines of sqrt(u) h_ij(u) in v = sqrt(u).

    The diagonal limits at u = 0 are -+ sqrt(2)/(B sigma sqrt(pi)) (the
    single-barrier resolvent behaviour); the off-diagonal entries vanish to
    all orders at zero lag.
    """

    horizon: float
    splines: dict
    degree: int

    def h_tilde(self, entry, u):
        """sqrt(u) * h_ij(u) for u in [0, horizon]."""
        u = np.asarray(u, dtype=float)
        out = self.splines[entry](np.sqrt(u))
        return out if out.ndim else float(out)

    def h_tilde_zero(self, entry):
        return float(self.splines[entry](0.0))

    def h(self, entry, u):
        """h_ij(u) for u > 0."""
        u = np.asarray(u, dtype=float)
        out = self.h_tilde(entry, u) / np.sqrt(u)
        return out if out.ndim else float(out)

    def h_regular(self, entry, u):
        """h_ij(u) - h_tilde(0)/sqrt(u): the part left after removing the
        1/sqrt singularity; finite limit at u = 0 taken from the spline slope."""
        u = np.asarray(u, dtype=float)
        v = np.sqrt(u)
        h0 = self.h_tilde_zero(entry)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(v > 0.0, (self.splines[entry](v) - h0) / np.where(v > 0, v, 1.0), 0.0)
        slope = float(self.splines[entry](0.0, 1))
        out = np.where(v == 0.0, slope, out)
        return out if out.ndim else float(out)


def _h_transform_factory(model, contract, entry):
    """H_ij(p) = [Qhat(p)^{-1}]_ij / p with the 2x2 inverse in closed form."""

    def H(p):
        q11 = transform_entry(model, contract, (1, 1), p)
        q12 = transform_entry(model, contract, (1, 2), p)
        q21 = transform_entry(model, contract, (2, 1), p)
        q22 = transform_entry(model, contract, (2, 2), p)
        det = q11 * q22 - q12 * q21
        scale = np.abs(q11 * q22)
        bad = np.abs(det) < _DET_TOL * scale
        if np.any(bad):
            raise DeterminantVanishing(
                "transform-matrix determinant vanishes on the inversion contour"
            )
        adj = {(1, 1): q22, (1, 2): -q12, (2, 1): -q21, (2, 2): q11}[entry]
        return adj / (det * p)

    return H


def resolvent_table(model, contract, horizon, degree=_TALBOT_DEGREES[0], check_stability=True):
    """Build splines of sqrt(u) h_ij(u) on [0, horizon] from Talbot samples.

    Sampling is uniform in v = sqrt(u) because the resolvents are smooth
    functions of sqrt(lag); the u = 0 values are the analytic limits.
    """
    b_plus = float(contract.barrier("upper").value(0.0))
    b_minus = float(contract.barrier("lower").value(0.0))
    sig = model.sigma
    limits = {
        (1, 1): -math.sqrt(2.0) / (b_plus * sig * _SQRT_PI),
        (1, 2): 0.0,
        (2, 1): 0.0,
        (2, 2): math.sqrt(2.0) / (b_minus * sig * _SQRT_PI),
    }
    v_grid = np.linspace(0.0, math.sqrt(horizon), _SPLINE_POINTS + 1)
    splines = {}
    samples = {}
    for entry in _ENTRY_SIDES:
        H = _h_transform_factory(model, contract, entry)
        vals = np.empty_like(v_grid)
        vals[0] = limits[entry]
        for i, v in enumerate(v_grid[1:], start=1):
            u = v * v
            vals[i] = v * talbot_inverse(H, u, degree)
        samples[entry] = vals
        splines[entry] = CubicSpline(v_grid, vals)
    table = ResolventTable(horizon=horizon, splines=splines, degree=degree)
    if check_stability:
        other = _TALBOT_DEGREES[1] if degree == _TALBOT_DEGREES[0] else _TALBOT_DEGREES[0]
        scale = max(max(np.max(np.abs(v)) for v in samples.values()), 1e-300)
        probe = v_grid[:: max(1, _SPLINE_POINTS // 32)][1:]
        worst = 0.0
        for entry in _ENTRY_SIDES:
            H = _h_transform_factory(model, contract, entry)
            for v in probe:
                u = v * v
                alt = v * talbot_inverse(H, u, other)
                worst = max(worst, abs(alt - float(splines[entry](v))))
        if worst > _STABILITY_TOL * scale:
            raise InversionUnstable(
                f"Talbot inversion disagreement {worst:.2e} between degrees "
                f"{degree} and {other}"
            )
    return table


# --------------------------------------------------------------------------
# Convolution via the s = x sin^2(theta) substitution
# --------------------------------------------------------------------------

def _theta_rule(n_nodes=_THETA_NODES):
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    theta = 0.25 * math.pi * (nodes + 1.0)
    return np.sin(theta) ** 2, 0.25 * math.pi * weights


def _convolve_rows(x_nodes, smooth_a_fn, h_tilde_fn, n_nodes=_THETA_NODES):
    """(h * g)(x_i) for h = h_tilde(u)/sqrt(u), g = smooth_a(s)/sqrt(s).

    With s = x sin^2(theta) each row becomes
    2 * int_0^{pi/2} smooth_a(x sin^2) h_tilde(x cos^2) d(theta): smooth in
    theta even when the factors behave like power series in sqrt(s), so a
    fixed Gauss-Legendre rule integrates all rows accurately, including the
    x -> 0 limit pi * smooth_a(0) * h_tilde(0).
    """
    sin2, w = _theta_rule(n_nodes)
    x = np.asarray(x_nodes, dtype=float)[:, None]
    s_mat = x * sin2[None, :]
    u_mat = x * (1.0 - sin2)[None, :]
    vals = smooth_a_fn(s_mat) * h_tilde_fn(u_mat)
    return 2.0 * vals @ w


# --------------------------------------------------------------------------
# Psi profiles in reversed time and their derivatives
# --------------------------------------------------------------------------

class _PsiSide:
    """Scaled right-hand side Psi(y) for one barrier.

    Decomposes Psi(y) = Psi(0) + 2 a sqrt(y) + R(y) with smooth R so that
    sqrt(y) Psi'(y) = a + sqrt(y) R'(y) stays bounded; the convolution only
    ever consumes that combination.  R' comes from 5-point finite differences
    of Psi unless an exact derivative is supplied; evaluations are cached in
    a spline over v = sqrt(y) because the expansion is a power series in
    sqrt(y).
    """

    def __init__(self, psi_fn, horizon, dpsi_exact=None, a_exact=None):
        self.psi = psi_fn
        self.T = horizon
        self.dpsi_exact = dpsi_exact
        self.psi0 = float(psi_fn(0.0))
        if a_exact is not None:
            self.a = float(a_exact)
        else:
            y1 = 1e-6 * horizon
            est1 = (psi_fn(y1) - self.psi0) / (2.0 * math.sqrt(y1))
            est2 = (psi_fn(4.0 * y1) - self.psi0) / (4.0 * math.sqrt(y1))
            self.a = 2.0 * est1 - est2
        self._spline = None

    def _r(self, y):
        return self.psi(y) - self.psi0 - 2.0 * self.a * math.sqrt(y)

    def _dpsi_fd(self, y):
        step = y / 8.0
        if y + 2.0 * step <= self.T:
            rp = (
                self._r(y - 2 * step)
                - 8.0 * self._r(y - step)
                + 8.0 * self._r(y + step)
                - self._r(y + 2 * step)
            ) / (12.0 * step)
        else:
            # backward stencil: the domain of Psi ends at y = T
            rp = (
                3.0 * self._r(y) - 4.0 * self._r(y - step) + self._r(y - 2 * step)
            ) / (2.0 * step)
        return self.a / math.sqrt(y) + rp

    def dpsi(self, y):
        if self.dpsi_exact is not None:
            return self.dpsi_exact(y)
        return self._dpsi_fd(y)

    def smooth_a_fn(self):
        """Vectorized sqrt(y) * Psi'(y) with the y = 0 limit a."""
        if self.dpsi_exact is not None:
            exact = self.dpsi_exact
            a = self.a

            def fn(y):
                y = np.asarray(y, dtype=float)
                out = np.full(y.shape, a)
                pos = y > 0.0
                if np.any(pos):
                    yp = y[pos]
                    out[pos] = np.sqrt(yp) * np.vectorize(exact)(yp)
                return out

            return fn
        if self._spline is None:
            v_grid = np.linspace(0.0, math.sqrt(self.T), _SPLINE_POINTS + 1)
            vals = np.empty_like(v_grid)
            vals[0] = self.a
            for i, v in enumerate(v_grid[1:], start=1):
                y = v * v
                vals[i] = v * self._dpsi_fd(y)
            self._spline = CubicSpline(v_grid, vals)
        spline = self._spline

        def fn(y):
            y = np.asarray(y, dtype=float)
            return spline(np.sqrt(y))

        return fn


def _down_call_dpsi(model, barrier_level, strike):
    """Analytic Psi' for the down-and-out call scaling Psi = (2 sqrt2/(B sigma)) C."""
    sig, mu = model.sigma, model.mu
    B, K = barrier_level, strike

    def dpsi(y):
        sy = math.sqrt(y)
        d_plus = (math.log(B / K) + mu * y) / (sig * sy) + 0.5 * sig * sy
        return (2.0 * math.sqrt(2.0) / sig) * math.exp(mu * y) * (
            mu * norm_cdf(d_plus) + (sig / (2.0 * sy)) * norm_pdf(d_plus)
        )

    a = 1.0 / _SQRT_PI if abs(math.log(B / K)) < 1e-12 else 0.0
    return dpsi, a


def _up_put_dpsi(model, barrier_level, strike):
    """Analytic Psi' for the up-and-out put scaling Psi = -(2 sqrt2/(B sigma)) P."""
    sig, mu = model.sigma, model.mu
    B, K = barrier_level, strike

    def dpsi(y):
        sy = math.sqrt(y)
        d_plus = (math.log(B / K) + mu * y) / (sig * sy) + 0.5 * sig * sy
        return (2.0 * math.sqrt(2.0) / sig) * math.exp(mu * y) * (
            mu * norm_cdf(-d_plus) - (sig / (2.0 * sy)) * norm_pdf(d_plus)
        )

    a = -1.0 / _SQRT_PI if abs(math.log(B / K)) < 1e-12 else 0.0
    return dpsi, a


# --------------------------------------------------------------------------
# Solvers
# --------------------------------------------------------------------------

def supports_single(model, contract):
    """Laplace route applies to GBM with one constant barrier and a
    call (lower, K >= B) or put (upper, K <= B) payoff, so Psi(0) = 0."""
    if not isinstance(model, GBM):
        return False
    sides = contract.sides
    if len(sides) != 1:
        return False
    barrier = contract.barrier(sides[0])
    if not getattr(barrier, "is_constant", False):
        return False
    B = float(barrier.value(0.0))
    p = contract.payoff
    if sides[0] == "lower" and isinstance(p, Call):
        return p.strike >= B
    if sides[0] == "upper" and isinstance(p, Put):
        return p.strike <= B
    return False


def supports_double(model, contract):
    if not isinstance(model, GBM):
        return False
    if contract.lower is None or contract.upper is None:
        return False
    return getattr(contract.lower, "is_constant", False) and getattr(
        contract.upper, "is_constant", False
    )


def supports(model, contract):
    return supports_double(model, contract) or supports_single(model, contract)


def solve_constant_single(model, contract, grid):
    """Delta profile for a single constant barrier via the closed-form resolvent."""
    if not supports_single(model, contract):
        raise UnsupportedConfiguration(
            "solve_constant_single requires GBM, one constant barrier and a "
            "call (lower) or put (upper) payoff vanishing at the barrier"
        )
    side = contract.sides[0]
    barrier_level = float(contract.barrier(side).value(0.0))
    alpha = ConvolutionKernel.from_model(model).alpha
    if side == "lower":
        dpsi, a_exact = _down_call_dpsi(model, barrier_level, contract.payoff.strike)
    else:
        dpsi, a_exact = _up_put_dpsi(model, barrier_level, contract.payoff.strike)
    T = grid.maturity
    psi_side = _PsiSide(lambda y: 0.0, T, dpsi_exact=dpsi, a_exact=a_exact)

    f = _convolve_rows(
        grid.nodes, psi_side.smooth_a_fn(), lambda u: _auxiliary_h_tilde(alpha, u)
    )
    regular_t = f[::-1].copy()
    profile = DeltaProfile(grid=grid)
    if side == "lower":
        profile.delta_minus = regular_t
        profile.near_expiry_unreliable_minus = _near_expiry_flag(regular_t, 0.0)
    else:
        profile.delta_plus = regular_t
        profile.near_expiry_unreliable_plus = _near_expiry_flag(regular_t, 0.0)
    profile.diagnostics["method"] = "laplace_single"
    return profile


def solve_constant_double(model, contract, grid, degree=_TALBOT_DEGREES[0]):
    """Delta profiles for constant double barriers via Laplace inversion.

    The resolvent matrix depends only on the barrier levels; the payoff
    enters through Psi_j(y) = 2 phi(T-y, B_j) and the assembly
    f_i = sum_j [ h_ij Psi_j(0) + h_ij * Psi_j' ].
    """
    if not supports_double(model, contract):
        raise UnsupportedConfiguration(
            "solve_constant_double requires GBM and two constant barriers"
        )
    T = grid.maturity
    b_plus = float(contract.barrier("upper").value(0.0))
    b_minus = float(contract.barrier("lower").value(0.0))
    valuator = EuropeanValuator(model, contract)
    table = resolvent_table(model, contract, T, degree=degree)

    psi_sides = {}
    for j, level in ((1, b_plus), (2, b_minus)):
        psi_sides[j] = _PsiSide(
            lambda y, level=level: 2.0 * valuator.value(max(T - y, 0.0), level), T
        )

    xs = grid.nodes
    f = {}
    for i in (1, 2):
        acc = np.zeros(len(xs))
        for j in (1, 2):
            entry = (i, j)
            acc += _convolve_rows(
                xs,
                psi_sides[j].smooth_a_fn(),
                lambda u, e=entry: table.h_tilde(e, u),
            )
            psi0 = psi_sides[j].psi0
            if psi0 != 0.0:
                acc += psi0 * table.h_regular(entry, xs)
        f[i] = acc

    a_plus = (
        psi_sides[1].psi0 * table.h_tilde_zero((1, 1))
        + psi_sides[2].psi0 * table.h_tilde_zero((1, 2))
    )
    a_minus = (
        psi_sides[1].psi0 * table.h_tilde_zero((2, 1))
        + psi_sides[2].psi0 * table.h_tilde_zero((2, 2))
    )

    profile = DeltaProfile(
        grid=grid,
        delta_plus=f[1][::-1].copy(),
        delta_minus=f[2][::-1].copy(),
        singular_plus=a_plus,
        singular_minus=a_minus,
    )
    profile.near_expiry_unreliable_plus = _near_expiry_flag(profile.delta_plus, a_plus)
    profile.near_expiry_unreliable_minus = _near_expiry_flag(profile.delta_minus, a_minus)
    profile.diagnostics["method"] = "laplace_double"
    profile.diagnostics["talbot_degree"] = degree
    return profile


def solve_constant(model, contract, grid, **kwargs):
    """Dispatch to the single- or double-barrier constant solver."""
    if len(contract.sides) == 2:
        return solve_constant_double(model, contract, grid, **kwargs)
    return solve_constant_single(model, contract, grid, **kwargs)
