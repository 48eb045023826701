"""Product-integration solver for the first-kind Volterra system of the deltas.

After the substitution y = T - t, x = T - u the single-barrier equation
becomes a generalised Abel equation

    Psi(y) = int_0^y k(y, x) / sqrt(y - x) f(x) dx,

with k(y, x) = -+ (sqrt(y-x)/2) q_{y-x}(b(T-y), b(T-x)) smooth up to the
diagonal and f(x) = Delta(T - x).  The discretisation interpolates f
linearly on each panel and integrates the moments x^m / sqrt(y - x)
exactly, which yields a non-singular lower-triangular system solved by
forward substitution.  The double-barrier case interleaves the two unknowns
per node; the cross-barrier kernels are smooth, vanish at zero lag and are
integrated with plain trapezoid weights, so the 2(n+1) system stays strictly
lower triangular.

When the payoff does not vanish at a barrier at expiry the delta there
behaves like A / sqrt(T - t) with A = Psi(0) / (pi k(0,0)).  That singular
part is subtracted from the right-hand side before solving, the remainder is
solved for as usual, and A is carried on the profile so downstream
quadratures can integrate the 1/sqrt factor exactly.  For smooth-regime
contracts Psi(0) = 0 and the scheme reduces to the plain product rule.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .contracts import payoff_breakpoints, payoff_eval
from .errors import AssemblyFailure, SingularDiagonal
from .european import EuropeanValuator
from .models import kernel_diag, kernel_q

_DIAG_FLOOR = 1e-14
_SIGN_TOL = 1e-6
_GROWTH_FLAG_RATIO = 1.5


# --------------------------------------------------------------------------
# Grid and profile containers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_n = T."""

    n: int
    maturity: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n!r}")
        if not (self.maturity > 0 and math.isfinite(self.maturity)):
            raise ValueError(f"maturity must be positive, got {self.maturity!r}")

    @property
    def h(self):
        return self.maturity / self.n

    @property
    def nodes(self):
        return np.linspace(0.0, self.maturity, self.n + 1)


@dataclass
class DeltaProfile:
    """Deltas at the barriers over a time grid.

    Node arrays hold the regular part; ``singular_*`` is the coefficient A of
    the A / sqrt(T - t) blow-up (zero on smooth-regime contracts), so the
    total delta at t < T is ``regular(t) + A / sqrt(T - t)``.
    """

    grid: TimeGrid
    delta_plus: Optional[np.ndarray] = None
    delta_minus: Optional[np.ndarray] = None
    singular_plus: float = 0.0
    singular_minus: float = 0.0
    near_expiry_unreliable_plus: bool = False
    near_expiry_unreliable_minus: bool = False
    diagnostics: dict = field(default_factory=dict)

    def _parts(self, side):
        if side == "upper":
            return self.delta_plus, self.singular_plus
        if side == "lower":
            return self.delta_minus, self.singular_minus
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")

    def has_side(self, side):
        return self._parts(side)[0] is not None

    def totals(self, side):
        """Total delta at the grid nodes; +-inf at t = T when singular."""
        reg, a = self._parts(side)
        if reg is None:
            raise ValueError(f"profile has no {side} side")
        t = self.grid.nodes
        out = reg.copy()
        if a != 0.0:
            out[:-1] += a / np.sqrt(self.grid.maturity - t[:-1])
            out[-1] = math.copysign(math.inf, a)
        return out

    def delta_at(self, t, side):
        """Linear interpolation of the regular part plus the singular term."""
        reg, a = self._parts(side)
        if reg is None:
            return None
        T = self.grid.maturity
        if not 0.0 <= t <= T:
            raise ValueError("t outside [0, T]")
        val = float(np.interp(t, self.grid.nodes, reg))
        if a != 0.0:
            if t >= T:
                return math.copysign(math.inf, a)
            val += a / math.sqrt(T - t)
        return val


# --------------------------------------------------------------------------
# Exact moment weights for the 1/sqrt factors
# --------------------------------------------------------------------------

def sqrt_weights_right(xs, y):
    """Hat-function weights for int g(x)/sqrt(y - x) dx over the nodes xs.

    Exact for piecewise-linear g; requires ascending xs with xs[-1] <= y.
    """
    xs = np.asarray(xs, dtype=float)
    s = np.sqrt(np.maximum(y - xs, 0.0))
    sa, sb = s[:-1], s[1:]
    a, b = xs[:-1], xs[1:]
    m0 = 2.0 * (sa - sb)
    m1 = 2.0 * y * (sa - sb) - (2.0 / 3.0) * (sa**3 - sb**3)
    span = b - a
    wa = (b * m0 - m1) / span
    wb = (m1 - a * m0) / span
    w = np.zeros_like(xs)
    np.add.at(w, np.arange(len(xs) - 1), wa)
    np.add.at(w, np.arange(1, len(xs)), wb)
    return w


def sqrt_weights_left(xs, c):
    """Hat-function weights for int g(x)/sqrt(x - c) dx over the nodes xs.

    Exact for piecewise-linear g; requires ascending xs with c <= xs[0].
    """
    xs = np.asarray(xs, dtype=float)
    s = np.sqrt(np.maximum(xs - c, 0.0))
    sa, sb = s[:-1], s[1:]
    a, b = xs[:-1], xs[1:]
    m0 = 2.0 * (sb - sa)
    m1 = 2.0 * c * (sb - sa) + (2.0 / 3.0) * (sb**3 - sa**3)
    span = b - a
    wa = (b * m0 - m1) / span
    wb = (m1 - a * m0) / span
    w = np.zeros_like(xs)
    np.add.at(w, np.arange(len(xs) - 1), wa)
    np.add.at(w, np.arange(1, len(xs)), wb)
    return w


def _trapezoid_weights(xs):
    xs = np.asarray(xs, dtype=float)
    w = np.zeros_like(xs)
    d = np.diff(xs)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


# --------------------------------------------------------------------------
# Kernel evaluation in the reversed-time variables
# --------------------------------------------------------------------------

class _SideKernel:
    """k(y, x) for one barrier pair in the y = T - t variables.

    ``row_side`` fixes the barrier the equation is written on, ``col_side``
    the barrier the unknown lives on.  Same-side kernels carry the
    sqrt(y - x)/2 factor (weakly singular before the split); cross kernels
    are the plain q/2 and vanish at zero lag.
    """

    def __init__(self, model, contract, grid, row_side, col_side):
        self.model = model
        self.grid = grid
        self.row_side = row_side
        self.col_side = col_side
        self.same = row_side == col_side
        self.sign = -0.5 if col_side == "upper" else 0.5
        T = contract.maturity
        ys = grid.nodes
        self._row_b = contract.barrier(row_side)
        self._col_b = contract.barrier(col_side)
        self.row_levels = np.asarray(self._row_b.value(T - ys), dtype=float)
        self.col_levels = np.asarray(self._col_b.value(T - ys), dtype=float)
        self._const = bool(getattr(self._row_b, "is_constant", False)) and bool(
            getattr(self._col_b, "is_constant", False)
        )
        self._lag_cache = None
        if self.same:
            self.diag = self.sign * kernel_diag(model, T - ys, self.row_levels)
        else:
            self.diag = np.zeros_like(ys)

    def _q_lags(self):
        # Constant barriers: q depends on the lag only, one vector serves all rows.
        if self._lag_cache is None:
            h = self.grid.h
            lags = h * np.arange(1, self.grid.n + 1)
            self._lag_cache = kernel_q(
                self.model, lags, self.row_levels[0], self.col_levels[0]
            )
        return self._lag_cache

    def row(self, i):
        """Kernel values at (y_i, x_j), j = 0..i, diagonal limit at j = i."""
        ys = self.grid.nodes
        out = np.empty(i + 1)
        out[i] = self.diag[i]
        if i == 0:
            return out
        lags = ys[i] - ys[:i]
        try:
            if self._const:
                q = self._q_lags()[i - 1 :: -1][:i]
            else:
                q = kernel_q(self.model, lags, self.row_levels[i], self.col_levels[:i])
        except (ValueError, FloatingPointError) as exc:
            raise AssemblyFailure(f"kernel evaluation failed on row {i}: {exc}") from exc
        if self.same:
            out[:i] = self.sign * np.sqrt(lags) * q
        else:
            out[:i] = self.sign * q
        return out

    def at(self, y, x):
        """Pointwise kernel value for off-grid arguments (x < y)."""
        T = self.grid.maturity
        lag = y - x
        q = kernel_q(
            self.model,
            lag,
            float(self._row_b.value(T - y)),
            float(self._col_b.value(T - x)),
        )
        return self.sign * (math.sqrt(lag) * q if self.same else q)


# --------------------------------------------------------------------------
# System assembly
# --------------------------------------------------------------------------

@dataclass
class KernelSystem:
    """Assembled lower-triangular system and its ingredients.

    ``dimension`` counts unknowns: n+1 per barrier side (nodes include both
    endpoints).  ``psi`` holds the raw right-hand sides Psi(y_i) per side in
    the y = T - t ordering; ``rhs`` is the vector actually solved (limit rows
    at node 0, singular parts subtracted).
    """

    grid: TimeGrid
    sides: tuple
    weights: np.ndarray
    rhs: np.ndarray
    psi: dict
    singular: dict
    model: object = None
    contract: object = None

    @property
    def dimension(self):
        return self.weights.shape[0]

    @property
    def diagonal(self):
        return np.diag(self.weights)


def _psi_y(model, contract, grid, side, valuator=None):
    v = valuator or EuropeanValuator(model, contract)
    psi_t = v.psi_profile(grid, side)
    return psi_t[::-1].copy()  # index i corresponds to y_i = T - t_{n-i}


def _singular_rhs_same(kern, i, nodes):
    """int_0^{y_i} k(y_i, x) / sqrt(x (y_i - x)) dx by a split product rule."""
    y = nodes[i]
    if i == 1:
        return math.pi * kern.at(y, 0.5 * y)
    m = i // 2
    row = kern.row(i)
    left = sqrt_weights_left(nodes[: m + 1], 0.0)
    right = sqrt_weights_right(nodes[m : i + 1], y)
    lag_left = np.sqrt(y - nodes[: m + 1])
    val = float(left @ (row[: m + 1] / lag_left))
    val += float(right @ (row[m : i + 1] / np.sqrt(nodes[m : i + 1])))
    return val


def _singular_rhs_cross(kern, i, nodes):
    """int_0^{y_i} C(y_i, x) / sqrt(x) dx for the smooth cross kernel."""
    y = nodes[i]
    if i == 1:
        # single panel; C vanishes at x = y, interpolate linearly from 0
        w = sqrt_weights_left(nodes[:2], 0.0)
        return float(w[0] * kern.row(1)[0])
    w = sqrt_weights_left(nodes[: i + 1], 0.0)
    return float(w @ kern.row(i))


def assemble_single(model, contract, grid, which, valuator=None):
    """Assemble the product-trapezoidal system for one barrier."""
    contract.barrier(which)
    nodes = grid.nodes
    n = grid.n
    kern = _SideKernel(model, contract, grid, which, which)
    psi = _psi_y(model, contract, grid, which, valuator)

    k00 = kern.diag[0]
    if abs(k00) < _DIAG_FLOOR:
        raise SingularDiagonal("kernel diagonal vanishes at expiry")
    a_coeff = psi[0] / (math.pi * k00)

    W = np.zeros((n + 1, n + 1))
    rhs = np.zeros(n + 1)
    rhs_reg = np.empty(n + 1)
    rhs_reg[0] = 0.0
    for i in range(1, n + 1):
        row = kern.row(i)
        W[i, : i + 1] = sqrt_weights_right(nodes[: i + 1], nodes[i]) * row
        rhs_reg[i] = psi[i]
        if a_coeff != 0.0:
            rhs_reg[i] -= a_coeff * _singular_rhs_same(kern, i, nodes)
        rhs[i] = rhs_reg[i]
    # Limit row: rhs(y)/(2 sqrt(y)) -> k(0,0) f(0), Richardson over y_1, y_2.
    W[0, 0] = k00
    rhs[0] = rhs_reg[1] / math.sqrt(nodes[1]) - rhs_reg[2] / (2.0 * math.sqrt(nodes[2]))

    return KernelSystem(
        grid=grid,
        sides=(which,),
        weights=W,
        rhs=rhs,
        psi={which: psi},
        singular={which: a_coeff},
        model=model,
        contract=contract,
    )


def assemble_double(model, contract, grid, valuator=None):
    """Assemble the interleaved 2(n+1) system for both barriers."""
    if contract.lower is None or contract.upper is None:
        raise ValueError("assemble_double requires both barriers")
    nodes = grid.nodes
    n = grid.n
    kern_uu = _SideKernel(model, contract, grid, "upper", "upper")
    kern_ul = _SideKernel(model, contract, grid, "upper", "lower")
    kern_lu = _SideKernel(model, contract, grid, "lower", "upper")
    kern_ll = _SideKernel(model, contract, grid, "lower", "lower")
    v = valuator or EuropeanValuator(model, contract)
    psi_u = _psi_y(model, contract, grid, "upper", v)
    psi_l = _psi_y(model, contract, grid, "lower", v)

    k00_u, k00_l = kern_uu.diag[0], kern_ll.diag[0]
    if min(abs(k00_u), abs(k00_l)) < _DIAG_FLOOR:
        raise SingularDiagonal("kernel diagonal vanishes at expiry")
    a_u = psi_u[0] / (math.pi * k00_u)
    a_l = psi_l[0] / (math.pi * k00_l)

    N = 2 * (n + 1)
    W = np.zeros((N, N))
    rhs = np.zeros(N)
    rhs_reg_u = np.zeros(n + 1)
    rhs_reg_l = np.zeros(n + 1)
    for i in range(1, n + 1):
        wsing = sqrt_weights_right(nodes[: i + 1], nodes[i])
        wtrap = _trapezoid_weights(nodes[: i + 1])
        cols = np.arange(i + 1)
        W[2 * i, 2 * cols] = wsing * kern_uu.row(i)
        W[2 * i, 2 * cols + 1] = wtrap * kern_ul.row(i)
        W[2 * i + 1, 2 * cols] = wtrap * kern_lu.row(i)
        W[2 * i + 1, 2 * cols + 1] = wsing * kern_ll.row(i)
        rhs_reg_u[i] = psi_u[i]
        rhs_reg_l[i] = psi_l[i]
        if a_u != 0.0 or a_l != 0.0:
            rhs_reg_u[i] -= a_u * _singular_rhs_same(kern_uu, i, nodes)
            rhs_reg_u[i] -= a_l * _singular_rhs_cross(kern_ul, i, nodes)
            rhs_reg_l[i] -= a_u * _singular_rhs_cross(kern_lu, i, nodes)
            rhs_reg_l[i] -= a_l * _singular_rhs_same(kern_ll, i, nodes)
        rhs[2 * i] = rhs_reg_u[i]
        rhs[2 * i + 1] = rhs_reg_l[i]
    W[0, 0] = k00_u
    W[1, 1] = k00_l
    sq1, sq2 = math.sqrt(nodes[1]), math.sqrt(nodes[2])
    rhs[0] = rhs_reg_u[1] / sq1 - rhs_reg_u[2] / (2.0 * sq2)
    rhs[1] = rhs_reg_l[1] / sq1 - rhs_reg_l[2] / (2.0 * sq2)

    return KernelSystem(
        grid=grid,
        sides=("upper", "lower"),
        weights=W,
        rhs=rhs,
        psi={"upper": psi_u, "lower": psi_l},
        singular={"upper": a_u, "lower": a_l},
        model=model,
        contract=contract,
    )


# --------------------------------------------------------------------------
# Solvers
# --------------------------------------------------------------------------

def _check_diagonal(sys):
    d = np.abs(sys.diagonal)
    if np.any(d < _DIAG_FLOOR):
        i = int(np.argmin(d))
        raise SingularDiagonal(
            f"diagonal weight {d[i]:.3e} at index {i} below {_DIAG_FLOOR:g}; "
            "the kernel diagonal is degenerate at the barrier"
        )


def _near_expiry_flag(regular_t, a_coeff):
    if a_coeff != 0.0:
        return True
    tail = np.abs(regular_t[-3:])
    return bool(
        tail[1] > _GROWTH_FLAG_RATIO * tail[0] and tail[2] > _GROWTH_FLAG_RATIO * tail[1]
    )


def _sign_diagnostics(profile, sys):
    """Sign property of the solved deltas; violations reported, never clamped."""
    out = {}
    for side in sys.sides:
        scale = max(float(np.max(np.abs(sys.psi[side]))), 1e-300)
        tot = profile.totals(side)[:-1]  # t = T carries the singular part
        if side == "lower":
            worst = float(np.min(tot, initial=0.0))
            out["sign_violation_lower"] = max(0.0, -worst) / scale
        else:
            worst = float(np.max(tot, initial=0.0))
            out["sign_violation_upper"] = max(0.0, worst) / scale
    out["sign_ok"] = all(v <= _SIGN_TOL for k, v in out.items() if k.startswith("sign_violation"))
    return out


def solve_single(sys, compute_residual=False):
    """Forward substitution on a single-barrier system."""
    _check_diagonal(sys)
    g = solve_triangular(sys.weights, sys.rhs, lower=True)
    side = sys.sides[0]
    regular_t = g[::-1].copy()
    a = sys.singular[side]
    profile = DeltaProfile(grid=sys.grid)
    if side == "lower":
        profile.delta_minus = regular_t
        profile.singular_minus = a
        profile.near_expiry_unreliable_minus = _near_expiry_flag(regular_t, a)
    else:
        profile.delta_plus = regular_t
        profile.singular_plus = a
        profile.near_expiry_unreliable_plus = _near_expiry_flag(regular_t, a)
    profile.diagnostics.update(_sign_diagnostics(profile, sys))
    if compute_residual:
        profile.diagnostics.update(
            system_residual(sys.model, sys.contract, profile, sides=sys.sides)
        )
    return profile


def solve_double(sys, compute_residual=True):
    """Forward substitution on the interleaved double-barrier system."""
    _check_diagonal(sys)
    g = solve_triangular(sys.weights, sys.rhs, lower=True)
    f_plus = g[0::2]
    f_minus = g[1::2]
    profile = DeltaProfile(
        grid=sys.grid,
        delta_plus=f_plus[::-1].copy(),
        delta_minus=f_minus[::-1].copy(),
        singular_plus=sys.singular["upper"],
        singular_minus=sys.singular["lower"],
    )
    profile.near_expiry_unreliable_plus = _near_expiry_flag(
        profile.delta_plus, profile.singular_plus
    )
    profile.near_expiry_unreliable_minus = _near_expiry_flag(
        profile.delta_minus, profile.singular_minus
    )
    profile.diagnostics.update(_sign_diagnostics(profile, sys))
    if compute_residual:
        profile.diagnostics.update(
            system_residual(sys.model, sys.contract, profile, sides=sys.sides)
        )
    return profile


def solve(model, contract, grid, valuator=None, compute_residual=False):
    """Assemble and solve for whatever barriers the contract has."""
    if contract.lower is not None and contract.upper is not None:
        return solve_double(
            assemble_double(model, contract, grid, valuator), compute_residual
        )
    which = contract.sides[0]
    return solve_single(
        assemble_single(model, contract, grid, which, valuator), compute_residual
    )


def system_residual(model, contract, profile, sides=None, refine=2, expiry_frac=0.05):
    """Max residual of the continuous system re-integrated at refined resolution.

    The solved profile is interpolated onto a grid ``refine`` times finer and
    plugged back into the product-integration form of the equations; the
    departure from Psi measures the discretisation error.  ``residual`` covers
    every equation; ``residual_interior`` excludes the rows within
    ``expiry_frac`` of expiry, where the delta's sqrt(T - t) cusp caps the
    local order, and decays at h^2 on smooth-regime contracts.
    """
    grid = profile.grid
    fine = TimeGrid(n=refine * grid.n, maturity=grid.maturity)
    if sides is None:
        sides = tuple(s for s in ("upper", "lower") if profile.has_side(s))
    if len(sides) == 2:
        fine_sys = assemble_double(model, contract, fine)
    else:
        fine_sys = assemble_single(model, contract, fine, sides[0])
    nodes = fine.nodes
    interior = nodes >= expiry_frac * grid.maturity  # rows indexed by y = T - t
    interp = {}
    for side in sides:
        reg, _ = profile._parts(side)
        # regular part in y-ordering on the fine nodes
        interp[side] = np.interp(nodes, grid.nodes, reg[::-1])
    out = {}
    W = fine_sys.weights
    if len(sides) == 2:
        g = np.empty(2 * (fine.n + 1))
        g[0::2] = interp["upper"]
        g[1::2] = interp["lower"]
        lhs = W @ g
        res = {
            "upper": np.abs(lhs[0::2] - fine_sys.rhs[0::2])[1:],
            "lower": np.abs(lhs[1::2] - fine_sys.rhs[1::2])[1:],
        }
        for side in sides:
            out[f"residual_{side}"] = float(np.max(res[side]))
        out["residual"] = max(out.values())
        out["residual_interior"] = max(
            float(np.max(res[side][interior[1:]])) for side in sides
        )
    else:
        side = sides[0]
        lhs = W @ interp[side]
        res = np.abs(lhs - fine_sys.rhs)[1:]
        out[f"residual_{side}"] = float(np.max(res))
        out["residual"] = out[f"residual_{side}"]
        out["residual_interior"] = float(np.max(res[interior[1:]]))
    return out


# --------------------------------------------------------------------------
# Monotone smooth approximation of rough payoffs
# --------------------------------------------------------------------------

def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


class SmoothedPayoff:
    """C^2 minorant of a payoff, vanishing at the corridor endpoints.

    Built as window(x) * floor(payoff(x) - 1/m) where the floor replaces
    max(., 0) by a C^2 ramp of width 1/(m(m+1)) and the windows cut smoothly
    to zero on shrinking neighbourhoods of the corridor endpoints.  The
    family increases pointwise in m and converges to the corridor-truncated
    payoff away from its discontinuities.
    """

    def __init__(self, base, level, corridor):
        lo, hi = corridor
        if not lo >= 0 or not (math.isinf(hi) or hi > lo):
            raise ValueError(f"invalid corridor {corridor!r}")
        if int(level) != level or level < 1:
            raise ValueError(f"level must be an integer >= 1, got {level!r}")
        self.base = base
        self.level = int(level)
        self.lo = float(lo)
        self.hi = float(hi)
        width = (hi - lo) if math.isfinite(hi) else lo
        self.window_width = width / (8.0 * self.level)
        self.shift = 1.0 / self.level
        self.ramp = 1.0 / (self.level * (self.level + 1.0))

    def _window(self, x):
        d = x - self.lo
        if math.isfinite(self.hi):
            d = np.minimum(d, self.hi - x)
        return _smoothstep(d / self.window_width)

    def _floor(self, v):
        out = np.where(v <= 0.0, 0.0, v * _smoothstep(v / self.ramp))
        return np.where(v >= self.ramp, v, out)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = np.asarray(payoff_eval(self.base, x), dtype=float) - self.shift
        out = self._window(x) * self._floor(v)
        return out if out.ndim else float(out)

    def breakpoints(self):
        pts = [self.lo + self.window_width]
        if math.isfinite(self.hi):
            pts.append(self.hi - self.window_width)
        pts.extend(p for p in payoff_breakpoints(self.base) if self.lo < p < self.hi)
        return sorted(pts)

    def smooth_on(self, lo, hi):
        tol = 1e-9 * max(1.0, abs(lo))
        hi_ok = (math.isinf(hi) and math.isinf(self.hi)) or abs(hi - self.hi) <= tol
        return abs(lo - self.lo) <= tol and hi_ok


def smooth_payoff(payoff, level, corridor):
    """Monotone C^2 approximant of ``payoff`` on the given terminal corridor."""
    if isinstance(payoff, SmoothedPayoff):
        payoff = payoff.base
    return SmoothedPayoff(payoff, level, corridor)
