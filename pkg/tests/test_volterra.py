import math

import numpy as np
import pytest
from scipy.linalg import solve_triangular

from barrierdelta import (
    BarrierContract,
    Call,
    ConstantBarrier,
    DoubleNoTouch,
    GBM,
    Put,
    Regime,
    SingularDiagonal,
    SmoothBump,
    TimeGrid,
    assemble_double,
    assemble_single,
    smooth_payoff,
    solve,
    solve_double,
    solve_single,
    validate,
)
from barrierdelta.contracts import payoff_eval
from barrierdelta.special import norm_cdf
from barrierdelta.volterra import (
    DeltaProfile,
    KernelSystem,
    SmoothedPayoff,
    sqrt_weights_left,
    sqrt_weights_right,
    system_residual,
)

from conftest import bs_call, bs_put

MODEL = GBM(sigma=0.2, mu=0.0)


def model_free_contract():
    return BarrierContract(payoff=Call(90.0), maturity=1.0, lower=ConstantBarrier(90.0))


def bump_contract(maturity=0.5):
    return BarrierContract(
        payoff=SmoothBump(90.0, 110.0, 1.0),
        maturity=maturity,
        lower=ConstantBarrier(90.0),
        upper=ConstantBarrier(110.0),
    )


# --------------------------------------------------------------------------
# product weights
# --------------------------------------------------------------------------

def test_weights_integrate_sqrt_moments_exactly(rng):
    # int x^m / sqrt(y - x) over [0, y], m in {0, 1}
    xs = np.sort(rng.uniform(0.0, 1.0, size=9))
    xs[0], xs[-1] = 0.0, 1.0
    y = 1.0
    w = sqrt_weights_right(xs, y)
    assert w @ np.ones_like(xs) == pytest.approx(2.0 * math.sqrt(y), rel=1e-14)
    assert w @ xs == pytest.approx(4.0 / 3.0, rel=1e-13)  # int x/sqrt(1-x) = 4/3
    wl = sqrt_weights_left(xs, 0.0)
    assert wl @ np.ones_like(xs) == pytest.approx(2.0, rel=1e-14)
    assert wl @ xs == pytest.approx(2.0 / 3.0, rel=1e-13)  # int x/sqrt(x) = 2/3


def test_constant_kernel_row_sum():
    grid = TimeGrid(n=8, maturity=1.0)
    c = 0.7
    for i in range(1, 9):
        nodes = grid.nodes[: i + 1]
        w = sqrt_weights_right(nodes, nodes[-1])
        assert c * np.sum(w) == pytest.approx(2.0 * c * math.sqrt(nodes[-1]), rel=1e-14)


def test_constant_kernel_exact_recovery_n2():
    # k = c, Psi(y) = 2 c sqrt(y): the product rule recovers f = 1 exactly
    grid = TimeGrid(n=2, maturity=1.0)
    nodes = grid.nodes
    c = 1.3
    W = np.zeros((3, 3))
    rhs = np.zeros(3)
    for i in (1, 2):
        W[i, : i + 1] = sqrt_weights_right(nodes[: i + 1], nodes[i]) * c
        rhs[i] = 2.0 * c * math.sqrt(nodes[i])
    W[0, 0] = c
    rhs[0] = rhs[1] / math.sqrt(nodes[1]) - rhs[2] / (2.0 * math.sqrt(nodes[2]))
    f = solve_triangular(W, rhs, lower=True)
    np.testing.assert_allclose(f, 1.0, rtol=1e-14)


# --------------------------------------------------------------------------
# single-barrier assembly and solve
# --------------------------------------------------------------------------

def test_assemble_single_rhs_is_psi_profile():
    contract = model_free_contract()
    grid = TimeGrid(n=16, maturity=1.0)
    sys = assemble_single(MODEL, contract, grid, "lower")
    # psi in reversed time: entry i is the value at y_i = T - t
    for i, y in enumerate(grid.nodes):
        assert sys.psi["lower"][i] == pytest.approx(bs_call(90.0, 90.0, 0.2, y), rel=1e-12, abs=1e-12)
    assert sys.dimension == 17
    assert np.all(np.triu(sys.weights, k=1) == 0.0)


def test_solve_single_model_free_delta_is_one():
    contract = model_free_contract()
    profile = solve_single(assemble_single(MODEL, contract, TimeGrid(256, 1.0), "lower"))
    totals = profile.totals("lower")
    assert np.max(np.abs(totals - 1.0)) < 1e-3
    assert profile.singular_minus == 0.0
    assert not profile.near_expiry_unreliable_minus


def test_solve_single_zero_psi_gives_zero_profile():
    contract = BarrierContract(
        payoff=SmoothBump(95.0, 105.0, 0.0), maturity=1.0, lower=ConstantBarrier(90.0)
    )
    profile = solve_single(assemble_single(MODEL, contract, TimeGrid(32, 1.0), "lower"))
    np.testing.assert_allclose(profile.totals("lower"), 0.0, atol=1e-15)


def test_solve_single_initial_delta_matches_closed_form_derivative():
    # down-and-out call B=90, K=110, mu=0: price C(S,K) - (K/B) P(S, B^2/K);
    # its spot derivative at S = B is the t = 0 delta at the barrier
    contract = BarrierContract(payoff=Call(110.0), maturity=1.0, lower=ConstantBarrier(90.0))
    profile = solve_single(assemble_single(MODEL, contract, TimeGrid(512, 1.0), "lower"))
    sig, T, B, K = 0.2, 1.0, 90.0, 110.0
    d1_call = math.log(B / K) / (sig * math.sqrt(T)) + 0.5 * sig * math.sqrt(T)
    k_img = B * B / K
    d1_put = math.log(B / k_img) / (sig * math.sqrt(T)) + 0.5 * sig * math.sqrt(T)
    ref = norm_cdf(d1_call) - (K / B) * (norm_cdf(d1_put) - 1.0)
    assert profile.delta_at(0.0, "lower") == pytest.approx(ref, rel=1e-4)


def test_upper_barrier_put_has_negative_delta():
    contract = BarrierContract(payoff=Put(110.0), maturity=1.0, upper=ConstantBarrier(110.0))
    profile = solve_single(assemble_single(GBM(0.2, 0.0), contract, TimeGrid(128, 1.0), "upper"))
    totals = profile.totals("upper")
    assert np.all(totals <= 1e-10)
    assert profile.diagnostics["sign_ok"]


def test_singular_diagonal_detected():
    grid = TimeGrid(n=4, maturity=1.0)
    W = np.eye(5)
    W[2, 2] = 0.0
    sys = KernelSystem(
        grid=grid, sides=("lower",), weights=W, rhs=np.ones(5),
        psi={"lower": np.ones(5)}, singular={"lower": 0.0},
    )
    with pytest.raises(SingularDiagonal):
        solve_single(sys)


# --------------------------------------------------------------------------
# double-barrier assembly and solve
# --------------------------------------------------------------------------

def test_cross_block_vanishes_at_zero_lag():
    contract = bump_contract()
    sys = assemble_double(MODEL, contract, TimeGrid(16, 0.5))
    n = 16
    for i in range(1, n + 1):
        assert sys.weights[2 * i, 2 * i + 1] == 0.0  # upper row, lower unknown, same node
        assert sys.weights[2 * i + 1, 2 * i] == 0.0
    assert np.all(np.triu(sys.weights, k=1) == 0.0)


def test_double_reduces_to_single_when_upper_far():
    contract_far = BarrierContract(
        payoff=Call(110.0), maturity=1.0,
        lower=ConstantBarrier(90.0), upper=ConstantBarrier(1000.0),
    )
    contract_single = BarrierContract(payoff=Call(110.0), maturity=1.0, lower=ConstantBarrier(90.0))
    grid = TimeGrid(256, 1.0)
    prof_d = solve_double(assemble_double(MODEL, contract_far, grid), compute_residual=False)
    prof_s = solve_single(assemble_single(MODEL, contract_single, grid, "lower"))
    diff = np.abs(prof_d.totals("lower") - prof_s.totals("lower"))
    assert np.max(diff) < 1e-4


def test_zero_payoff_double_gives_zero_profiles():
    contract = BarrierContract(
        payoff=SmoothBump(90.0, 110.0, 0.0), maturity=0.5,
        lower=ConstantBarrier(90.0), upper=ConstantBarrier(110.0),
    )
    prof = solve_double(assemble_double(MODEL, contract, TimeGrid(32, 0.5)), compute_residual=False)
    np.testing.assert_allclose(prof.totals("upper"), 0.0, atol=1e-15)
    np.testing.assert_allclose(prof.totals("lower"), 0.0, atol=1e-15)


class _WeightedSymmetricPayoff:
    """phi(S) = sqrt(S/G) g(log(S/G)) with even quartic g: invariant under the
    GBM mu=0 reflection S -> G^2/S up to the martingale weight S/G."""

    def __init__(self, b_minus, b_plus):
        self.g_mean = math.sqrt(b_minus * b_plus)
        self.half_logwidth = 0.5 * math.log(b_plus / b_minus)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        u = np.log(x / self.g_mean)
        w = np.where(
            np.abs(u) < self.half_logwidth, (1.0 - (u / self.half_logwidth) ** 2) ** 2, 0.0
        )
        out = np.sqrt(x / self.g_mean) * w
        return out if out.ndim else float(out)

    def smooth_on(self, lo, hi):
        return True


def test_double_log_reflection_symmetry():
    # under S -> B_- B_+ / S the mu = 0 value function maps to (S/G) Z(G^2/S),
    # forcing Delta_+(t) = -sqrt(B_-/B_+) Delta_-(t) for the weighted-symmetric
    # payoff; the discretisation preserves the identity to machine precision
    contract = BarrierContract(
        payoff=_WeightedSymmetricPayoff(90.0, 110.0), maturity=1.0,
        lower=ConstantBarrier(90.0), upper=ConstantBarrier(110.0),
    )
    assert validate(contract).regime is Regime.SMOOTH
    prof = solve_double(assemble_double(MODEL, contract, TimeGrid(128, 1.0)), compute_residual=False)
    ratio = math.sqrt(90.0 / 110.0)
    resid = prof.delta_plus + ratio * prof.delta_minus
    scale = np.max(np.abs(prof.delta_minus))
    assert np.max(np.abs(resid)) < 1e-12 * max(scale, 1.0)


def test_double_smooth_halving_h_second_order_interior():
    model = GBM(sigma=0.15, mu=0.0)
    contract = bump_contract(maturity=0.5)
    profs = {n: solve(model, contract, TimeGrid(n, 0.5)) for n in (128, 256, 512)}
    ts = TimeGrid(256, 0.5).nodes
    keep = ts <= 0.9 * 0.5

    def change(n):
        a, b = profs[n], profs[2 * n]
        worst = 0.0
        for side in ("upper", "lower"):
            ts_n = TimeGrid(n, 0.5).nodes
            sel = ts_n <= 0.9 * 0.5
            av = a.totals(side)[sel]
            bv = np.array([b.delta_at(t, side) for t in ts_n[sel]])
            worst = max(worst, float(np.max(np.abs(av - bv))))
        return worst

    factor = change(128) / change(256)
    assert 3.0 <= factor <= 5.5  # order two away from the expiry cusp


def test_sign_property_on_smooth_contract():
    contract = bump_contract()
    prof = solve_double(assemble_double(MODEL, contract, TimeGrid(128, 0.5)), compute_residual=False)
    assert prof.diagnostics["sign_ok"]
    assert prof.diagnostics["sign_violation_lower"] <= 1e-6
    assert prof.diagnostics["sign_violation_upper"] <= 1e-6
    assert np.all(prof.totals("lower")[:-1] >= -1e-9)
    assert np.all(prof.totals("upper")[:-1] <= 1e-9)


def test_residual_second_order_away_from_expiry():
    model = GBM(sigma=0.15, mu=0.0)
    contract = bump_contract(maturity=0.5)
    full, interior = {}, {}
    for n in (64, 128, 256):
        prof = solve(model, contract, TimeGrid(n, 0.5), compute_residual=True)
        full[n] = prof.diagnostics["residual"]
        interior[n] = prof.diagnostics["residual_interior"]
    # every residual shrinks with h; away from the expiry cusp the decay is
    # at least second order with a stable constant C = res / h^2
    assert full[64] > full[128] > full[256]
    assert interior[64] / interior[256] > 16.0
    # the bound residual <= C h^2 holds with the C fitted at the coarsest grid
    constants = [interior[n] * (n / 0.5) ** 2 for n in (64, 128, 256)]
    assert constants[1] <= 1.1 * constants[0]
    assert constants[2] <= 1.1 * constants[0]


def test_dnt_price_within_mc_error():
    from barrierdelta import oracle, pricing

    contract = BarrierContract(
        payoff=DoubleNoTouch(), maturity=0.5,
        lower=ConstantBarrier(90.0), upper=ConstantBarrier(110.0),
    )
    prof = solve(MODEL, contract, TimeGrid(256, 0.5))
    engine = pricing.price(MODEL, contract, 100.0, prof).price
    est, se = oracle.mc_price(
        MODEL, contract, 100.0, oracle.McConfig(paths=200_000, steps=64, seed=11)
    )
    assert abs(engine - est) < 3.0 * se


def test_near_expiry_flags():
    dnt = BarrierContract(
        payoff=DoubleNoTouch(), maturity=0.5,
        lower=ConstantBarrier(90.0), upper=ConstantBarrier(110.0),
    )
    prof = solve(MODEL, dnt, TimeGrid(64, 0.5))
    assert prof.near_expiry_unreliable_plus and prof.near_expiry_unreliable_minus
    assert prof.singular_minus > 0.0 > prof.singular_plus

    free = solve(MODEL, model_free_contract(), TimeGrid(64, 1.0))
    assert not free.near_expiry_unreliable_minus
    assert free.singular_minus == 0.0


def test_solve_dispatches_on_barriers():
    prof = solve(MODEL, model_free_contract(), TimeGrid(32, 1.0))
    assert prof.has_side("lower") and not prof.has_side("upper")
    prof2 = solve(MODEL, bump_contract(), TimeGrid(32, 0.5))
    assert prof2.has_side("lower") and prof2.has_side("upper")


def test_delta_profile_interpolation():
    prof = solve(MODEL, model_free_contract(), TimeGrid(64, 1.0))
    nodes = prof.grid.nodes
    mid = 0.5 * (nodes[10] + nodes[11])
    val = prof.delta_at(mid, "lower")
    lo, hi = prof.delta_minus[10], prof.delta_minus[11]
    assert min(lo, hi) - 1e-15 <= val <= max(lo, hi) + 1e-15


# --------------------------------------------------------------------------
# smooth payoff approximation
# --------------------------------------------------------------------------

def test_smooth_payoff_dnt_plateau():
    approx = smooth_payoff(DoubleNoTouch(), 10, (90.0, 110.0))
    xs = np.linspace(90.0, 110.0, 501)
    vals = payoff_eval(approx, xs)
    assert np.all(vals >= 0.0) and np.all(vals <= 1.0)
    assert payoff_eval(approx, 100.0) == pytest.approx(1.0 - 1.0 / 10.0, rel=1e-12)
    assert payoff_eval(approx, 90.0) == 0.0
    assert payoff_eval(approx, 110.0) == 0.0


def test_smooth_payoff_monotone_in_level(rng):
    base = Call(100.0)
    xs = rng.uniform(90.0, 110.0, size=1000)
    prev = payoff_eval(smooth_payoff(base, 1, (90.0, 110.0)), xs)
    for m in (2, 3, 5, 8, 13):
        cur = payoff_eval(smooth_payoff(base, m, (90.0, 110.0)), xs)
        assert np.all(cur >= prev - 1e-12)
        prev = cur


def test_smooth_payoff_minorizes_base(rng):
    base = DoubleNoTouch()
    xs = rng.uniform(90.0, 110.0, size=1000)
    for m in (1, 4, 16):
        vals = payoff_eval(smooth_payoff(base, m, (90.0, 110.0)), xs)
        assert np.all(vals <= payoff_eval(base, xs) + 1e-12)


def test_smooth_payoff_keeps_smooth_bump():
    base = SmoothBump(90.0, 110.0, 1.0)
    m = 20
    approx = smooth_payoff(base, m, (90.0, 110.0))
    xs = np.linspace(90.0, 110.0, 2001)
    gap = np.max(np.abs(payoff_eval(approx, xs) - payoff_eval(base, xs)))
    assert gap <= 1.0 / m + 2.0 / m**2 + 1e-9


def test_smooth_payoff_classifies_smooth():
    approx = smooth_payoff(DoubleNoTouch(), 8, (90.0, 110.0))
    contract = BarrierContract(
        payoff=approx, maturity=0.5, lower=ConstantBarrier(90.0), upper=ConstantBarrier(110.0)
    )
    assert validate(contract).regime is Regime.SMOOTH
    assert isinstance(approx, SmoothedPayoff)


def test_smoothed_payoff_second_derivative_finite(rng):
    approx = smooth_payoff(Call(100.0), 5, (90.0, 110.0))
    xs = rng.uniform(90.5, 109.5, size=500)
    h = 1e-5
    d2 = (approx.value(xs + h) - 2 * approx.value(xs) + approx.value(xs - h)) / h**2
    assert np.all(np.isfinite(d2))
