import math

import numpy as np
import pytest
from scipy.integrate import quad

from barrierdelta import (
    BarrierContract,
    Call,
    CEV,
    ConstantBarrier,
    DoubleNoTouch,
    ExponentialBarrier,
    GBM,
    Put,
    SmoothBump,
    TimeGrid,
    UnsupportedConfiguration,
    solve,
)
from barrierdelta import laplace, pricing
from barrierdelta.laplace import (
    ConvolutionKernel,
    _convolve_rows,
    _down_call_dpsi,
    _PsiSide,
    _up_put_dpsi,
    auxiliary_h,
    laplace_transform_kernel,
    resolvent_table,
    solve_constant,
    solve_constant_double,
    solve_constant_single,
    talbot_inverse,
    transform_entry,
)

MODEL = GBM(sigma=0.2, mu=0.0)


def dnt_contract(T=0.5):
    return BarrierContract(
        payoff=DoubleNoTouch(), maturity=T,
        lower=ConstantBarrier(90.0), upper=ConstantBarrier(110.0),
    )


# --------------------------------------------------------------------------
# scalar kernel and resolvent
# --------------------------------------------------------------------------

def test_alpha_from_model():
    model = GBM(sigma=0.2, mu=0.05)
    expected = (0.05 - 0.02) ** 2 / (2 * 0.04)
    assert ConvolutionKernel.from_model(model).alpha == pytest.approx(expected, rel=1e-14)


def test_auxiliary_h_zero_alpha():
    for t in (0.1, 0.7):
        assert auxiliary_h(0.0, t) == pytest.approx(1.0 / math.sqrt(math.pi * t), rel=1e-14)


def test_auxiliary_h_large_time_limit():
    alpha = 0.8
    assert auxiliary_h(alpha, 1e6) == pytest.approx(math.sqrt(alpha), rel=1e-9)


@pytest.mark.parametrize("alpha", [0.005, 0.3])
def test_scalar_resolvent_identity(alpha):
    # int_0^y h(x) q(y-x) dx = 1; both factors are 1/sqrt singular, so each
    # half attaches its own endpoint singularity to the quadrature weight and
    # keeps the other factor in smooth sqrt-scaled form
    def h_tilde(s):  # sqrt(s) h(s)
        return math.exp(-alpha * s) / math.sqrt(math.pi) + math.sqrt(alpha * s) * math.erf(
            math.sqrt(alpha * s)
        )

    def q_tilde(u):  # sqrt(u) q(u)
        return math.exp(-alpha * u) / math.sqrt(math.pi)

    for y in (0.25, 0.5, 1.0):
        f1, _ = quad(
            lambda s: h_tilde(s) * q_tilde(y - s) / math.sqrt(y - s),
            0.0, y / 2, weight="alg", wvar=(-0.5, 0.0),
        )
        f2, _ = quad(
            lambda s: h_tilde(s) * q_tilde(y - s) / math.sqrt(s),
            y / 2, y, weight="alg", wvar=(0.0, -0.5),
        )
        assert f1 + f2 == pytest.approx(1.0, abs=1e-6)


def test_scalar_transform_closed_form():
    # L(q)(s) = 1 / sqrt(s + alpha)
    alpha = 0.12
    kern = ConvolutionKernel(alpha)
    for s in (0.5, 2.0, 10.0):
        val, _ = quad(lambda v: 2.0 * math.exp(-(s + alpha) * v * v) / math.sqrt(math.pi), 0.0, 20.0)
        assert val == pytest.approx(1.0 / math.sqrt(s + alpha), rel=1e-10)
        num, _ = quad(lambda t: math.exp(-s * t) * kern.q(t), 0.0, np.inf, limit=200)
        assert num == pytest.approx(1.0 / math.sqrt(s + alpha), rel=1e-8)


# --------------------------------------------------------------------------
# kernel transforms
# --------------------------------------------------------------------------

@pytest.mark.parametrize("entry", [(1, 1), (1, 2), (2, 1), (2, 2)])
@pytest.mark.parametrize("s", [0.5, 2.0, 10.0])
def test_transform_quadrature_matches_closed_form(entry, s):
    model = GBM(sigma=0.2, mu=0.03)
    contract = dnt_contract()
    num = laplace_transform_kernel(model, contract, entry, s)
    ref = complex(transform_entry(model, contract, entry, s)).real
    assert num == pytest.approx(ref, rel=1e-10)


def test_transforms_decay_at_large_s():
    model = GBM(sigma=0.2, mu=0.0)
    contract = dnt_contract()
    prev_diag, prev_ratio = None, None
    for s in (1e2, 1e3, 1e4):
        diag = abs(laplace_transform_kernel(model, contract, (1, 1), s))
        off = abs(laplace_transform_kernel(model, contract, (1, 2), s))
        if prev_diag is not None:
            assert diag < prev_diag
        ratio = off / diag
        if prev_ratio is not None:
            assert ratio < prev_ratio  # off-diagonal decays faster
        prev_diag, prev_ratio = diag, ratio


# --------------------------------------------------------------------------
# Talbot inversion
# --------------------------------------------------------------------------

def test_talbot_known_pairs():
    for t in (0.05, 0.3, 1.0):
        assert talbot_inverse(lambda p: 1.0 / np.sqrt(p), t) == pytest.approx(
            1.0 / math.sqrt(math.pi * t), rel=1e-9
        )
        assert talbot_inverse(lambda p: 1.0 / (p + 2.0), t) == pytest.approx(
            math.exp(-2.0 * t), rel=1e-9
        )


def test_talbot_recovers_paper_resolvent():
    # L(h)(s) = sqrt(s + alpha)/s inverts to q(t) + sqrt(alpha) erf(sqrt(alpha t))
    alpha = 0.2
    for t in (0.1, 0.5, 1.5):
        val = talbot_inverse(lambda p: np.sqrt(p + alpha) / p, t)
        assert val == pytest.approx(auxiliary_h(alpha, t), rel=1e-8)


def test_talbot_degree_agreement():
    # 24 and 32 nodes both sit in the flat double-precision accuracy zone
    for t in (0.1, 1.0):
        a = talbot_inverse(lambda p: 1.0 / np.sqrt(p + 0.3), t, degree=32)
        b = talbot_inverse(lambda p: 1.0 / np.sqrt(p + 0.3), t, degree=24)
        assert a == pytest.approx(b, rel=1e-9)


# --------------------------------------------------------------------------
# resolvent table and the matrix identity
# --------------------------------------------------------------------------

def test_resolvent_matrix_identity():
    # (Q * h)(y) must reproduce the identity matrix times the unit step
    model = MODEL
    contract = dnt_contract(T=0.5)
    table = resolvent_table(model, contract, 0.5)
    nu = model.mu - 0.5 * model.sigma**2
    alpha = nu * nu / (2 * model.sigma**2)
    b = {1: 110.0, 2: 90.0}
    sign = {(1, 1): -1.0, (1, 2): 1.0, (2, 1): -1.0, (2, 2): 1.0}

    def q_tilde(i, j, u):
        # sqrt(u) Q_ij(u), smooth in sqrt(u), with the zero-lag limits
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        pos = u > 0
        if np.any(pos):
            from barrierdelta.models import kernel_q

            out[pos] = sign[(i, j)] * np.sqrt(u[pos]) * kernel_q(model, u[pos], b[i], b[j])
        if np.any(~pos):
            if i == j:
                out[~pos] = sign[(i, j)] * b[i] * model.sigma / math.sqrt(2 * math.pi)
        return out

    ys = np.array([0.05, 0.2, 0.45])
    for i in (1, 2):
        for k in (1, 2):
            acc = np.zeros_like(ys)
            for j in (1, 2):
                acc += _convolve_rows(
                    ys,
                    lambda s, jj=j, kk=k: table.h_tilde((jj, kk), s),
                    lambda u, ii=i, jj=j: q_tilde(ii, jj, u),
                )
            target = 1.0 if i == k else 0.0
            assert np.max(np.abs(acc - target)) < 1e-4


def test_resolvent_diag_limits():
    table = resolvent_table(MODEL, dnt_contract(), 0.5)
    assert table.h_tilde_zero((1, 1)) == pytest.approx(
        -math.sqrt(2.0) / (110.0 * 0.2 * math.sqrt(math.pi)), rel=1e-12
    )
    assert table.h_tilde_zero((2, 2)) == pytest.approx(
        math.sqrt(2.0) / (90.0 * 0.2 * math.sqrt(math.pi)), rel=1e-12
    )
    assert table.h_tilde_zero((1, 2)) == 0.0
    assert table.h_tilde_zero((2, 1)) == 0.0


# --------------------------------------------------------------------------
# Psi derivative helpers
# --------------------------------------------------------------------------

def test_down_call_dpsi_matches_fd():
    model = GBM(sigma=0.2, mu=0.03)
    B, K = 90.0, 110.0
    dpsi, a = _down_call_dpsi(model, B, K)
    assert a == 0.0
    scale = 2.0 * math.sqrt(2.0) / (B * model.sigma)
    from conftest import bs_call

    for y in (0.1, 0.4, 0.9):
        h = 1e-6
        fd = scale * (bs_call(B, K, 0.2, y + h, 0.03) - bs_call(B, K, 0.2, y - h, 0.03)) / (2 * h)
        assert dpsi(y) == pytest.approx(fd, rel=1e-6)


def test_up_put_dpsi_matches_fd():
    model = GBM(sigma=0.25, mu=-0.01)
    B, K = 110.0, 100.0
    dpsi, a = _up_put_dpsi(model, B, K)
    assert a == 0.0
    scale = 2.0 * math.sqrt(2.0) / (B * model.sigma)
    from conftest import bs_put

    for y in (0.1, 0.4, 0.9):
        h = 1e-6
        fd = -scale * (bs_put(B, K, 0.25, y + h, -0.01) - bs_put(B, K, 0.25, y - h, -0.01)) / (2 * h)
        assert dpsi(y) == pytest.approx(fd, rel=1e-6)


def test_model_free_singular_coefficient():
    _, a = _down_call_dpsi(GBM(sigma=0.2, mu=0.0), 90.0, 90.0)
    assert a == pytest.approx(1.0 / math.sqrt(math.pi), rel=1e-14)


def test_psi_side_numeric_a_matches_analytic():
    # DNT from the upper barrier: Psi(y) = 2 phi(T-y, B+) has
    # a = -nu / (sigma sqrt(2 pi)) with nu = mu - sigma^2/2
    model = GBM(sigma=0.2, mu=0.0)
    contract = dnt_contract(T=0.5)
    from barrierdelta.european import EuropeanValuator

    v = EuropeanValuator(model, contract)
    side = _PsiSide(lambda y: 2.0 * v.value(max(0.5 - y, 0.0), 110.0), 0.5)
    nu = model.mu - 0.5 * model.sigma**2
    assert side.psi0 == pytest.approx(1.0, rel=1e-12)
    assert side.a == pytest.approx(-nu / (model.sigma * math.sqrt(2 * math.pi)), rel=1e-4)


# --------------------------------------------------------------------------
# constant-barrier solvers
# --------------------------------------------------------------------------

def test_single_model_free_delta_one():
    contract = BarrierContract(payoff=Call(90.0), maturity=1.0, lower=ConstantBarrier(90.0))
    prof = solve_constant_single(MODEL, contract, TimeGrid(512, 1.0))
    assert np.max(np.abs(prof.totals("lower") - 1.0)) < 1e-4


def test_single_cross_validates_volterra():
    contract = BarrierContract(payoff=Call(110.0), maturity=1.0, lower=ConstantBarrier(90.0))
    grid = TimeGrid(512, 1.0)
    lp = solve_constant_single(MODEL, contract, grid)
    vp = solve(MODEL, contract, grid)
    assert np.max(np.abs(lp.totals("lower") - vp.totals("lower"))) < 1e-3
    pl = pricing.price(MODEL, contract, 100.0, lp).price
    pv = pricing.price(MODEL, contract, 100.0, vp).price
    assert abs(pl - pv) / abs(pv) < 1e-3


def test_single_rejects_unsupported():
    cev = CEV(sigma0=2.0, rho=0.5, mu=0.0)
    contract = BarrierContract(payoff=Call(110.0), maturity=1.0, lower=ConstantBarrier(90.0))
    with pytest.raises(UnsupportedConfiguration):
        solve_constant_single(cev, contract, TimeGrid(64, 1.0))
    moving = BarrierContract(
        payoff=Call(110.0), maturity=1.0, lower=ExponentialBarrier(90.0, 0.05)
    )
    with pytest.raises(UnsupportedConfiguration):
        solve_constant_single(MODEL, moving, TimeGrid(64, 1.0))
    wrong_strike = BarrierContract(payoff=Call(80.0), maturity=1.0, lower=ConstantBarrier(90.0))
    with pytest.raises(UnsupportedConfiguration):
        solve_constant_single(MODEL, wrong_strike, TimeGrid(64, 1.0))


def test_double_zero_payoff():
    contract = BarrierContract(
        payoff=SmoothBump(90.0, 110.0, 0.0), maturity=0.5,
        lower=ConstantBarrier(90.0), upper=ConstantBarrier(110.0),
    )
    prof = solve_constant_double(MODEL, contract, TimeGrid(64, 0.5))
    np.testing.assert_allclose(prof.totals("upper"), 0.0, atol=1e-12)
    np.testing.assert_allclose(prof.totals("lower"), 0.0, atol=1e-12)


def test_double_dnt_cross_validates_volterra():
    contract = dnt_contract(T=0.5)
    grid = TimeGrid(512, 0.5)
    lp = solve_constant_double(MODEL, contract, grid)
    vp = solve(MODEL, contract, grid)
    ts = grid.nodes
    keep = ts <= 0.95 * 0.5
    for side in ("upper", "lower"):
        diff = np.abs(lp.totals(side)[keep] - vp.totals(side)[keep])
        assert np.max(diff) < 5e-3
    pl = pricing.price(MODEL, contract, 100.0, lp).price
    pv = pricing.price(MODEL, contract, 100.0, vp).price
    assert abs(pl - pv) / abs(pv) < 1e-3


def test_double_singular_coefficients_match_volterra():
    # two independent derivations of the 1/sqrt(T - t) coefficient:
    # Psi(0)/(pi k(0,0)) in the product-integration solver and
    # Psi(0) * lim sqrt(u) h(u) in the Laplace solver
    contract = dnt_contract(T=0.5)
    grid = TimeGrid(128, 0.5)
    lp = solve_constant_double(MODEL, contract, grid)
    vp = solve(MODEL, contract, grid)
    assert lp.singular_plus == pytest.approx(vp.singular_plus, rel=1e-12)
    assert lp.singular_minus == pytest.approx(vp.singular_minus, rel=1e-12)


def test_solve_constant_dispatch():
    single = BarrierContract(payoff=Call(110.0), maturity=1.0, lower=ConstantBarrier(90.0))
    prof = solve_constant(MODEL, single, TimeGrid(64, 1.0))
    assert prof.has_side("lower") and not prof.has_side("upper")
    prof2 = solve_constant(MODEL, dnt_contract(), TimeGrid(64, 0.5))
    assert prof2.has_side("lower") and prof2.has_side("upper")


def test_supports_predicates():
    assert laplace.supports_single(MODEL, BarrierContract(payoff=Call(95.0), maturity=1.0, lower=ConstantBarrier(90.0)))
    assert laplace.supports_single(MODEL, BarrierContract(payoff=Put(100.0), maturity=1.0, upper=ConstantBarrier(110.0)))
    assert not laplace.supports_single(MODEL, BarrierContract(payoff=Put(120.0), maturity=1.0, upper=ConstantBarrier(110.0)))
    assert laplace.supports_double(MODEL, dnt_contract())
    assert not laplace.supports(CEV(sigma0=2.0, rho=0.5), dnt_contract())
