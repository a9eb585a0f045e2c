import math

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diff2.accountant import (
    BudgetSchedule,
    PrivacyBudget,
    RdpPoint,
    ScheduleMismatch,
    bvr_local_eps,
    calibrate_diff2_bvrlsgd,
    calibrate_diff2_gd,
    compose,
    gaussian_rdp,
    rdp_to_dp,
    select_alpha,
    subsample_amplified_rdp_exact,
    subsample_amplified_rdp_simple,
    verify_budget,
)


def mp_subsampled(eps_fn, gamma, alpha):
    """The binomial-sum bound with eps(inf) = inf, evaluated in 50-digit arithmetic."""
    with mpmath.workdps(50):
        g = mpmath.mpf(gamma)
        e2 = mpmath.mpf(eps_fn(2))
        total = 1 + g**2 * mpmath.binomial(alpha, 2) * min(4 * mpmath.expm1(e2), 2 * mpmath.exp(e2))
        for j in range(3, alpha + 1):
            total += 2 * g**j * mpmath.binomial(alpha, j) * mpmath.exp((j - 1) * mpmath.mpf(eps_fn(j)))
        return float(mpmath.log(total) / (alpha - 1))


def test_select_alpha_examples():
    assert select_alpha(PrivacyBudget(3.0, 1e-5)) == 9
    assert select_alpha(PrivacyBudget(5.0, 1e-5)) == 6
    delta = 1e-3
    assert select_alpha(PrivacyBudget(2 * math.log(1 / delta), delta)) == 2


@given(st.floats(0.05, 50), st.floats(1e-12, 0.5))
def test_alpha_halves_budget(eps, delta):
    alpha = select_alpha(PrivacyBudget(eps, delta))
    assert math.log(1 / delta) / (alpha - 1) <= eps / 2 * (1 + 1e-12)


def test_gaussian_rdp_examples():
    assert gaussian_rdp(1.0, 1.0, 2).eps_rdp == 1.0
    assert gaussian_rdp(0.0, 3.0, 7).eps_rdp == 0.0
    assert gaussian_rdp(2.0 / (3 * 2), 1.0, 9).eps_rdp == pytest.approx(0.5, rel=1e-15)


def test_compose_examples():
    assert compose([], alpha=9).eps_rdp == 0.0
    with pytest.raises(ValueError):
        compose([])
    pts = [RdpPoint(9, e) for e in (0.1, 0.2, 0.3)]
    assert compose(pts).eps_rdp == pytest.approx(0.6, rel=1e-15)
    assert compose([RdpPoint(9, 0.0123)] * 2000).eps_rdp == pytest.approx(2000 * 0.0123, rel=1e-12)
    with pytest.raises(ValueError):
        compose([RdpPoint(9, 0.1), RdpPoint(8, 0.1)])


@given(st.lists(st.floats(0, 10), max_size=30), st.randoms())
def test_compose_order_independent(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a = compose([RdpPoint(5, v) for v in values], 5).eps_rdp
    b = compose([RdpPoint(5, v) for v in shuffled], 5).eps_rdp
    assert a == pytest.approx(math.fsum(sorted(values)), rel=1e-12, abs=1e-300)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


def test_rdp_to_dp_examples():
    assert rdp_to_dp(RdpPoint(9, 1.5), 1e-5) == pytest.approx(1.5 + math.log(1e5) / 8, rel=1e-15)
    assert rdp_to_dp(RdpPoint(9, 1.5), 1e-5) == pytest.approx(2.9391, abs=1e-4)
    assert rdp_to_dp(RdpPoint(2, 0.0), math.exp(-1)) == pytest.approx(1.0, rel=1e-15)
    assert rdp_to_dp(RdpPoint(9, 0.0), 1e-5) <= 1.5


def test_calibrate_gd_example():
    plan = calibrate_diff2_gd(PrivacyBudget(3, 1e-5), 2000, 20, 1651, 10, u=1.25)
    denom = 1651**2 * 10**2 * 3
    assert plan.alpha == 9
    assert plan.sigma1_sq == pytest.approx(4 * 1.25 * 9 * 100 / denom, rel=1e-14)
    assert plan.sigma1_sq == pytest.approx(5.503e-6, rel=1e-3)
    assert plan.sigma2_sq == pytest.approx(4 * 5 * 9 * 1900 / denom, rel=1e-14)


def test_calibrate_gd_single_round():
    plan = calibrate_diff2_gd(PrivacyBudget(3, 1e-5), 1, 1, 100, 10, limit_one=True)
    assert plan.sigma2_sq is None
    assert plan.sigma1_sq == pytest.approx(4 * 9 / (100**2 * 10**2 * 3), rel=1e-14)
    with pytest.raises(ValueError):
        calibrate_diff2_gd(PrivacyBudget(3, 1e-5), 10, 2, 100, 10, limit_one=True)
    with pytest.raises(ValueError):
        calibrate_diff2_gd(PrivacyBudget(3, 1e-5), 10, 2, 100, 10, u=1.0)


def test_verify_budget_split():
    budget = PrivacyBudget(3, 1e-5)
    plan = calibrate_diff2_gd(budget, 2000, 20, 1651, 10, u=1.25)
    audit = verify_budget(plan)
    assert audit.rdp_restart == pytest.approx(3 / (2 * 1.25), rel=1e-12)
    assert audit.rdp_difference == pytest.approx(3 * 0.25 / (2 * 1.25), rel=1e-12)
    assert audit.rdp_total == pytest.approx(1.5, rel=1e-12)
    assert audit.eps_total <= 3.0
    dp = verify_budget(calibrate_diff2_gd(budget, 2000, 1, 1651, 10, limit_one=True))
    assert dp.rdp_difference == 0.0
    assert dp.rdp_total == pytest.approx(1.5, rel=1e-12)


def test_verify_budget_schedule_mismatch():
    plan = calibrate_diff2_gd(PrivacyBudget(3, 1e-5), 10, 1, 50, 2, limit_one=True)
    with pytest.raises(ScheduleMismatch):
        verify_budget(plan, BudgetSchedule(5, 5))


@pytest.mark.parametrize("field", ["R", "n_min", "P"])
def test_verify_budget_monotone(field):
    budget = PrivacyBudget(3, 1e-5)
    plan = calibrate_diff2_gd(budget, 200, 10, 100, 4)
    base = verify_budget(plan).eps_total
    if field == "R":
        bigger = verify_budget(plan, BudgetSchedule(plan.restart_rounds + 5, plan.difference_rounds + 5)).eps_total
        assert bigger > base
    else:
        plan2 = calibrate_diff2_gd(budget, 200, 10, 100, 4)
        setattr(plan2, field, getattr(plan, field) * 2)
        assert verify_budget(plan2).eps_total < base


def test_exact_subsampling_examples():
    f = bvr_local_eps(40, 0.01)
    assert subsample_amplified_rdp_exact(f, 0.0, 5) == 0.0
    # alpha = 2: only the quadratic term
    g = 1e-3
    e2 = f(2)
    expected = math.log1p(g**2 * min(4 * math.expm1(e2), 2 * math.exp(e2)))
    assert subsample_amplified_rdp_exact(f, g, 2) == pytest.approx(expected, rel=1e-12)
    assert subsample_amplified_rdp_exact(f, 1e-3, 5) == pytest.approx(mp_subsampled(f, 1e-3, 5), rel=1e-10)


@pytest.mark.parametrize("gamma", [1e-4, 1e-3, 1e-2, 0.05])
@pytest.mark.parametrize("alpha", [2, 3, 9, 32])
@pytest.mark.parametrize("sigma3_sq", [1e-3, 0.05, 1.0])
def test_exact_subsampling_matches_mp(gamma, alpha, sigma3_sq):
    f = bvr_local_eps(40, sigma3_sq)
    assert subsample_amplified_rdp_exact(f, gamma, alpha) == pytest.approx(mp_subsampled(f, gamma, alpha), rel=1e-9)


def test_exact_subsampling_bounded_eps_inf():
    f = bvr_local_eps(10, 0.5)
    unbounded = subsample_amplified_rdp_exact(f, 0.01, 9)
    bounded = subsample_amplified_rdp_exact(f, 0.01, 9, eps_inf=0.1)
    assert 0 <= bounded <= unbounded
    with pytest.raises(ValueError):
        subsample_amplified_rdp_exact(f, 0.01, 2.5)
    with pytest.raises(ValueError):
        subsample_amplified_rdp_exact(f, 1.5, 3)


def test_simple_bound_example():
    got = subsample_amplified_rdp_simple(0.01, 1e-3, 5, c=1.0)
    assert got.value == pytest.approx((2 / 3) * (4 + math.e) * 1e-6 * 25 * 0.01 / 4, rel=1e-14)
    assert subsample_amplified_rdp_simple(0.01, 0.0, 5).value == 0.0


def test_bvr_slack_and_example():
    budget = PrivacyBudget(3, 1e-5)
    plan = calibrate_diff2_bvrlsgd(budget, 400, 20, 10, 10, 1651, 40, u1=3, u2=3)
    assert plan.audit_rhs == pytest.approx(3 / 3, rel=1e-12)
    assert plan.audit_lhs <= plan.audit_rhs
    assert plan.feasible
    assert plan.sigma3_sq == pytest.approx(
        max((8 / 3) * (4 + math.e) * 81 / 8 * 6 * 10 * 40 / (1651**2 * 3), 6 * 9 / 40**2), rel=1e-14
    )
    audit = verify_budget(plan)
    assert audit.eps_total <= 3.0


def test_bvr_infeasible_cases():
    budget = PrivacyBudget(3, 1e-5)
    plan = calibrate_diff2_bvrlsgd(budget, 10, 10, 1, 10, 100, 100)
    assert plan.closed_form_conditions is False
    assert not plan.feasible
    plan = calibrate_diff2_bvrlsgd(budget, 10, 10, 1, 10, 100, 101)
    assert not plan.feasible
    plan = calibrate_diff2_bvrlsgd(budget, 400, 20, 10, 10, 1651, 40, u1=2, u2=2)
    assert not plan.feasible


def test_bvr_verify_budget_matches_audit():
    budget = PrivacyBudget(3, 1e-5)
    plan = calibrate_diff2_bvrlsgd(budget, 400, 20, 10, 10, 1651, 40)
    audit = verify_budget(plan)
    # per-client local charge is half the calibrator's conservative 2 K ceil(R/P) eps'
    assert audit.rdp_local == pytest.approx(plan.audit_lhs / 2, rel=1e-12)
    assert audit.rdp_restart == pytest.approx(1.5 / 3, rel=1e-12)
