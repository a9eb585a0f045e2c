import math

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as scipy_stats

from diff2.harness.stats import adaptive_simpson, paired_one_sided_t_test, student_t_cdf, student_t_pdf


def mp_t_cdf(t, df):
    """Independent oracle: mpmath quadrature of the t density from -inf."""
    with mpmath.workdps(30):
        c = mpmath.gamma((df + 1) / mpmath.mpf(2)) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / mpmath.mpf(2)))
        pdf = lambda x: c * (1 + x * x / df) ** (-(df + 1) / mpmath.mpf(2))
        return float(mpmath.quad(pdf, [-mpmath.inf, 0, t]))


def test_degenerate_cases():
    assert paired_one_sided_t_test([0.0] * 5) == (0.0, 0.5)
    t, p = paired_one_sided_t_test([-1.0] * 5)
    assert t == -math.inf and p == 0.0
    t, p = paired_one_sided_t_test([2.0] * 5)
    assert t == math.inf and p == 1.0
    with pytest.raises(ValueError):
        paired_one_sided_t_test([1.0])


def test_worked_example_against_quadrature():
    diffs = [-2.0, -1.0, -3.0, -2.0, -2.0]
    t, p = paired_one_sided_t_test(diffs)
    mean = -2.0
    sd = math.sqrt(sum((d - mean) ** 2 for d in diffs) / 4)
    assert t == pytest.approx(mean / (sd / math.sqrt(5)), rel=1e-14)
    assert p == pytest.approx(mp_t_cdf(t, 4), abs=1e-6)
    assert p == pytest.approx(scipy_stats.t.cdf(t, 4), abs=1e-10)


@pytest.mark.parametrize("t", [-40.0, -6.0, -2.5, -1.0, -0.3, 0.0, 0.7, 1.0, 1.5, 8.0, 100.0])
@pytest.mark.parametrize("df", [1, 4, 9])
def test_cdf_matches_oracle(t, df):
    assert student_t_cdf(t, df) == pytest.approx(mp_t_cdf(t, df), abs=1e-9)


def test_pdf_and_simpson():
    assert student_t_pdf(0.0, 4) == pytest.approx(scipy_stats.t.pdf(0.0, 4), rel=1e-14)
    assert adaptive_simpson(lambda x: x**3, 0.0, 2.0) == pytest.approx(4.0, rel=1e-14)
    assert student_t_cdf(math.inf, 4) == 1.0 and student_t_cdf(-math.inf, 4) == 0.0


diff_lists = st.lists(st.floats(-100, 100, allow_nan=False), min_size=5, max_size=5)


@given(diff_lists)
def test_p_in_unit_interval_and_antisymmetric(diffs):
    t, p = paired_one_sided_t_test(diffs)
    t2, p2 = paired_one_sided_t_test([-d for d in diffs])
    assert 0.0 <= p <= 1.0
    assert p + p2 == pytest.approx(1.0, abs=1e-12)
    if math.isfinite(t):
        assert t2 == pytest.approx(-t, rel=1e-12, abs=1e-300)
