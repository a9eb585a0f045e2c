"""Paired one-sided t-test with a quadrature-based Student-t CDF."""

from __future__ import annotations

import math
from typing import Callable, Sequence

__all__ = ["adaptive_simpson", "paired_one_sided_t_test", "student_t_cdf", "student_t_pdf"]


def student_t_pdf(t: float, df: int) -> float:
    log_norm = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(log_norm - (df + 1) / 2 * math.log1p(t * t / df))


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-13, max_depth: int = 50) -> float:
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return recurse(a, m, fa, flm, fm, left, tol / 2, depth - 1) + recurse(m, b, fm, frm, fb, right, tol / 2, depth - 1)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def student_t_cdf(t: float, df: int) -> float:
    """Lower-tail CDF by adaptive Simpson quadrature of the density.

    For ``|t| > 1`` the tail is integrated after the substitution
    ``s = 1/x`` so the interval stays finite.
    """
    if math.isnan(t):
        raise ValueError("t is nan")
    if t == math.inf:
        return 1.0
    if t == -math.inf:
        return 0.0
    a = abs(t)
    if a <= 1.0:
        half = adaptive_simpson(lambda x: student_t_pdf(x, df), 0.0, a)
    else:
        def tail_integrand(s: float) -> float:
            return 0.0 if s == 0.0 else student_t_pdf(1.0 / s, df) / (s * s)

        half = 0.5 - adaptive_simpson(tail_integrand, 0.0, 1.0 / a)
    return 0.5 + half if t >= 0 else 0.5 - half


def paired_one_sided_t_test(diffs: Sequence[float]) -> tuple[float, float]:
    """Test ``mean(diffs) < 0``; returns ``(t, p)`` with ``df = n - 1``.

    A zero standard deviation gives ``p`` of 0 or 1 by the sign of the mean,
    and 0.5 when the mean is zero as well.
    """
    n = len(diffs)
    if n < 2:
        raise ValueError("need at least two paired differences")
    mean = math.fsum(diffs) / n
    sd = math.sqrt(math.fsum((d - mean) ** 2 for d in diffs) / (n - 1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 0.5
        return (-math.inf, 0.0) if mean < 0 else (math.inf, 1.0)
    t = mean / (sd / math.sqrt(n))
    return t, min(1.0, max(0.0, student_t_cdf(t, n - 1)))
