"""Statistical primitives: Welch's t-test, Pearson correlation, incomplete beta.

Self-contained so the significance tests used elsewhere in the package do not
depend on an external statistics library (the test suite checks these against
an independent implementation).
"""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

__all__ = ["betainc_reg", "welch_t", "pearson_r", "WelchResult"]

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-16
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz's method."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x < 0.0 or x > 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # Continued fraction converges fast only below the distribution mean.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


class WelchResult(NamedTuple):
    t: float
    df: float
    p_value: float


def _mean_var(values: Sequence[float]) -> tuple[float, float, int]:
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, var, n


def welch_t(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Welch's unequal-variance t-test, two-sided.

    Returns the t statistic, Welch-Satterthwaite degrees of freedom, and the
    two-sided p-value computed through the regularized incomplete beta.
    """
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")
    mean_a, var_a, n_a = _mean_var(a)
    mean_b, var_b, n_b = _mean_var(b)
    if var_a == 0.0 and var_b == 0.0:
        if mean_a == mean_b:
            raise ValueError("both samples constant with equal means: t undefined")
        t = math.inf if mean_a > mean_b else -math.inf
        return WelchResult(t, float(n_a + n_b - 2), 0.0)
    se_a = var_a / n_a
    se_b = var_b / n_b
    se2 = se_a + se_b
    t = (mean_a - mean_b) / math.sqrt(se2)
    df = se2 * se2 / (se_a * se_a / (n_a - 1) + se_b * se_b / (n_b - 1))
    if t == 0.0:
        return WelchResult(0.0, df, 1.0)
    p = betainc_reg(df / 2.0, 0.5, df / (df + t * t))
    return WelchResult(t, df, min(1.0, max(0.0, p)))


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient, clipped to [-1, 1]."""
    if len(x) != len(y):
        raise ValueError("series must have equal length")
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 observations")
    mean_x = math.fsum(x) / n
    mean_y = math.fsum(y) / n
    dx = [v - mean_x for v in x]
    dy = [v - mean_y for v in y]
    ss_x = math.fsum(d * d for d in dx)
    ss_y = math.fsum(d * d for d in dy)
    if ss_x == 0.0 or ss_y == 0.0:
        raise ValueError("correlation undefined for a constant series")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(ss_x * ss_y)
    return min(1.0, max(-1.0, r))
