"""Self-contained numeric kernels for the annotation pipeline.

Descriptive summaries, a Student-t CDF built on the regularized incomplete
beta function, a one-tailed Welch two-sample t-test, Pearson correlation,
and seeded bootstrap index streams.  Nothing here depends on an external
statistics package; the t CDF is cross-checked against an adaptive
quadrature oracle in the test suite.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SampleSummary",
    "TTestResult",
    "InsufficientDataError",
    "UndefinedCorrelationError",
    "student_t_cdf",
    "welch_one_tailed",
    "pearson",
    "bootstrap_indices",
    "substream",
    "substream_seed",
]


class InsufficientDataError(ValueError):
    """A test was requested on a sample too small to carry it."""


class UndefinedCorrelationError(ValueError):
    """Pearson correlation is undefined for the given sequences."""


@dataclass(frozen=True)
class SampleSummary:
    """Size, mean and sample (n-1) standard deviation of one group."""

    n: int
    mean: float
    sd: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "SampleSummary":
        arr = np.asarray(values, dtype=float)
        if arr.size < 1:
            raise InsufficientDataError("summary of an empty sample")
        sd = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
        return cls(n=int(arr.size), mean=float(arr.mean()), sd=sd)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p_one_tailed: float
    significant: bool


# --------------------------------------------------------------------------
# Student-t CDF via the regularized incomplete beta function.
#
# I_x(a, b) is evaluated with the modified Lentz continued fraction and the
# standard symmetry switch at x = (a+1)/(a+b+2), which keeps the fraction
# in its fast-converging region for every (a, b, x) reachable from the
# t CDF (df in [1, 1e6], |t| <= 50).

_CF_MAX_ITER = 500
_CF_EPS = 1.0e-16
_CF_TINY = 1.0e-300


def _beta_cont_frac(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(
        f"incomplete beta continued fraction failed to converge (a={a}, b={b}, x={x})"
    )


def _reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_frac(a, b, x) / a
    return 1.0 - front * _beta_cont_frac(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student's t with ``df`` degrees of freedom.

    Raises ValueError for df <= 0 or non-finite t.
    """
    if not (df > 0.0) or not math.isfinite(df):
        raise ValueError(f"degrees of freedom must be a positive finite number, got {df}")
    if not math.isfinite(t):
        raise ValueError(f"t statistic must be finite, got {t}")
    if t == 0.0:
        return 0.5
    # I_x(df/2, 1/2) with x = df/(df+t^2) is the two-sided tail P(|T| >= |t|).
    x = df / (df + t * t)
    tail = 0.5 * _reg_inc_beta(0.5 * df, 0.5, x)
    return 1.0 - tail if t > 0.0 else tail


def welch_one_tailed(
    higher: SampleSummary, lower: SampleSummary, alpha: float
) -> TTestResult:
    """Welch's unequal-variance t-test of mean(higher) > mean(lower).

    Degenerate zero-variance inputs resolve by the sign of the mean
    difference rather than erroring, so constant-score annotators still
    receive a defined verdict.
    """
    if higher.n < 2 or lower.n < 2:
        raise InsufficientDataError(
            f"both groups need n >= 2 (got {higher.n} and {lower.n})"
        )
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")

    vh = higher.sd**2 / higher.n
    vl = lower.sd**2 / lower.n
    fallback_df = float(higher.n + lower.n - 2)
    if vh == 0.0 and vl == 0.0:
        if higher.mean > lower.mean:
            t, p = math.inf, 0.0
        elif higher.mean < lower.mean:
            t, p = -math.inf, 1.0
        else:
            t, p = 0.0, 0.5
        return TTestResult(t=t, df=fallback_df, p_one_tailed=p, significant=p < alpha)

    t = (higher.mean - lower.mean) / math.sqrt(vh + vl)
    df = (vh + vl) ** 2 / (
        vh**2 / (higher.n - 1) + vl**2 / (lower.n - 1)
    )
    p = 1.0 - student_t_cdf(t, df)
    return TTestResult(t=t, df=df, p_one_tailed=p, significant=p < alpha)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation, clamped to [-1, 1] against rounding."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise UndefinedCorrelationError(
            f"sequences must be 1-d and of equal length (got {xa.shape} and {ya.shape})"
        )
    if xa.size < 2:
        raise UndefinedCorrelationError("correlation needs at least two points")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant sequence")
    r = float(xc @ yc) / (sx * sy)
    return max(-1.0, min(1.0, r))


# --------------------------------------------------------------------------
# Seeded bootstrap.


def substream_seed(seed: int, label: str) -> np.random.SeedSequence:
    """Derive a named, reproducible child seed from a single run seed."""
    return np.random.SeedSequence(
        [seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode("utf-8"))]
    )


def substream(seed: int, label: str) -> np.random.Generator:
    """Generator on the named substream of ``seed``."""
    return np.random.default_rng(substream_seed(seed, label))


def bootstrap_indices(n: int, b: int, seed: int) -> np.ndarray:
    """``b`` resamples of ``n`` indices drawn with replacement from [0, n).

    Resample r is derived from (seed, r) alone, so the first r resamples
    are identical for any larger b (prefix stability) and resamples may be
    generated in parallel in any order.
    """
    if n < 1:
        raise ValueError(f"cannot resample from an empty sample (n={n})")
    if b < 1:
        raise ValueError(f"need at least one resample (b={b})")
    children = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF).spawn(b)
    out = np.empty((b, n), dtype=np.intp)
    for r, child in enumerate(children):
        out[r] = np.random.default_rng(child).integers(0, n, size=n)
    return out
