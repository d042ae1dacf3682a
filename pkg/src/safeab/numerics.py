"""Scalar special-function kernels.

Tail probabilities go through the regularized incomplete beta and gamma
functions of :mod:`scipy.special`; the confluent hypergeometric function
is evaluated here, because the safe t-test needs it at parameter sizes
(``a = -nu/2`` with ``nu`` in the millions) where off-the-shelf
implementations lose all accuracy.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy import optimize, special

from .errors import DomainError

__all__ = [
    "log_gamma",
    "hyp1f1",
    "hyp1f1_log",
    "student_t_sf",
    "chi2_sf",
    "normal_cdf",
    "normal_quantile",
]

_LN2 = math.log(2.0)
_MAX_LOG = math.log(np.finfo(float).max)
# Series whose largest term sits beyond this index go to quadrature.
_SERIES_PEAK_LIMIT = 1500
_MAX_TERMS = 200_000
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_GL_PANELS = 6


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for ``x > 0``."""
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise DomainError(f"log_gamma requires a finite x > 0, got {x!r}")
    return math.lgamma(x)


def _is_nonpositive_integer(v: float) -> bool:
    return v <= 0 and v == math.floor(v)


# -- power series ------------------------------------------------------------

def _series(a: float, b: float, z: float):
    """Sum the 1F1 power series with exact power-of-two rescaling.

    Returns ``(log|sum|, sign, condition)`` where ``condition`` is
    ``sum|t_k| / |sum t_k|``, or ``None`` when the series does not settle
    within ``_MAX_TERMS`` terms.
    """
    mantissas = [1.0]
    exponents = [0]
    term, exp2 = 1.0, 0
    big_log2 = 0.0
    # Sign changes of (a)_k and (b)_k stop once k exceeds both -a and -b.
    settle = max(0.0, -a, -b) + 1
    k = 0
    while True:
        num = a + k
        if num == 0.0:
            break
        r = num * z / ((b + k) * (k + 1))
        term *= r
        k += 1
        if term == 0.0:
            break
        m, e = math.frexp(term)
        if e > 600 or e < -600:
            term = m
            exp2 += e
        mantissas.append(term)
        exponents.append(exp2)
        cur_log2 = math.log2(abs(term)) + exp2
        big_log2 = max(big_log2, cur_log2)
        rho = None
        if b > 0 and a < 0:
            # |a+j| / ((b+j)(j+1)) shrinks while a+j < 0, and past that
            # point |a+j| < j+1, so later ratios stay below this bound.
            rho = max(abs(r), abs(z) / (b + k))
        elif k > settle:
            # For a >= b the ratio only shrinks from here; otherwise it is
            # bounded by |z|/(k+1).
            rho = abs(r) if a >= b else abs(z) / (k + 1)
        if rho is not None:
            if rho < 1.0 and cur_log2 + math.log2(rho / (1.0 - rho)) < big_log2 - 57:
                break
        if k > _MAX_TERMS:
            return None
    top = max(exponents)
    scaled = [math.ldexp(t, e - top) for t, e in zip(mantissas, exponents)]
    total = math.fsum(scaled)
    abs_total = math.fsum(abs(t) for t in scaled)
    if total == 0.0:
        return (-math.inf, 0, math.inf)
    log_abs = math.log(abs(total)) + top * _LN2
    return (log_abs, 1 if total > 0 else -1, abs_total / abs(total))


def _positive_series_log(a: float, b: float, y: float) -> float:
    """Log of the all-positive series (a, b, y > 0)."""
    term, exp2 = 1.0, 0
    total = 1.0
    k = 0
    while True:
        r = (a + k) * y / ((b + k) * (k + 1))
        term *= r
        total += term
        k += 1
        if total > 2.0 ** 600:
            total = math.ldexp(total, -600)
            term = math.ldexp(term, -600)
            exp2 += 600
        rho = r if a >= b else y / (k + 1)
        if rho < 1.0 and term * rho / (1.0 - rho) <= 1e-17 * total:
            break
        if k > _MAX_TERMS:
            raise ArithmeticError("1F1 series failed to converge")
    return math.log(total) + exp2 * _LN2


def _peak_index(a: float, b: float, y: float) -> float:
    # k where the term ratio (a+k)y / ((b+k)(k+1)) crosses one.
    p = b + 1.0 - y
    q = b - a * y
    disc = p * p - 4.0 * q
    if disc < 0:
        return 0.0
    return max(0.0, (-p + math.sqrt(disc)) / 2.0)


def _peak_index_negative(a: float, b: float, z: float) -> float:
    # k where |(a+k) z| / ((b+k)(k+1)) crosses one, for a < 0 and z < 0.
    m, w = -a, -z
    # (m - k) w = (b + k)(k + 1)  ->  k^2 + (b + 1 + w) k + b - m w = 0
    p = b + 1.0 + w
    q = b - m * w
    disc = p * p - 4.0 * q
    return max(0.0, (-p + math.sqrt(disc)) / 2.0) if disc >= 0 else 0.0


# -- Laplace-type integral for large parameters ------------------------------

def _stirling_remainder(a: float) -> float:
    """lgamma(a) - [(a - 1/2) ln a - a + ln(2 pi)/2], without cancellation for large a."""
    if a < 12.0:
        return math.lgamma(a) - ((a - 0.5) * math.log(a) - a + 0.5 * math.log(2 * math.pi))
    inv = 1.0 / a
    inv2 = inv * inv
    return inv * (1 / 12 - inv2 * (1 / 360 - inv2 * (1 / 1260 - inv2 * (1 / 1680 - inv2 / 1188))))


def _integral_log(a: float, b: float, y: float) -> float:
    """Log 1F1(a; b; y) for a, b, y > 0 as a gamma-mixture integral.

    1F1(a; b; y) = E[0F1(; b; y S)] with S ~ Gamma(a, 1). Writing
    S = a (1 + w) keeps every log term of moderate size, so nothing of
    order lgamma(a) has to cancel.
    """
    order = b - 1.0
    base = (-0.5 * math.log(2 * math.pi) + 0.5 * math.log(a) - _stirling_remainder(a)
            + math.lgamma(b))
    ya = y * a

    def log_f(w):
        w = np.asarray(w, dtype=float)
        lp = np.log1p(w)
        x = 2.0 * np.sqrt(ya * (1.0 + w))
        return (a * (lp - w) - lp + 0.5 * (1.0 - b) * (math.log(ya) + lp)
                + np.log(special.ive(order, x)) + x)

    def dlog_f(w):
        x = 2.0 * math.sqrt(ya * (1.0 + w))
        # d/dw of log I_v(x) + (1-b)/2 log(1+w), using I_v' = I_{v+1} + (v/x) I_v
        bessel = (special.ive(b, x) / special.ive(order, x) + order / x) * x / (2.0 * (1.0 + w))
        return a * (1.0 / (1.0 + w) - 1.0) - 1.0 / (1.0 + w) + 0.5 * (1.0 - b) / (1.0 + w) + bessel

    # Mode of (a-1) ln s - s + 2 sqrt(y s), i.e. sqrt(s) solves s - sqrt(y) sqrt(s) - (a-1) = 0.
    root = 0.5 * (math.sqrt(y) + math.sqrt(y + 4.0 * max(a - 1.0, 0.0)))
    guess = root * root / a - 1.0
    width = 1.0 / math.sqrt(a) + abs(guess) * 0.1 + 1e-3
    lo, hi = max(guess - width, -1.0 + 1e-12), guess + width
    while dlog_f(lo) <= 0:
        lo = -1.0 + 0.5 * (lo + 1.0)
    while dlog_f(hi) >= 0:
        hi = hi + 2.0 * (hi - lo)
    mode = optimize.brentq(dlog_f, lo, hi, xtol=1e-15, rtol=1e-15)
    peak = float(log_f(mode))
    drop = 46.0

    def gap(w):
        return float(log_f(w)) - (peak - drop)

    step = width
    right = mode + step
    while gap(right) > 0:
        step *= 2.0
        right = mode + step
    right = optimize.brentq(gap, mode, right)
    step = min(width, 0.5 * (mode + 1.0))
    inner = mode
    while True:
        cand = mode - step
        if cand <= -1.0:
            left = -1.0
            break
        if gap(cand) <= 0:
            left = optimize.brentq(gap, cand, inner)
            break
        inner = cand
        step = min(2.0 * step, 0.5 * (mode + 1.0) + step)

    edges = np.linspace(left, right, _GL_PANELS + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    vals = np.exp(log_f(nodes) - peak)
    integral = math.fsum(weights * vals)
    return base + peak + math.log(integral)


def _positive_log(a: float, b: float, y: float) -> float:
    if _peak_index(a, b, y) > _SERIES_PEAK_LIMIT:
        return _integral_log(a, b, y)
    return _positive_series_log(a, b, y)


def _exact_polynomial(a: float, b: float, z: float):
    # Rational evaluation; every float is an exact Fraction.
    fa, fb, fz = Fraction(a), Fraction(b), Fraction(z)
    term = Fraction(1)
    total = Fraction(1)
    k = 0
    while fa + k != 0:
        term = term * (fa + k) * fz / ((fb + k) * (k + 1))
        total += term
        k += 1
    if total == 0:
        return (-math.inf, 0)
    sign = 1 if total > 0 else -1
    num, den = abs(total.numerator), total.denominator
    # Divide first so the quotient keeps ~64 significant bits; taking
    # log(num) - log(den) would cancel two large logs.
    shift = num.bit_length() - den.bit_length() - 64
    q = num // (den << shift) if shift >= 0 else (num << -shift) // den
    return (math.log(q) + shift * _LN2, sign)


def hyp1f1_log(a: float, b: float, z: float) -> tuple[float, int]:
    """Return ``(log|1F1(a; b; z)|, sign)``.

    Zero results come back as ``(-inf, 0)``. This is the variant to use
    whenever the value may exceed double range.
    """
    a, b, z = float(a), float(b), float(z)
    if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(z)):
        raise DomainError("hyp1f1 arguments must be finite")
    if _is_nonpositive_integer(b):
        raise DomainError(f"hyp1f1 undefined for b = {b!r} (non-positive integer)")
    if z == 0.0 or a == 0.0:
        return (0.0, 1)
    if a == b:
        return (z, 1)

    if b > 0:
        if a > 0 and z > 0:
            return (_positive_log(a, b, z), 1)
        if z < 0 and b - a > 0:
            # a < 0 with z < 0 has positive terms up to k = -a; sum directly
            # while the series is short, otherwise transform.
            if a < 0 and _peak_index_negative(a, b, z) < min(_SERIES_PEAK_LIMIT, 0.5 * -a):
                direct = _series(a, b, z)
                if direct is not None and direct[2] < 2.0:
                    return (direct[0], direct[1])
            return (z + _positive_log(b - a, b, -z), 1)

    polynomial = _is_nonpositive_integer(a)
    direct = _series(a, b, z)
    best = direct
    if not polynomial and (direct is None or direct[2] > 8.0):
        kummer = _series(b - a, b, -z)
        if kummer is not None:
            kummer = (kummer[0] + z, kummer[1], kummer[2])
            if best is None or kummer[2] < best[2]:
                best = kummer
    if best is None:
        raise ArithmeticError(f"1F1({a}, {b}, {z}) series failed to converge")
    if polynomial and best[2] > 1e3 and -a <= 400:
        return _exact_polynomial(a, b, z)
    return (best[0], best[1])


def hyp1f1(a: float, b: float, z: float) -> float:
    """Confluent hypergeometric function 1F1(a; b; z).

    Raises :class:`OverflowError` when the value is beyond double range;
    :func:`hyp1f1_log` gives the logarithm in that case.
    """
    log_abs, sign = hyp1f1_log(a, b, z)
    if log_abs > _MAX_LOG:
        raise OverflowError(f"1F1({a}, {b}, {z}) overflows; use hyp1f1_log")
    return sign * math.exp(log_abs)


# -- distributions ----------------------------------------------------------

def _check_positive(name, value):
    if np.any(~(np.asarray(value) > 0)):
        raise DomainError(f"{name} must be > 0")


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def student_t_sf(t, nu):
    """Upper tail ``P(T >= t)`` of Student's t with ``nu`` degrees of freedom.

    Works elementwise on arrays.
    """
    _check_positive("nu", nu)
    t = np.asarray(t, dtype=float)
    nu = np.asarray(nu, dtype=float)
    half = 0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + t * t))
    return _out(np.where(t >= 0, half, 1.0 - half))


def chi2_sf(x, k):
    """Upper tail of the chi-squared distribution with ``k`` degrees of freedom."""
    _check_positive("k", k)
    x = np.asarray(x, dtype=float)
    if np.any(~(x >= 0)):
        raise DomainError("chi2_sf requires x >= 0")
    return _out(special.gammaincc(0.5 * np.asarray(k, dtype=float), 0.5 * x))


def normal_cdf(x):
    return _out(special.ndtr(np.asarray(x, dtype=float)))


def normal_quantile(p):
    """Inverse of the standard normal CDF on the open interval (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("normal_quantile requires 0 < p < 1")
    return _out(special.ndtri(p))
