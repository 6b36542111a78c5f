"""Dual-mode arithmetic: exact rationals (``Fraction`` in object arrays) or binary64."""

from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational

import numpy as np

REL_TOL = 1e-9


def parse_number(x):
    """Parse ``"num/den"`` strings and ints to ``Fraction``; floats pass through."""
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, bool):
        raise TypeError("boolean is not a number")
    if isinstance(x, Rational):
        return Fraction(x)
    return float(x)


def format_number(x):
    if isinstance(x, Rational):
        x = Fraction(x)
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    x = float(x)
    if math.isinf(x):
        return "inf"
    return x


def is_exact(x) -> bool:
    return isinstance(x, Rational)


def _iroot(k: int, s: int):
    """Integer s-th root of k >= 0 if k is a perfect power, else None."""
    if k < 2:
        return k
    r = int(round(k ** (1.0 / s))) if k.bit_length() < 1000 else None
    if r is None:
        lo, hi = 1, 1 << (k.bit_length() // s + 1)
        while lo < hi:
            mid = (lo + hi) // 2
            if mid**s < k:
                lo = mid + 1
            else:
                hi = mid
        r = lo
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand**s == k:
            return cand
    return None


def exact_pow(base, e):
    """``base ** e``, exact when both are rational and the result is rational.

    Falls back to float otherwise. ``0 ** negative`` gives ``inf``.
    """
    if isinstance(base, Rational) and isinstance(e, Rational):
        base, e = Fraction(base), Fraction(e)
        if base < 0:
            raise ValueError("negative base")
        if base == 0:
            if e > 0:
                return Fraction(0)
            if e == 0:
                return Fraction(1)
            return math.inf
        if e.denominator == 1:
            return base ** int(e)
        s = e.denominator
        a = _iroot(base.numerator, s)
        b = _iroot(base.denominator, s)
        if a is not None and b is not None:
            return Fraction(a, b) ** e.numerator
        return _float_pow(base, e)
    return _float_pow(base, e)


def _float_pow(base, e):
    b = float(base)
    e = float(e)
    if b == 0.0:
        if e > 0:
            return 0.0
        return 1.0 if e == 0 else math.inf
    try:
        return b**e
    except OverflowError:
        return math.inf


_vpow = np.frompyfunc(exact_pow, 2, 1)


def power(arr, e):
    """Elementwise power for float or object (exact) arrays."""
    arr = np.asarray(arr)
    if arr.dtype == object:
        out = _vpow(arr, e)
        return _normalize(out)
    with np.errstate(divide="ignore", over="ignore"):
        return np.power(arr.astype(float), float(e))


def _normalize(arr):
    """Object array -> float array if any element lost exactness."""
    flat = arr.ravel()
    if all(isinstance(v, Rational) for v in flat):
        return arr
    return arr.astype(float)


def to_mode(arr, exact: bool):
    arr = np.asarray(arr)
    if exact:
        if arr.dtype == object:
            return arr
        return np.vectorize(lambda v: Fraction(v), otypes=[object])(arr) if arr.size else arr.astype(object)
    return arr.astype(float)


def ceil_log2(t) -> int:
    """Smallest integer k with 2**k >= t, for t > 0 (exact)."""
    t = Fraction(t)
    if t <= 0:
        raise ValueError("t must be positive")
    k = t.numerator.bit_length() - t.denominator.bit_length()
    while Fraction(2) ** k < t:
        k += 1
    while Fraction(2) ** (k - 1) >= t:
        k -= 1
    return k


def pow2(k: int):
    return Fraction(2) ** k


def _compare(arr, thr, strict: bool):
    arr = np.asarray(arr)
    if arr.dtype != object:
        return arr > thr if strict else arr >= thr
    f = arr.astype(float)
    tf = float(thr)
    out = f > tf if strict else f >= tf
    close = np.abs(f - tf) <= 1e-9 * max(abs(tf), 1e-300)
    if close.any():
        idx = np.nonzero(close)
        sub = arr[idx]
        out[idx] = [(v > thr) if strict else (v >= thr) for v in sub]
    return out


def exact_gt(arr, thr):
    """``arr > thr`` elementwise; exact for Fraction entries (float prefilter)."""
    return _compare(arr, thr, True)


def exact_ge(arr, thr):
    return _compare(arr, thr, False)


def rel_close(a, b, tol: float = REL_TOL) -> bool:
    a, b = float(a), float(b)
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


def leq(a, b, tol: float = REL_TOL) -> bool:
    """``a <= b`` exactly for rationals, within relative ``tol`` otherwise."""
    if isinstance(a, Rational) and isinstance(b, Rational):
        return a <= b
    a, b = float(a), float(b)
    if math.isinf(b):
        return True
    return a <= b + tol * max(abs(a), abs(b), 1e-300)
