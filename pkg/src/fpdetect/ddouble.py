"""Double-double ("unevaluated pair") arithmetic.

A value is represented as hi + lo where hi is the nearest double and
|lo| <= 0.5 ulp(hi), giving an effective mantissa of >= 106 bits.  The
functional forms below work element-wise on numpy arrays and are used to
unroll stencil coefficients; the small ExtendedFloat wrapper gives the
same thing a scalar face.

Error-free transforms follow Dekker/Knuth; no FMA is assumed.
"""

from __future__ import annotations

import numpy as np

_SPLITTER = 134217729.0  # 2^27 + 1


def two_sum(a, b):
    """s, e with s = fl(a + b) and s + e == a + b exactly."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def quick_two_sum(a, b):
    """two_sum specialisation valid when |a| >= |b|."""
    s = a + b
    e = b - (s - a)
    return s, e


def split(a):
    c = _SPLITTER * a
    big = c - a
    hi = c - big
    lo = a - hi
    return hi, lo


def two_prod(a, b):
    """p, e with p = fl(a * b) and p + e == a * b exactly."""
    p = a * b
    ahi, alo = split(a)
    bhi, blo = split(b)
    e = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo
    return p, e


def dd_add(xh, xl, yh, yl):
    """(xh,xl) + (yh,yl), accurate variant."""
    sh, se = two_sum(xh, yh)
    tl, te = two_sum(xl, yl)
    se = se + tl
    sh, se = quick_two_sum(sh, se)
    se = se + te
    return quick_two_sum(sh, se)

def dd_neg(xh, xl):
    return -xh, -xl


def dd_mul_d(xh, xl, c):
    """(xh,xl) * c for a plain double c."""
    ph, pe = two_prod(xh, c)
    pe = pe + xl * c
    return quick_two_sum(ph, pe)


def dd_mul(xh, xl, yh, yl):
    ph, pe = two_prod(xh, yh)
    pe = pe + (xh * yl + xl * yh)
    return quick_two_sum(ph, pe)


def dd_sum(hi, lo, axis=None):
    """Sum of a dd array along an axis, accumulated in dd."""
    hi = np.asarray(hi, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    if axis is None:
        hi = hi.reshape(-1)
        lo = lo.reshape(-1)
        axis = 0
    hi = np.moveaxis(hi, axis, 0)
    lo = np.moveaxis(lo, axis, 0)
    ah, al = hi[0], lo[0]
    for i in range(1, hi.shape[0]):
        ah, al = dd_add(ah, al, hi[i], lo[i])
    return ah, al


class ExtendedFloat:
    """Scalar double-double value.  Mostly a convenience for tests and
    for extracting single coefficients at full precision."""

    __slots__ = ("hi", "lo")

    def __init__(self, hi=0.0, lo=0.0):
        h, l = two_sum(float(hi), float(lo))
        self.hi, self.lo = float(h), float(l)

    @classmethod
    def from_fraction(cls, fr):
        """Round an exact fraction to double-double (two float roundings)."""
        hi = float(fr)
        lo = float(fr - type(fr)(hi))
        return cls(hi, lo)

    def __add__(self, other):
        o = other if isinstance(other, ExtendedFloat) else ExtendedFloat(other)
        h, l = dd_add(self.hi, self.lo, o.hi, o.lo)
        return ExtendedFloat(h, l)

    __radd__ = __add__

    def __neg__(self):
        return ExtendedFloat(-self.hi, -self.lo)

    def __sub__(self, other):
        o = other if isinstance(other, ExtendedFloat) else ExtendedFloat(other)
        return self + (-o)

    def __mul__(self, other):
        if isinstance(other, ExtendedFloat):
            h, l = dd_mul(self.hi, self.lo, other.hi, other.lo)
        else:
            h, l = dd_mul_d(self.hi, self.lo, float(other))
        return ExtendedFloat(h, l)

    __rmul__ = __mul__

    def __float__(self):
        return self.hi

    def __eq__(self, other):
        o = other if isinstance(other, ExtendedFloat) else ExtendedFloat(other)
        return self.hi == o.hi and self.lo == o.lo

    def __repr__(self):
        return f"ExtendedFloat({self.hi!r}, {self.lo!r})"
