"""Certified round-off accounting for iterated and direct stencil evaluation.

Every floating-point multiply or add may perturb its result by at most
``op_eps`` times the magnitude of the exact result (``op_eps`` is one ulp of
unity by default).  Multiplication by an exact power of two is exempt: it only
changes the exponent, so it is error-free in binary floating point.

Data is modelled canonically: magnitudes lie in [1, 2^width] where ``width``
counts the binades spanned by the live data (a scan result rescales real grids
into this window).  Widths above PROFILED_WIDTH_MAX are rejected; callers with
wider scans clamp to the top binades first, which keeps the absolute bounds
valid because they only depend on the magnitude ceiling.

Two bounds are produced per configuration:

* iterated: noise injected by every grid update over T steps, pushed forward
  through the absolute effective-coefficient sums,
* direct: noise of one compensated dot product against the T-step
  coefficients, including coefficient-rounding residuals and any deliberately
  excluded far-field terms.

The detector precision is the number of leading significand bits the two
evaluation routes must share, i.e. precision minus the log of the worse bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .coeffs import CoeffTable
from .errors import UnsupportedExponentRangeError
from .stencil import ExponentRange, StencilSpec

PROFILED_WIDTH_MAX = 20

_UP = 1.0 + 2.0**-40  # one-sided slack after a short rounded reduction


# ---------------------------------------------------------------------------
# model and small numeric helpers


@dataclass(frozen=True)
class FloatModel:
    """Working precision and per-operation error charge.

    unit "mu" charges one ulp of unity (2^(1-p)) per operation — the
    conservative default; unit "u" charges the unit round-off 2^-p.
    """

    precision: int = 53
    unit: str = "mu"
    exact_pow2: bool = True

    @property
    def u(self) -> float:
        return math.ldexp(1.0, -self.precision)

    @property
    def mu(self) -> float:
        return math.ldexp(1.0, 1 - self.precision)

    @property
    def op_eps(self) -> float:
        if self.unit == "mu":
            return self.mu
        if self.unit == "u":
            return self.u
        raise ValueError(f"unknown unit {self.unit!r} (use 'mu' or 'u')")

    def is_exact_scale(self, c: float) -> bool:
        """True when multiplying by c cannot round (c is +-2^k)."""
        if not self.exact_pow2 or c == 0 or not math.isfinite(c):
            return False
        return abs(math.frexp(c)[0]) == 0.5


DEFAULT_MODEL = FloatModel()


def binade_exp(x: float):
    """Binary exponent e with 2^e <= |x| < 2^(e+1); -inf for zero."""
    if x == 0:
        return float("-inf")
    return math.frexp(abs(x))[1] - 1


def ceil_log2(x: float) -> int:
    """Exact ceil(log2 x) for positive finite doubles."""
    if x <= 0 or not math.isfinite(x):
        raise ValueError(f"ceil_log2 needs a positive finite value, got {x}")
    f, e = math.frexp(x)
    return e - 1 if f == 0.5 else e


class Interval(NamedTuple):
    """Closed interval with outward-rounded arithmetic."""

    lo: float
    hi: float

    @property
    def mag_max(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    @property
    def mag_min(self) -> float:
        if self.lo <= 0.0 <= self.hi:
            return 0.0
        return min(abs(self.lo), abs(self.hi))


def ival(x) -> Interval:
    return Interval(float(x), float(x))


def _down(x: float) -> float:
    return float(np.nextafter(x, -np.inf))


def _up(x: float) -> float:
    return float(np.nextafter(x, np.inf))


def ival_scale(c: float, x: Interval) -> Interval:
    a, b = c * x.lo, c * x.hi
    lo, hi = (a, b) if a <= b else (b, a)
    return Interval(_down(lo), _up(hi))


def ival_add(x: Interval, y: Interval) -> Interval:
    return Interval(_down(x.lo + y.lo), _up(x.hi + y.hi))


def ival_sum(items) -> Interval:
    acc = Interval(0.0, 0.0)
    for it in items:
        acc = ival_add(acc, it)
    return acc


# ---------------------------------------------------------------------------
# affine forms — a reference error propagation used to cross-check the
# closed-form bounds on small instances


@dataclass
class AffineForm:
    """Value plus signed first-order error terms: center + sum eps_i * dev_i."""

    center: float
    deviations: dict

    def bound(self) -> float:
        """Worst-case |error| when every |eps_i| <= 1."""
        return math.fsum(abs(d) for d in self.deviations.values()) * _UP

    def radius_interval(self) -> Interval:
        r = self.bound()
        return Interval(self.center - r, self.center + r)


def affine_const(x: float) -> AffineForm:
    return AffineForm(float(x), {})


def affine_scale(c: float, x: AffineForm, model: FloatModel = DEFAULT_MODEL) -> AffineForm:
    """c * x with a fresh rounding term unless c is an exact power of two."""
    devs = {k: c * d for k, d in x.deviations.items()}
    center = c * x.center
    if not model.is_exact_scale(c):
        mag = (abs(center) + abs(c) * x.bound()) * _UP
        devs[object()] = model.op_eps * mag
    return AffineForm(center, devs)


def affine_add(x: AffineForm, y: AffineForm, model: FloatModel = DEFAULT_MODEL) -> AffineForm:
    """x + y with a fresh rounding term for the add itself."""
    devs = dict(x.deviations)
    for k, d in y.deviations.items():
        devs[k] = devs.get(k, 0.0) + d
    center = x.center + y.center
    mag = (abs(center) + x.bound() + y.bound()) * _UP
    devs[object()] = model.op_eps * mag
    return AffineForm(center, devs)


# ---------------------------------------------------------------------------
# canonical-data bounds


def check_width(width: int) -> int:
    if not 0 <= width <= PROFILED_WIDTH_MAX:
        raise UnsupportedExponentRangeError(
            f"exponent width {width} outside profiled range "
            f"0..{PROFILED_WIDTH_MAX}"
        )
    return max(width, 1)


def clamp_range(rng: ExponentRange) -> ExponentRange:
    """Restrict a scan to the top PROFILED_WIDTH_MAX binades.

    Absolute error bounds and check thresholds depend only on the magnitude
    ceiling, so raising e_min keeps them sound; points below the clamped
    window are simply outside the guaranteed population.
    """
    if rng.width == 0:
        return ExponentRange(0, 0, 1)
    w = min(rng.width, PROFILED_WIDTH_MAX)
    return ExponentRange(rng.e_max - w + 1, rng.e_max, w)


def update_noise(spec: StencilSpec, target: int, width: int,
                 model: FloatModel = DEFAULT_MODEL) -> float:
    """Absolute per-point noise of one grid update of `target`, canonical data.

    Walks the declared term order: each product charges op_eps * |c| * 2^width
    unless the coefficient is an exact power of two, and each running-sum add
    charges op_eps times the worst partial magnitude (prefix sum of |c|,
    sign-agnostic sources).
    """
    width = check_width(width)
    xbar = math.ldexp(1.0, width)
    coeffs = []
    for pair in spec.pairs_into(target):
        coeffs.extend(pair.coeffs)
    if not coeffs:
        return 0.0
    total = 0.0
    prefix = 0.0
    for j, c in enumerate(coeffs):
        if not model.is_exact_scale(c):
            total += abs(c) * xbar
        prefix += abs(c) * xbar
        if j > 0:
            total += prefix
    return total * model.op_eps * _UP


def iterated_error_bound(spec: StencilSpec, table: CoeffTable, t_steps: int,
                         target: int, width: int,
                         model: FloatModel = DEFAULT_MODEL) -> float:
    """Round-off of T plain grid updates, in ulps of unity (canonical data).

    Noise born at step k on array v reaches the step-T target through the
    (T-k)-step coefficients, so it is weighted by their absolute row sum.
    """
    if not 0 <= t_steps <= table.tmax:
        raise ValueError(f"t_steps {t_steps} outside table range 0..{table.tmax}")
    g = [update_noise(spec, v, width, model) for v in range(spec.arrays)]
    total = 0.0
    for k in range(1, t_steps + 1):
        m = t_steps - k
        for v in range(spec.arrays):
            if g[v]:
                total += g[v] * table.abs_row_sum(m, target, v)
    return total * _UP / DEFAULT_MODEL.mu


def direct_error_bound(spec: StencilSpec, table: CoeffTable, t_steps: int,
                       target: int, width: int,
                       model: FloatModel = DEFAULT_MODEL,
                       retained=None, excluded_mag: float = 0.0) -> float:
    """Round-off of one compensated dot product against the T-step row.

    `retained`, when given, maps source array -> boolean mask over that row;
    unselected coefficients contribute nothing to the product/summation terms
    but their worst-case magnitude must then be accounted via `excluded_mag`
    (absolute, canonical units) by the caller that chose the exclusion.
    Returns ulps of unity.
    """
    width = check_width(width)
    xbar = math.ldexp(1.0, width)
    coeff_round = 0.0   # |dd tail| of every retained coefficient
    product_round = 0.0  # rounding of non-power-of-two products
    abs_sum = 0.0       # sum |c| over retained terms, for the Kahan residual
    n_terms = 0
    for v in range(spec.arrays):
        r = table.row(t_steps, target, v)
        if r is None:
            continue
        hi, lo = r
        if retained is not None:
            mask = retained.get(v)
            if mask is None:
                continue
            hi, lo = hi[mask], lo[mask]
        live = (hi != 0) | (lo != 0)
        hi, lo = hi[live], lo[live]
        n_terms += hi.size
        coeff_round += float(np.sum(np.abs(lo)))
        abs_sum += float(np.sum(np.abs(hi)))
        if model.exact_pow2:
            fr, _ = np.frexp(hi)
            inexact = np.abs(fr) != 0.5
            product_round += float(np.sum(np.abs(hi[inexact])))
        else:
            product_round += float(np.sum(np.abs(hi)))
    total = (coeff_round + model.op_eps * product_round) * xbar
    if n_terms > 1:
        total += 2.0 * model.mu * abs_sum * xbar
    total += excluded_mag
    return total * _UP / DEFAULT_MODEL.mu


def detector_precision(rs_ulp: float, rd_ulp: float,
                       model: FloatModel = DEFAULT_MODEL) -> int:
    """Significand bits both routes agree on: p - ceil(log2 max(Rs, Rd)).

    Bounds are in ulps of unity; a zero bound means exact agreement (full
    precision) and the result is clamped to [0, p].
    """
    worst = max(rs_ulp, rd_ulp)
    if worst <= 0.0:
        return model.precision
    dp = model.precision - ceil_log2(worst)
    return max(0, min(model.precision, dp))


@dataclass(frozen=True)
class ErrorEstimate:
    """Both bounds and the agreement precision for one (T, target, width)."""

    t_steps: int
    target: int
    width: int
    rs_ulp: float
    rd_ulp: float
    dp: int


def error_estimate(spec: StencilSpec, table: CoeffTable, t_steps: int,
                   target: int, width: int,
                   model: FloatModel = DEFAULT_MODEL,
                   retained=None, excluded_mag: float = 0.0) -> ErrorEstimate:
    rs = iterated_error_bound(spec, table, t_steps, target, width, model)
    rd = direct_error_bound(spec, table, t_steps, target, width, model,
                            retained, excluded_mag)
    return ErrorEstimate(t_steps, target, width, rs, rd,
                         detector_precision(rs, rd, model))
