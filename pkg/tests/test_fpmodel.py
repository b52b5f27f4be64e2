"""Round-off bounds: hand-evaluated anchors, a shadow-execution oracle for
soundness, and monotonicity properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpdetect import (
    DEFAULT_MODEL,
    GridState,
    PROFILED_WIDTH_MAX,
    FloatModel,
    clamp_range,
    detector_precision,
    direct_error_bound,
    error_estimate,
    iterated_error_bound,
    run_iterated,
    unroll_coefficients,
)
from fpdetect.errors import UnsupportedExponentRangeError
from fpdetect.fpmodel import (
    AffineForm,
    Interval,
    affine_add,
    affine_const,
    affine_scale,
    binade_exp,
    ceil_log2,
    check_width,
    ival_add,
    ival_scale,
)
from fpdetect.stencil import ExponentRange

from conftest import heat1d_spec


# ---------------------------------------------------------------------------
# model constants and small helpers


def test_model_units():
    m = FloatModel()
    assert m.precision == 53
    assert m.u == 2.0**-53
    assert m.mu == 2.0**-52
    assert m.mu == 2 * m.u


def test_op_eps_unit_knob():
    assert FloatModel(unit="mu").op_eps == 2.0**-52
    assert FloatModel(unit="u").op_eps == 2.0**-53
    with pytest.raises(ValueError):
        FloatModel(unit="ulps").op_eps


def test_exact_pow2_detection():
    m = FloatModel()
    for c in (1.0, 2.0, 0.5, 0.25, -4.0, 2.0**-30):
        assert m.is_exact_scale(c)
    for c in (0.75, 0.1, 3.0, 0.0):
        assert not m.is_exact_scale(c)
    assert not FloatModel(exact_pow2=False).is_exact_scale(0.5)


def test_binade_exp():
    assert binade_exp(1.0) == 0
    assert binade_exp(1.9999) == 0
    assert binade_exp(2.0) == 1
    assert binade_exp(-0.75) == -1
    assert binade_exp(0.0) == float("-inf")


def test_ceil_log2():
    assert ceil_log2(1.0) == 0
    assert ceil_log2(2.0) == 1
    assert ceil_log2(3.0) == 2
    assert ceil_log2(0.5) == -1
    assert ceil_log2(2.0**-8) == -8
    assert ceil_log2(2.0**-8 * 1.0001) == -7
    with pytest.raises(ValueError):
        ceil_log2(0.0)


def test_interval_magnitudes():
    assert Interval(-2.0, 3.0).mag_max == 3.0
    assert Interval(-2.0, 3.0).mag_min == 0.0  # straddles zero
    assert Interval(1.0, 2.0).mag_min == 1.0
    assert Interval(-4.0, -1.0).mag_min == 1.0


def test_interval_ops_are_outward():
    x = Interval(1.0, 2.0)
    s = ival_add(x, x)
    assert s.lo < 2.0 < 4.0 < s.hi
    sc = ival_scale(-1.0, x)
    assert sc.lo <= -2.0 and sc.hi >= -1.0


# ---------------------------------------------------------------------------
# canonical width handling


def test_check_width_bounds():
    assert check_width(0) == 1  # all-zero scan is treated as one binade
    assert check_width(1) == 1
    assert check_width(20) == 20
    with pytest.raises(UnsupportedExponentRangeError):
        check_width(21)
    with pytest.raises(UnsupportedExponentRangeError):
        check_width(-1)


def test_clamp_range_keeps_narrow_scans():
    r = ExponentRange(3, 10, 8)
    assert clamp_range(r) == r


def test_clamp_range_raises_floor_of_wide_scans():
    r = ExponentRange(-40, 2, 43)
    c = clamp_range(r)
    assert c.e_max == 2
    assert c.width == PROFILED_WIDTH_MAX
    assert c.e_min == 2 - PROFILED_WIDTH_MAX + 1


# ---------------------------------------------------------------------------
# affine forms (the cross-check propagation)


def test_affine_scale_identity_still_rounds():
    x = AffineForm(1.0, {"e1": 1e-16})
    y = affine_scale(1.0, x, FloatModel(exact_pow2=False))
    assert y.deviations["e1"] == 1e-16
    fresh = [d for k, d in y.deviations.items() if k != "e1"]
    assert len(fresh) == 1
    assert fresh[0] == pytest.approx(2.0**-52, rel=1e-10)


def test_affine_scale_by_zero():
    x = AffineForm(3.0, {"e1": 1e-15})
    y = affine_scale(0.0, x)
    assert y.center == 0.0
    assert all(d == 0.0 for d in y.deviations.values())


def test_affine_scale_quarter_charges_quarter_ulp():
    # conservative model: even the exact 0.25 * 1.0 product carries mu|c x|
    y = affine_scale(0.25, affine_const(1.0), FloatModel(exact_pow2=False))
    assert len(y.deviations) == 1
    (dev,) = y.deviations.values()
    assert dev == pytest.approx(0.25 * 2.0**-52, rel=1e-10)


def test_affine_scale_pow2_is_free_by_default():
    y = affine_scale(0.25, affine_const(1.0))
    assert y.deviations == {}


def test_affine_add_cancellation():
    # x - x: shared deviations cancel exactly instead of doubling
    x = AffineForm(1.0, {"a": 3e-16, "b": -1e-16})
    neg = AffineForm(-1.0, {"a": -3e-16, "b": 1e-16})
    s = affine_add(x, neg)
    assert s.center == 0.0
    assert s.deviations["a"] == 0.0
    assert s.deviations["b"] == 0.0


def test_affine_add_zero_operand():
    x = AffineForm(2.0, {"a": 1e-16})
    s = affine_add(x, affine_const(0.0))
    assert s.center == 2.0
    assert s.deviations["a"] == 1e-16
    fresh = [d for k, d in s.deviations.items() if k != "a"]
    assert len(fresh) == 1
    assert fresh[0] == pytest.approx(abs(x.center) * 2.0**-52, rel=1e-9)


def test_affine_add_independent_terms():
    x = AffineForm(1.0, {"a": 1e-16})
    y = AffineForm(1.0, {"b": 2e-16})
    s = affine_add(x, y)
    assert len(s.deviations) == 3  # a, b, and the fresh rounding term
    assert s.bound() == pytest.approx(1e-16 + 2e-16 + 2 * 2.0**-52, rel=1e-9)


# ---------------------------------------------------------------------------
# detector precision


def test_dp_exact_agreement_is_full_precision():
    assert detector_precision(0.0, 0.0) == 53


def test_dp_from_256_ulp_bound():
    assert detector_precision(2.0**8, 0.0) == 45
    assert detector_precision(0.0, 2.0**8) == 45


def test_dp_one_and_two_ulp():
    assert detector_precision(1.0, 1.0) == 53
    assert detector_precision(2.0, 1.0) == 52


def test_dp_clamped_to_zero():
    assert detector_precision(2.0**80, 0.0) == 0


def test_dp_uses_the_worse_route():
    assert detector_precision(2.0**8, 2.0**3) == 45
    assert detector_precision(2.0**3, 2.0**8) == 45


# ---------------------------------------------------------------------------
# bound anchors on the 1-d heat kernel


def test_t0_bounds_are_zero(heat1d, heat1d_table):
    est = error_estimate(heat1d, heat1d_table, 0, 0, 1)
    assert est.rs_ulp == 0.0
    assert est.dp == 53


def test_heat_t64_width1_dp_anchor():
    spec = heat1d_spec(257)
    table = unroll_coefficients(spec, 64)
    est = error_estimate(spec, table, 64, 0, 1)
    assert 42 <= est.dp <= 48
    assert est.rd_ulp < est.rs_ulp  # compensated direct route is tighter


def test_single_point_copy_has_zero_direct_error(heat1d):
    # a T=0 "row" is the identity: direct evaluation copies one value
    table = unroll_coefficients(heat1d, 2)
    assert direct_error_bound(heat1d, table, 0, 0, 1) == 0.0


def test_rs_monotone_in_t(heat1d, heat1d_table):
    prev = -1.0
    for t in range(0, 9):
        rs = iterated_error_bound(heat1d, heat1d_table, t, 0, 1)
        assert rs >= prev
        prev = rs


def test_rs_monotone_in_width(heat1d, heat1d_table):
    prev = -1.0
    for w in range(1, 21):
        rs = iterated_error_bound(heat1d, heat1d_table, 4, 0, w)
        assert rs >= prev
        prev = rs


def test_t_out_of_table_range_rejected(heat1d, heat1d_table):
    with pytest.raises(ValueError):
        iterated_error_bound(heat1d, heat1d_table, 9, 0, 1)


@given(
    t=st.integers(min_value=0, max_value=8),
    w1=st.integers(min_value=1, max_value=20),
    w2=st.integers(min_value=1, max_value=20),
)
@settings(max_examples=40, deadline=None)
def test_dp_never_improves_with_wider_data(t, w1, w2):
    spec = heat1d_spec()
    table = unroll_coefficients(spec, 8)
    lo, hi = sorted((w1, w2))
    assert (error_estimate(spec, table, t, 0, lo).dp
            >= error_estimate(spec, table, t, 0, hi).dp)


# ---------------------------------------------------------------------------
# soundness: the certified bound dominates observed shadow-execution error


def shadow_run(spec, u0, steps):
    """Re-run the smoother in float128 as an error oracle."""
    w = np.asarray(u0, dtype=np.longdouble)
    coeffs = [(off[0], np.longdouble(c))
              for p in spec.pairs for off, c in zip(p.offsets, p.coeffs)]
    for _ in range(steps):
        nxt = w.copy()
        acc = np.zeros_like(w[1:-1])
        for off, c in coeffs:
            acc += c * w[1 + off:len(w) - 1 + off]
        nxt[1:-1] = acc
        w = nxt
    return w


@pytest.mark.parametrize("t_steps", [1, 3, 8])
def test_rs_dominates_observed_error(t_steps, rng):
    spec = heat1d_spec(65)
    table = unroll_coefficients(spec, 8)
    rs_abs = iterated_error_bound(spec, table, t_steps, 0, 1) * DEFAULT_MODEL.mu
    worst = 0.0
    for _ in range(200):
        u0 = rng.uniform(1.0, 2.0, size=65)  # one binade, canonical scale
        u0[0] = u0[-1] = 1.0
        spec_fixed = heat1d_spec(65, boundary_value=1.0)
        state = GridState([u0.copy()], 0)
        got = run_iterated(spec_fixed, state, t_steps).arrays[0]
        ref = shadow_run(spec_fixed, u0, t_steps)
        err = float(np.max(np.abs(got.astype(np.longdouble) - ref)))
        worst = max(worst, err)
    assert worst <= rs_abs
    # and the bound is not absurdly loose: within a few orders of magnitude
    assert rs_abs < worst * 1e4 or worst == 0.0


def test_rd_dominates_observed_dot_error(rng):
    from fpdetect import kahan_dot

    spec = heat1d_spec(257)
    table = unroll_coefficients(spec, 64)
    rd_abs = direct_error_bound(spec, table, 64, 0, 1) * DEFAULT_MODEL.mu
    hi, lo = table.row(64, 0, 0)
    worst = 0.0
    for _ in range(300):
        vals = rng.uniform(1.0, 2.0, size=hi.size)
        got = kahan_dot(hi.tolist(), vals.tolist())
        ref = float(
            np.sum((hi.astype(np.longdouble) + lo.astype(np.longdouble))
                   * vals.astype(np.longdouble))
        )
        worst = max(worst, abs(got - ref))
    assert worst <= rd_abs


def test_estimate_bundles_both_routes(heat1d, heat1d_table):
    est = error_estimate(heat1d, heat1d_table, 8, 0, 3)
    assert est.t_steps == 8 and est.width == 3
    assert est.dp == detector_precision(est.rs_ulp, est.rd_ulp)
    assert math.isfinite(est.rs_ulp) and est.rs_ulp > 0
