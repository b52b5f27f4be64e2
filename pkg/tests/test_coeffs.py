"""Coefficient unrolling against an exact rational oracle, plus table I/O."""

import math
from fractions import Fraction

import numpy as np
import pytest

from fpdetect import (
    BoundaryCondition,
    CouplingPair,
    DIRICHLET_FIXED,
    StencilSpec,
    coeff_checksum,
    load_table,
    row_sum,
    save_table,
    unroll_coefficients,
)
from fpdetect.errors import (
    FormatVersionMismatchError,
    SpecHashMismatchError,
    TableIOError,
)

from conftest import heat1d_spec


# ---------------------------------------------------------------------------
# oracle: unroll the same recurrence in exact rational arithmetic


def exact_unroll_1d(taps, tmax):
    """taps: {offset: Fraction}.  Returns list of {offset: Fraction} rows."""
    rows = [{0: Fraction(1)}]
    for _ in range(tmax):
        new = {}
        for off, c in taps.items():
            for o_prev, c_prev in rows[-1].items():
                key = off + o_prev
                new[key] = new.get(key, Fraction(0)) + c * c_prev
        rows.append(new)
    return rows


def exact_unroll_multi(pairs, n_arrays, tmax):
    """Multi-array version over {(u, v): {offset: Fraction}} step kernels."""
    step = {}
    for (u, v, off, c) in pairs:
        step.setdefault((u, v), {})[off] = (
            step.get((u, v), {}).get(off, Fraction(0)) + c
        )
    rows = [{(u, u): {0: Fraction(1)} for u in range(n_arrays)}]
    for _ in range(tmax):
        new = {}
        for (u, m), taps in step.items():
            for v in range(n_arrays):
                prev = rows[-1].get((m, v))
                if not prev:
                    continue
                acc = new.setdefault((u, v), {})
                for off, c in taps.items():
                    for o_prev, c_prev in prev.items():
                        key = off + o_prev
                        acc[key] = acc.get(key, Fraction(0)) + c * c_prev
        rows.append(new)
    return rows


def damped_spec(n=33):
    """1-d kernel with signed sum 0.99: (0.2475, 0.495, 0.2475)."""
    bc = BoundaryCondition(DIRICHLET_FIXED, lambda v, pt, t: 0.0)
    return StencilSpec(
        1, 1, (0,), (n - 1,),
        (CouplingPair(0, 0, ((-1,), (0,), (1,)), (0.2475, 0.495, 0.2475)),),
        bc,
    )


# ---------------------------------------------------------------------------
# unrolling


def test_step1_row_is_the_kernel(heat1d_table):
    hi = heat1d_table.row_double(1, 0, 0)
    assert hi.tolist() == [0.25, 0.5, 0.25]
    # tails are zero: 2^-2 coefficients are exact doubles
    assert not np.any(heat1d_table.row(1, 0, 0)[1])


def test_step2_row_frozen_values(heat1d_table):
    expected = [0.0625, 0.25, 0.375, 0.25, 0.0625]
    assert heat1d_table.row_double(2, 0, 0).tolist() == expected


def test_step3_row_frozen_values(heat1d_table):
    expected = [0.015625, 0.09375, 0.234375, 0.3125, 0.234375, 0.09375,
                0.015625]
    assert heat1d_table.row_double(3, 0, 0).tolist() == expected


def test_identity_row_at_step0(heat1d_table):
    hi, lo = heat1d_table.row(0, 0, 0)
    assert hi.shape == (1,) and hi[0] == 1.0 and lo[0] == 0.0


def test_unroll_matches_rational_oracle_heat(heat1d):
    tmax = 8
    table = unroll_coefficients(heat1d, tmax)
    taps = {-1: Fraction(1, 4), 0: Fraction(1, 2), 1: Fraction(1, 4)}
    oracle = exact_unroll_1d(taps, tmax)
    for k in range(1, tmax + 1):
        hi, lo = table.row(k, 0, 0)
        for j in range(hi.size):
            off = j - k
            want = oracle[k].get(off, Fraction(0))
            # dyadic coefficients at these depths fit a double-double exactly
            got = Fraction(hi[j]) + Fraction(lo[j])
            assert got == want, (k, off)


def test_unroll_matches_rational_oracle_inexact_taps():
    # 0.2475 is not dyadic, so the oracle must run on the rounded doubles
    spec = damped_spec()
    tmax = 6
    table = unroll_coefficients(spec, tmax)
    c_side = Fraction(0.2475)   # Fraction(double) is exact
    c_mid = Fraction(0.495)
    oracle = exact_unroll_1d({-1: c_side, 0: c_mid, 1: c_side}, tmax)
    for k in range(1, tmax + 1):
        hi, lo = table.row(k, 0, 0)
        for j in range(hi.size):
            want = oracle[k].get(j - k, Fraction(0))
            got = Fraction(hi[j]) + Fraction(lo[j])
            if want == 0:
                assert got == 0
                continue
            rel = abs((got - want) / want)
            assert rel < Fraction(1, 2**100), (k, j - k)


def test_unroll_two_array_coupling():
    # u <- 0.5 u + 0.5 v, v <- v: u accumulates a geometric share of v
    bc = BoundaryCondition(DIRICHLET_FIXED, lambda v, pt, t: 0.0)
    spec = StencilSpec(
        1, 2, (0,), (16,),
        (
            CouplingPair(0, 0, ((0,),), (0.5,)),
            CouplingPair(0, 1, ((0,),), (0.5,)),
            CouplingPair(1, 1, ((0,),), (1.0,)),
        ),
        bc,
    )
    tmax = 5
    table = unroll_coefficients(spec, tmax)
    pairs = [
        (0, 0, 0, Fraction(1, 2)),
        (0, 1, 0, Fraction(1, 2)),
        (1, 1, 0, Fraction(1)),
    ]
    oracle = exact_unroll_multi(pairs, 2, tmax)
    for k in range(1, tmax + 1):
        for (u, v), taps in oracle[k].items():
            hi, lo = table.row(k, u, v)
            got = Fraction(hi[0]) + Fraction(lo[0])
            assert got == taps[0], (k, u, v)
        # the (1, 0) row never exists
        assert table.row(k, 1, 0) is None


def test_support_extent_grows_linearly(heat1d_table):
    for k in range(9):
        assert heat1d_table.row_double(k, 0, 0).shape == (2 * k + 1,)


def test_rows_are_symmetric(heat1d_table):
    for k in range(1, 9):
        hi = heat1d_table.row_double(k, 0, 0)
        assert hi.tolist() == hi[::-1].tolist()


def test_row_sum_stays_at_one_for_convex_kernel(heat1d_table):
    for k in range(1, 9):
        assert abs(row_sum(heat1d_table, k) - 1.0) < 2.0**-100


def test_row_sum_single_step_is_kernel_sum():
    table = unroll_coefficients(damped_spec(), 1)
    assert row_sum(table, 1) == pytest.approx(0.2475 + 0.495 + 0.2475, abs=0)


def test_row_sum_decays_geometrically_for_damped_kernel():
    tmax = 10
    table = unroll_coefficients(damped_spec(), tmax)
    # scalar recurrence oracle: the row sum obeys sum(k) = s1 * sum(k-1)
    want = Fraction(1)
    s1_exact = Fraction(0.2475) * 2 + Fraction(0.495)
    for k in range(1, tmax + 1):
        want *= s1_exact
        assert row_sum(table, k) == pytest.approx(float(want), rel=1e-14)
    assert row_sum(table, tmax) < 0.99**9  # visibly below 1


def test_negative_step_count_rejected(heat1d):
    with pytest.raises(ValueError):
        unroll_coefficients(heat1d, -1)


# ---------------------------------------------------------------------------
# persistence


def test_save_load_round_trip_bit_exact(tmp_path, heat1d, heat1d_table):
    path = tmp_path / "heat.fpdc"
    save_table(heat1d_table, path)
    back = load_table(path, heat1d)
    assert back.spec_hash == heat1d_table.spec_hash
    assert back.tmax == heat1d_table.tmax
    assert back.reach == heat1d_table.reach
    for k in range(heat1d_table.tmax + 1):
        for key, (hi, lo) in heat1d_table.rows[k].items():
            bh, bl = back.rows[k][key]
            assert hi.tobytes() == bh.tobytes()
            assert lo.tobytes() == bl.tobytes()
    assert coeff_checksum(back) == coeff_checksum(heat1d_table)


def test_truncated_file_never_yields_a_table(tmp_path, heat1d_table):
    path = tmp_path / "heat.fpdc"
    save_table(heat1d_table, path)
    blob = path.read_bytes()
    clipped = tmp_path / "clip.fpdc"
    clipped.write_bytes(blob[: len(blob) - 37])
    with pytest.raises(TableIOError):
        load_table(clipped)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.fpdc"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(TableIOError):
        load_table(path)


def test_format_version_mismatch(tmp_path, heat1d_table):
    path = tmp_path / "heat.fpdc"
    save_table(heat1d_table, path)
    blob = bytearray(path.read_bytes())
    blob[4] = 99  # bump the little-endian version field
    futur = tmp_path / "future.fpdc"
    futur.write_bytes(bytes(blob))
    with pytest.raises(FormatVersionMismatchError):
        load_table(futur)


def test_spec_hash_mismatch_on_load(tmp_path, heat1d_table):
    path = tmp_path / "heat.fpdc"
    save_table(heat1d_table, path)
    other = damped_spec()
    with pytest.raises(SpecHashMismatchError):
        load_table(path, other)


def test_load_without_spec_skips_hash_check(tmp_path, heat1d_table):
    path = tmp_path / "heat.fpdc"
    save_table(heat1d_table, path)
    assert load_table(path).tmax == heat1d_table.tmax


def test_checksum_sensitive_to_any_coefficient(tmp_path, heat1d):
    t1 = unroll_coefficients(heat1d, 4)
    t2 = unroll_coefficients(heat1d, 4)
    assert coeff_checksum(t1) == coeff_checksum(t2)
    t2.rows[3][(0, 0)][0][1] = math.nextafter(t2.rows[3][(0, 0)][0][1], 1.0)
    assert coeff_checksum(t1) != coeff_checksum(t2)
