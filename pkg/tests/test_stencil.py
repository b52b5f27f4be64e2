"""Grid stepping against a scalar reference loop, plus scan and validation."""

import json

import numpy as np
import pytest

from fpdetect import (
    BoundaryCondition,
    CouplingPair,
    DIRICHLET_FIXED,
    GridState,
    InvalidSpecError,
    StencilSpec,
    build_benchmark,
    run_iterated,
    scan_exponent_range,
    spec_from_json,
    step_iterated,
    unroll_coefficients,
)

from conftest import heat1d_spec, impulse_state


# ---------------------------------------------------------------------------
# reference implementation: same declared term order, scalar loops


def naive_step(spec, arrays, step):
    """One update written as plain Python loops; bit-compatible with the
    vectorized path because the per-point fold order is identical."""
    shape = spec.shape()
    out = [a.copy() for a in arrays]
    interior = [range(1, s - 1) for s in shape]
    import itertools

    for u in range(spec.arrays):
        for idx in itertools.product(*interior):
            acc = None
            for p in spec.pairs_into(u):
                for off, c in zip(p.offsets, p.coeffs):
                    src = arrays[p.from_array][
                        tuple(i + o for i, o in zip(idx, off))
                    ]
                    term = c * src
                    acc = term if acc is None else acc + term
            out[u][idx] = acc
    # boundary refresh at the new time
    bc = spec.boundary
    mask = np.zeros(shape, dtype=bool)
    for d in range(spec.dims):
        sl = [slice(None)] * spec.dims
        sl[d] = 0
        mask[tuple(sl)] = True
        sl[d] = shape[d] - 1
        mask[tuple(sl)] = True
    coords = np.nonzero(mask)
    for u in range(spec.arrays):
        if bc.vector_fn is not None:
            out[u][coords] = bc.vector_fn(u, coords, step + 1)
        else:
            for pt in zip(*coords):
                out[u][pt] = bc.value_fn(u, pt, step + 1)
    return out


def test_h1_single_step_matches_reference_bitexact():
    spec, state = build_benchmark("h1", 64)
    ref = naive_step(spec, [a.copy() for a in state.arrays], 0)
    step_iterated(spec, state)
    for got, want in zip(state.arrays, ref):
        assert np.array_equal(got, want)


def test_wave1d_two_array_step_matches_reference_bitexact():
    spec, state = build_benchmark("wave1d", 129)
    arrays = [a.copy() for a in state.arrays]
    for t in range(3):
        arrays = naive_step(spec, arrays, t)
    run_iterated(spec, state, 3)
    for got, want in zip(state.arrays, arrays):
        assert np.array_equal(got, want)


# ---------------------------------------------------------------------------
# closed-form single steps


def test_all_ones_is_a_fixed_point():
    spec = heat1d_spec(33, boundary_value=1.0)
    state = GridState([np.ones(33)], 0)
    run_iterated(spec, state, 5)
    assert np.array_equal(state.arrays[0], np.ones(33))


def test_impulse_becomes_the_kernel(heat1d):
    state, mid = impulse_state(heat1d)
    step_iterated(heat1d, state)
    u = state.arrays[0]
    assert u[mid - 1] == 0.25 and u[mid] == 0.5 and u[mid + 1] == 0.25
    assert np.count_nonzero(u) == 3


def test_impulse_after_two_steps(heat1d):
    state, mid = impulse_state(heat1d)
    run_iterated(heat1d, state, 2)
    got = state.arrays[0][mid - 2: mid + 3].tolist()
    assert got == [0.0625, 0.25, 0.375, 0.25, 0.0625]


def test_zero_steps_is_identity(heat1d, rng):
    u0 = rng.standard_normal(65)
    state = GridState([u0.copy()], 0)
    run_iterated(heat1d, state, 0)
    assert np.array_equal(state.arrays[0], u0)
    assert state.step == 0


def test_step_counter_advances(heat1d):
    state, _ = impulse_state(heat1d)
    run_iterated(heat1d, state, 7)
    assert state.step == 7


# ---------------------------------------------------------------------------
# linearity and the impulse-response bridge to the coefficient table


def ulps_apart(a, b):
    spacing = np.spacing(np.maximum(np.abs(a), np.abs(b)))
    spacing[spacing == 0] = np.finfo(float).tiny
    return np.abs(a - b) / spacing


def test_linearity_within_4_ulp(rng):
    spec = heat1d_spec(33)
    x = rng.uniform(-1, 1, 33)
    y = rng.uniform(-1, 1, 33)
    a, b = 0.375, -1.25
    sx = GridState([x.copy()], 0)
    sy = GridState([y.copy()], 0)
    sxy = GridState([a * x + b * y], 0)
    run_iterated(spec, sx, 4)
    run_iterated(spec, sy, 4)
    run_iterated(spec, sxy, 4)
    combo = a * sx.arrays[0] + b * sy.arrays[0]
    assert np.max(ulps_apart(combo, sxy.arrays[0])) <= 4.0


@pytest.mark.parametrize("t_steps", [1, 2, 4, 8])
def test_impulse_response_equals_coefficient_row(t_steps):
    spec = heat1d_spec(65)
    table = unroll_coefficients(spec, 8)
    state, mid = impulse_state(spec)
    run_iterated(spec, state, t_steps)
    row = table.row_double(t_steps, 0, 0)
    got = state.arrays[0][mid - t_steps: mid + t_steps + 1]
    assert np.max(ulps_apart(got, row)) <= 4.0


def test_impulse_response_randomized_height(rng):
    spec = heat1d_spec(65)
    table = unroll_coefficients(spec, 8)
    for _ in range(10):
        h = float(rng.uniform(0.5, 4.0))
        state, mid = impulse_state(spec, height=h)
        run_iterated(spec, state, 6)
        row = table.row_double(6, 0, 0) * h
        got = state.arrays[0][mid - 6: mid + 7]
        assert np.max(ulps_apart(got, row)) <= 4.0


def test_conservation_under_constant_dirichlet():
    spec = heat1d_spec(41, boundary_value=2.5)
    state = GridState([np.full(41, 2.5)], 0)
    run_iterated(spec, state, 50)
    assert np.array_equal(state.arrays[0], np.full(41, 2.5))


# ---------------------------------------------------------------------------
# exponent scan


def test_scan_single_binade():
    state = GridState([np.array([1.0, 1.5, 1.9999])], 0)
    assert scan_exponent_range(state).width == 1


def test_scan_worked_example():
    # magnitudes from 1.5*2^3 up to 1.25*2^10: binades 3..10 -> width 8
    state = GridState([np.array([1.5 * 2.0**3, 1.25 * 2.0**10, -40.0])], 0)
    r = scan_exponent_range(state)
    assert (r.e_min, r.e_max, r.width) == (3, 10, 8)


def test_scan_ignores_zeros():
    state = GridState([np.array([0.0, 0.0, 4.0])], 0)
    r = scan_exponent_range(state)
    assert (r.e_min, r.e_max, r.width) == (2, 2, 1)


def test_scan_all_zero_reports_width0():
    state = GridState([np.zeros(8)], 0)
    assert scan_exponent_range(state).width == 0


def test_scan_spans_all_arrays():
    state = GridState([np.array([1.0]), np.array([0.125])], 0)
    r = scan_exponent_range(state)
    assert (r.e_min, r.e_max, r.width) == (-3, 0, 4)


def test_h1_initial_data_scan_is_profiled():
    spec, state = build_benchmark("h1", 128)
    r = scan_exponent_range(state)
    assert 1 <= r.width <= 20


# ---------------------------------------------------------------------------
# validation and serialization


def test_mismatched_offsets_coeffs_rejected():
    with pytest.raises(InvalidSpecError):
        CouplingPair(0, 0, ((-1,), (0,)), (0.5,))


def test_unknown_boundary_kind_rejected():
    with pytest.raises(InvalidSpecError):
        BoundaryCondition("Robin", lambda v, pt, t: 0.0)


def test_bad_array_index_rejected():
    bc = BoundaryCondition(DIRICHLET_FIXED, lambda v, pt, t: 0.0)
    with pytest.raises(InvalidSpecError):
        StencilSpec(
            1, 1, (0,), (8,),
            (CouplingPair(0, 3, ((0,),), (1.0,)),),  # source array 3 of 1
            bc,
        )


def test_unstable_kernel_rejected():
    bc = BoundaryCondition(DIRICHLET_FIXED, lambda v, pt, t: 0.0)
    with pytest.raises(InvalidSpecError):
        StencilSpec(
            1, 1, (0,), (8,),
            (CouplingPair(0, 0, ((-1,), (0,), (1,)), (0.5, 0.5, 0.5)),),
            bc,
        )


def test_negative_coefficient_on_state_rejected():
    bc = BoundaryCondition(DIRICHLET_FIXED, lambda v, pt, t: 0.0)
    with pytest.raises(InvalidSpecError):
        StencilSpec(
            1, 1, (0,), (8,),
            (CouplingPair(0, 0, ((-1,), (0,), (1,)), (-0.25, 0.5, 0.25)),),
            bc,
        )


def test_spec_json_round_trip(heat1d):
    doc = heat1d.to_json()
    again = spec_from_json(json.loads(json.dumps(doc)),
                           boundary=heat1d.boundary)
    assert again.spec_hash() == heat1d.spec_hash()
    assert again.shape() == heat1d.shape()
    assert again.reach() == heat1d.reach()


def test_spec_hash_tracks_structure(heat1d):
    other = heat1d_spec(n=66)
    assert heat1d.spec_hash() != other.spec_hash()


def test_reach_accounts_for_every_pair():
    bc = BoundaryCondition(DIRICHLET_FIXED, lambda v, pt, t: 0.0)
    spec = StencilSpec(
        2, 2, (0, 0), (16, 16),
        (
            CouplingPair(0, 0, ((0, 0),), (0.5,)),
            CouplingPair(0, 1, ((-2, 0), (0, 1)), (0.25, 0.25)),
            CouplingPair(1, 1, ((0, 0),), (1.0,)),
        ),
        bc,
    )
    assert spec.reach() == (2, 1)
    assert spec.shape() == (17, 17)
