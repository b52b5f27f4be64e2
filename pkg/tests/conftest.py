"""Shared fixtures: small stencil problems reused across the suite."""

import numpy as np
import pytest

from fpdetect import (
    BoundaryCondition,
    CouplingPair,
    DIRICHLET_FIXED,
    GridState,
    StencilSpec,
    unroll_coefficients,
)


def heat1d_spec(n=65, boundary_value=0.0):
    """Plain 1-d heat smoother (0.25, 0.5, 0.25) with fixed ends."""
    bv = float(boundary_value)
    bc = BoundaryCondition(
        DIRICHLET_FIXED,
        lambda v, pt, t: bv,
        lambda v, coords, t: np.full(coords[0].shape, bv),
    )
    return StencilSpec(
        1, 1, (0,), (n - 1,),
        (CouplingPair(0, 0, ((-1,), (0,), (1,)), (0.25, 0.5, 0.25)),),
        bc,
    )


def impulse_state(spec, mid=None, height=1.0):
    n = spec.shape()[0]
    u = np.zeros(n)
    if mid is None:
        mid = n // 2
    u[mid] = height
    return GridState([u], 0), mid


@pytest.fixture
def heat1d():
    return heat1d_spec()


@pytest.fixture
def heat1d_table(heat1d):
    return unroll_coefficients(heat1d, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)
