"""Built-in benchmark problems.

Twenty-four 2-d problems across four PDE families (explicit heat,
Jacobi-iterated Poisson, leapfrog second-order wave, explicit
convection-diffusion), plus 1-d analogs used by the small exhaustive
tests.  All live on the unit square with Dirichlet or ghost-point
Neumann boundaries; initial and boundary data come from the stated
closed forms.  Time steps take the largest stable value times a 0.9
safety factor.

Problems with a source term carry it as an extra identity-updated array
holding the *negated* source, coupled with a negative coefficient, so
the signed per-target coefficient sum stays below one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidSpecError, UnknownBenchmarkError
from .stencil import (
    DIRICHLET_FIXED,
    DIRICHLET_TIME,
    NEUMANN,
    BoundaryCondition,
    CouplingPair,
    GridState,
    StencilSpec,
)

ALPHA = 3.0
ZETA = 1.2


@dataclass(frozen=True)
class BenchmarkDef:
    bench_id: str
    family: str
    dims: int
    build: Callable  # (grid_n) -> (StencilSpec, GridState)
    note: str = ""


def _grid(n):
    if n < 8:
        raise InvalidSpecError("benchmarks need gridN >= 8")
    h = 1.0 / (n - 1)
    x = np.arange(n) * h
    return h, x


def _mesh(n):
    h, x = _grid(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return h, X, Y


def _five_point(u, center, side_x, side_y=None):
    """Offsets/coeffs for the 2-d 5-point star in a fixed declared order:
    W, S, C, N, E (x-low, y-low, center, y-high, x-high)."""
    if side_y is None:
        side_y = side_x
    wx, ex = side_x
    sy, ny = side_y
    offsets = ((-1, 0), (0, -1), (0, 0), (0, 1), (1, 0))
    coeffs = (wx, sy, center, ny, ex)
    return CouplingPair(u, u, offsets, coeffs)


def _box_state(*arrays):
    return GridState([np.ascontiguousarray(a, dtype=np.float64) for a in arrays])


# ---------------------------------------------------------------------------
# heat family


def _heat_exact(which):
    if which in ("h1", "h2"):
        return lambda X, Y, t: 1.0 + X * X + ALPHA * Y * Y + ZETA * t
    if which == "h3":
        return lambda X, Y, t: 1.0 + X * X + ALPHA * Y * Y + ZETA * t * t
    if which == "h4":
        # the +2 background (itself a heat solution) keeps the field away
        # from the sine's zero at the far corner
        return lambda X, Y, t: 2.0 + np.exp(-np.pi**2 * t / 2) * np.sin(np.pi * (X + Y) / 2)
    if which == "h5":
        return lambda X, Y, t: 4.0 + np.exp(-np.pi**2 * t / 2) * np.cos(np.pi * (X + Y) / 2)
    return lambda X, Y, t: 2.0 + np.exp(-np.pi**2 * t / 2) * (
        np.sin(np.pi * (X + Y) / 2) + np.cos(np.pi * (X + Y) / 2)
    )


def _build_heat_dirichlet(which, f_const):
    def build(n):
        h, X, Y = _mesh(n)
        dt = 0.9 * h * h / 4.0
        k = dt / (h * h)  # = 0.225
        exact = _heat_exact(which)
        u0 = exact(X, Y, 0.0)
        pairs = [_five_point(0, 1.0 - 4.0 * k, (k, k))]
        arrays = [u0]
        if f_const != 0.0:
            # u' += dt * f  ==  (-dt) * (-f)
            pairs.append(CouplingPair(0, 1, ((0, 0),), (-dt,)))
            pairs.append(CouplingPair(1, 1, ((0, 0),), (1.0,)))
            arrays.append(np.full_like(u0, -f_const))

        def value_fn(v, pt, t):
            if v == 1:
                return -f_const
            return float(exact(pt[0] * h, pt[1] * h, t * dt))

        def vector_fn(v, coords, t):
            if v == 1:
                return np.full(coords[0].shape, -f_const)
            return exact(coords[0] * h, coords[1] * h, t * dt)

        bc = BoundaryCondition(DIRICHLET_TIME, value_fn, vector_fn)
        spec = StencilSpec(2, len(arrays), (0, 0), (n - 1, n - 1), tuple(pairs), bc, which)
        return spec, _box_state(*arrays)

    return build


def _build_heat_neumann(which):
    def build(n):
        h, X, Y = _mesh(n)
        dt = 0.9 * h * h / 4.0
        k = dt / (h * h)
        exact = _heat_exact(which)
        u0 = exact(X, Y, 0.0)
        pairs = [_five_point(0, 1.0 - 4.0 * k, (k, k))]

        # outward normal derivative of the exact solution on each face
        def d_exact(X_, Y_, t):
            decay = np.exp(-np.pi**2 * t / 2) * (np.pi / 2)
            phase = np.pi * (X_ + Y_) / 2
            if which == "h4":
                return decay * np.cos(phase)
            if which == "h5":
                return -decay * np.sin(phase)
            return decay * (np.cos(phase) - np.sin(phase))

        def vector_fn(v, coords, t, face=None):
            xs, ys = coords[0] * h, coords[1] * h
            g = d_exact(xs, ys, t * dt)  # equals du/dx and du/dy here
            if face is None:
                return g
            d, side = face
            return g if side else -g

        def value_fn(v, pt, t, face=None):
            return float(vector_fn(v, (np.asarray([pt[0]]), np.asarray([pt[1]])), t, face)[0])

        bc = BoundaryCondition(NEUMANN, value_fn, vector_fn, flux_step=2.0 * h)
        spec = StencilSpec(2, 1, (0, 0), (n - 1, n - 1), tuple(pairs), bc, which)
        return spec, _box_state(u0)

    return build


# ---------------------------------------------------------------------------
# Poisson family (Jacobi iteration; "time" steps are sweeps)


def _build_poisson(which, rhs_fn, exact_fn=None, neumann=False):
    def build(n):
        h, X, Y = _mesh(n)
        rhs = rhs_fn(X, Y)
        # damped sweeps (omega = 4/5, the classic smoothing factor for the
        # five-point Laplacian); the (1 - omega) center tap also keeps every
        # k-step influence row dense, where the undamped sweep's influence
        # lives on a checkerboard and alternate sublattices go unseen
        omega = 0.8
        pairs = [
            CouplingPair(
                0, 0,
                ((-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)),
                (omega / 4, omega / 4, 1.0 - omega, omega / 4, omega / 4),
            )
        ]
        has_src = bool(np.any(rhs != 0.0))
        arrays = []
        # uniform unit initial guess for the sweeps; an all-zero guess
        # would leave the scanned magnitude window with nothing to protect
        u0 = np.ones_like(X)
        if exact_fn is not None:
            edge = np.zeros(X.shape, dtype=bool)
            edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
            u0[edge] = exact_fn(X, Y)[edge]
        arrays.append(u0)
        if has_src:
            pairs.append(CouplingPair(0, 1, ((0, 0),), (-omega * h * h / 4.0,)))
            pairs.append(CouplingPair(1, 1, ((0, 0),), (1.0,)))
            arrays.append(rhs.copy())

        if neumann:
            def vector_fn(v, coords, t, face=None):
                if v == 1:
                    return np.zeros(coords[0].shape)
                return -np.sin(5.0 * coords[0] * h)

            def value_fn(v, pt, t, face=None):
                if v == 1:
                    return 0.0
                return float(-math.sin(5.0 * pt[0] * h))

            bc = BoundaryCondition(NEUMANN, value_fn, vector_fn, flux_step=2.0 * h)
        else:
            def vector_fn(v, coords, t):
                if v == 1:
                    return rhs_fn(coords[0] * h, coords[1] * h)
                if exact_fn is None:
                    return np.zeros(coords[0].shape)
                return exact_fn(coords[0] * h, coords[1] * h)

            def value_fn(v, pt, t):
                out = vector_fn(v, (np.asarray([float(pt[0])]), np.asarray([float(pt[1])])), t)
                return float(np.asarray(out).ravel()[0])

            bc = BoundaryCondition(DIRICHLET_FIXED, value_fn, vector_fn)
        spec = StencilSpec(2, len(arrays), (0, 0), (n - 1, n - 1), tuple(pairs), bc, which)
        return spec, _box_state(*arrays)

    return build


def _membrane(parts):
    def rhs(X, Y):
        total = np.zeros_like(X)
        if "p1" in parts:
            total = total + 4.0 * np.exp(-5.0 * ((X - 0.6) ** 2 + (Y - 0.6) ** 2))
        if "p2" in parts:
            total = total + 2.0 * np.exp(-5.0 * ((X - 0.3) ** 2 + (Y - 0.3) ** 2))
        if "p3" in parts:
            total = total + 4.0 * np.exp(-5.0 * ((X - 0.3) ** 2 + (Y - 0.6) ** 2))
        return total

    return rhs


# ---------------------------------------------------------------------------
# wave family (leapfrog folded onto two arrays: current and previous)


def _wave_exact(which, c):
    s2pi = math.sqrt(2.0) * math.pi
    if which == "w1":
        return lambda X, Y, t: np.cos(s2pi * t) * np.sin(np.pi * X) * np.sin(np.pi * Y) + X * X - Y * Y
    if which in ("w2", "w3"):
        return lambda X, Y, t: np.sin(s2pi * t) * np.cos(np.pi * X) * np.cos(np.pi * Y) + X * X - Y * Y
    if which == "w4":
        return lambda X, Y, t: 16.0 + 2.0 * np.sin(np.pi * X / 4) * np.sin(np.pi * Y / 4) * np.cos(np.pi * c * c * t / 2)
    if which == "w5":
        return lambda X, Y, t: 16.0 + np.sin(np.pi * X / 2) * np.sin(np.pi * X / 2) * np.cos(np.pi * c * c * t / 4)
    return lambda X, Y, t: 16.0 + 2.0 * np.sin(np.pi * X / 2) * np.cos(np.pi * X / 4) * np.sin(np.pi * c * c * t / 2)


def _build_wave(which, c):
    def build(n):
        h, X, Y = _mesh(n)
        # 2-d leapfrog stability: c*dt/h <= 1/sqrt(2); 0.9 safety on dt
        dt = 0.9 * h / (c * math.sqrt(2.0))
        r2 = (c * dt / h) ** 2
        exact = _wave_exact(which, c)
        u0 = exact(X, Y, 0.0)
        pairs = [
            _five_point(0, 2.0 * (1.0 - 2.0 * r2), (r2, r2)),
            CouplingPair(0, 1, ((0, 0),), (-1.0,)),
            CouplingPair(1, 0, ((0, 0),), (1.0,)),
        ]

        def vector_fn(v, coords, t):
            tt = (t - 1 if v == 1 else t) * dt
            return exact(coords[0] * h, coords[1] * h, tt)

        def value_fn(v, pt, t):
            tt = (t - 1 if v == 1 else t) * dt
            return float(exact(pt[0] * h, pt[1] * h, tt))

        bc = BoundaryCondition(DIRICHLET_TIME, value_fn, vector_fn)
        spec = StencilSpec(2, 2, (0, 0), (n - 1, n - 1), tuple(pairs), bc, which)
        # zero initial velocity: previous level equals the initial level
        return spec, _box_state(u0, u0.copy())

    return build


# ---------------------------------------------------------------------------
# convection-diffusion family


def _conv_exact(alpha, zeta):
    # Unit background: constants solve the homogeneous equation, so the
    # sum is still exact, and the field stays clear of the Gaussian's
    # denormal tail (the bare pulse spans ~70 binades at zeta=0.01).
    def exact(X, Y, t):
        s = 4.0 * t + 1.0
        return 1.0 + (1.0 / s) * np.exp(
            (-((X - alpha * t - 0.5) ** 2) - (Y - alpha * t - 0.5) ** 2) / (zeta * s)
        )

    return exact


def _build_convection(which, alpha, zeta):
    def build(n):
        h, X, Y = _mesh(n)
        dt = 0.9 * min(h * h / (4.0 * zeta), 2.0 * zeta / (alpha * alpha))
        k = zeta * dt / (h * h)
        m = alpha * dt / (2.0 * h)
        exact = _conv_exact(alpha, zeta)
        u0 = exact(X, Y, 0.0)
        pairs = [
            _five_point(0, 1.0 - 4.0 * k, (k + m, k - m), (k + m, k - m))
        ]

        def vector_fn(v, coords, t):
            return exact(coords[0] * h, coords[1] * h, t * dt)

        def value_fn(v, pt, t):
            return float(exact(pt[0] * h, pt[1] * h, t * dt))

        bc = BoundaryCondition(DIRICHLET_TIME, value_fn, vector_fn)
        spec = StencilSpec(2, 1, (0, 0), (n - 1, n - 1), tuple(pairs), bc, which)
        return spec, _box_state(u0)

    return build


# ---------------------------------------------------------------------------
# 1-d analogs


def _build_heat_1d():
    def build(n):
        h, x = _grid(n)
        u0 = 1.0 + x * x
        pairs = [CouplingPair(0, 0, ((-1,), (0,), (1,)), (0.25, 0.5, 0.25))]

        def value_fn(v, pt, t):
            xx = pt[0] * h
            return float(1.0 + xx * xx)

        def vector_fn(v, coords, t):
            xx = coords[0] * h
            return 1.0 + xx * xx

        bc = BoundaryCondition(DIRICHLET_FIXED, value_fn, vector_fn)
        spec = StencilSpec(1, 1, (0,), (n - 1,), tuple(pairs), bc, "heat1d")
        return spec, _box_state(u0)

    return build


def _build_wave_1d():
    def build(n):
        h, x = _grid(n)
        c = 1.0
        dt = 0.9 * h / c
        r2 = (c * dt / h) ** 2  # = 0.81

        def exact(xx, t):
            return 2.0 + np.cos(np.pi * c * t) * np.sin(np.pi * xx)

        u0 = exact(x, 0.0)
        pairs = [
            CouplingPair(0, 0, ((-1,), (0,), (1,)), (r2, 2.0 * (1.0 - r2), r2)),
            CouplingPair(0, 1, ((0,),), (-1.0,)),
            CouplingPair(1, 0, ((0,),), (1.0,)),
        ]

        def value_fn(v, pt, t):
            tt = (t - 1 if v == 1 else t) * dt
            return float(exact(pt[0] * h, tt))

        def vector_fn(v, coords, t):
            tt = (t - 1 if v == 1 else t) * dt
            return exact(coords[0] * h, tt)

        bc = BoundaryCondition(DIRICHLET_TIME, value_fn, vector_fn)
        spec = StencilSpec(1, 2, (0,), (n - 1,), tuple(pairs), bc, "wave1d")
        return spec, _box_state(u0, u0.copy())

    return build


# ---------------------------------------------------------------------------
# registry

BENCHMARKS = {}


def _register(bid, family, dims, build, note=""):
    BENCHMARKS[bid] = BenchmarkDef(bid, family, dims, build, note)


_register("h1", "heat", 2, _build_heat_dirichlet("h1", ZETA - 2.0 - 2.0 * ALPHA))
_register("h2", "heat", 2, _build_heat_dirichlet("h2", 0.0))
_register("h3", "heat", 2, _build_heat_dirichlet("h3", 2.0 * ZETA - 2.0 - 2.0 * ALPHA))
_register("h4", "heat", 2, _build_heat_neumann("h4"))
_register("h5", "heat", 2, _build_heat_neumann("h5"))
_register("h6", "heat", 2, _build_heat_neumann("h6"))

_register("p1", "poisson", 2, _build_poisson(
    "p1", lambda X, Y: np.full_like(X, -6.0), lambda X, Y: 1.0 + X * X + Y * Y))
_register("p2", "poisson", 2, _build_poisson(
    "p2", lambda X, Y: -6.0 * (2.0 + X + Y), lambda X, Y: 1.0 + X**3 + Y**3))
_register("p3", "poisson", 2, _build_poisson(
    "p3", lambda X, Y: -2.0 - 12.0 * Y, lambda X, Y: 1.0 + X * X + 2.0 * Y**3))
_register("p4", "poisson", 2, _build_poisson("p4", _membrane(("p1",)), lambda X, Y: np.zeros_like(X)))
_register("p5", "poisson", 2, _build_poisson("p5", _membrane(("p1", "p2")), lambda X, Y: np.zeros_like(X)))
_register("p6", "poisson", 2, _build_poisson("p6", _membrane(("p1", "p2", "p3")), lambda X, Y: np.zeros_like(X)))
# uniform +1 source under the Gaussian spots: the bare pulses decay to
# 1e-11 (p7) and 1e-49 (p9) at the far corner, binades no detector setup
# can usefully span
_register("p7", "poisson", 2, _build_poisson(
    "p7", lambda X, Y: 1.0 + 10.0 * np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / 0.02), neumann=True))
_register("p8", "poisson", 2, _build_poisson(
    "p8", lambda X, Y: np.zeros_like(X), neumann=True))
_register("p9", "poisson", 2, _build_poisson(
    "p9", lambda X, Y: 1.0 + 20.0 * np.exp(-((X - 0.25) ** 2 + (Y - 0.25) ** 2) / 0.01), neumann=True))

for _wid in ("w1", "w2", "w3"):
    _register(_wid, "wave", 2, _build_wave(_wid, 1.0))
for _wid in ("w4", "w5", "w6"):
    _register(_wid, "wave", 2, _build_wave(_wid, 0.7))

_register("c1", "convection", 2, _build_convection("c1", 0.8, 0.01))
_register("c2", "convection", 2, _build_convection("c2", 0.4, 0.4))
_register("c3", "convection", 2, _build_convection("c3", 0.1, 0.8))

_register("heat1d", "heat", 1, _build_heat_1d(), "canonical (0.25, 0.5, 0.25) kernel")
_register("wave1d", "wave", 1, _build_wave_1d())

BENCHMARK_IDS_2D = tuple(b for b in BENCHMARKS if BENCHMARKS[b].dims == 2)


def check_discretization(spec):
    """Reject discretizations outside the stable explicit envelope.

    Every tap of an array's own update must be non-negative: a signed
    self-coupling is the first symptom of an over-CFL step (heat center
    1-4k < 0) or of convection outrunning diffusion on the cell scale
    (side tap k-m < 0 once h > 2*zeta/alpha).  Cross-array couplings may
    carry any sign (leapfrog lag, negated sources).  The signed-sum <= 1
    rule is already enforced by StencilSpec itself.
    """
    for p in spec.pairs:
        if p.to_array != p.from_array:
            continue
        for off, c in zip(p.offsets, p.coeffs):
            if c < 0.0:
                raise InvalidSpecError(
                    f"{spec.name or 'spec'}: unstable discretization, "
                    f"negative self tap {c} at offset {off} "
                    f"on array {p.to_array}"
                )
    return spec


def build_benchmark(bench_id, grid_n):
    """Instantiate a built-in problem on an (grid_n, ...) grid.

    Returns (StencilSpec, GridState) with initial and boundary data
    filled in and the stability-checked step size baked into the
    coefficients.
    """
    try:
        bench = BENCHMARKS[bench_id]
    except KeyError:
        raise UnknownBenchmarkError(bench_id) from None
    spec, state = bench.build(grid_n)
    check_discretization(spec)
    return spec, state
