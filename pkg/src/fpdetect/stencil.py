"""Linear stencil model: specifications, grid state, iterated stepping.

The model is the usual one for iterative finite-difference kernels: N
arrays on a D-dimensional box, each interior point of each target array
rewritten every step as a fixed linear combination of neighbouring
points of the source arrays.  Boundary cells are refreshed from a
boundary condition rather than the stencil rule.  The per-point
accumulation order is part of the contract (the round-off analysis and
the tiled executor reproduce it term by term), so `step_iterated` folds
terms strictly in declaration order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .ddouble import dd_add
from .errors import InvalidSpecError

DIRICHLET_FIXED = "DirichletFixed"
DIRICHLET_TIME = "DirichletTimeDependent"
NEUMANN = "Neumann"

_BOUNDARY_KINDS = (DIRICHLET_FIXED, DIRICHLET_TIME, NEUMANN)

# Signed per-target coefficient sums may exceed 1 by rounding of the
# coefficient formulas themselves; allow that much and nothing more.
_SUM_SLACK = 2.0 ** -48


@dataclass(frozen=True)
class CouplingPair:
    """Terms feeding one target array from one source array."""

    to_array: int
    from_array: int
    offsets: tuple  # tuple of per-dim integer tuples
    coeffs: tuple   # same length, plain doubles

    def __post_init__(self):
        if len(self.offsets) != len(self.coeffs):
            raise InvalidSpecError("offsets and coeffs length mismatch")


@dataclass(frozen=True)
class BoundaryCondition:
    """How boundary cells are refreshed each step.

    value_fn(array, point, step) -> float.  For the Dirichlet kinds it
    returns the boundary value at that step; for Neumann it returns the
    outward normal derivative, and `flux_step` carries the 2*h factor of
    the ghost-point substitution (ghost = inner + flux_step * flux).
    vector_fn, when given, is the same function over coordinate arrays
    and is used as a fast path.
    """

    kind: str
    value_fn: Callable[[int, tuple, int], float]
    vector_fn: Optional[Callable] = None
    flux_step: float = 0.0

    def __post_init__(self):
        if self.kind not in _BOUNDARY_KINDS:
            raise InvalidSpecError(f"unknown boundary kind {self.kind!r}")


@dataclass(frozen=True)
class StencilSpec:
    dims: int
    arrays: int
    lower: tuple
    upper: tuple
    pairs: tuple
    boundary: BoundaryCondition
    name: str = ""

    def __post_init__(self):
        validate_spec(self)

    # -- geometry helpers -------------------------------------------------

    def shape(self):
        return tuple(u - l + 1 for l, u in zip(self.lower, self.upper))

    def reach(self):
        """Per-dimension neighbourhood half-width w."""
        w = [0] * self.dims
        for p in self.pairs:
            for off in p.offsets:
                for d in range(self.dims):
                    w[d] = max(w[d], abs(off[d]))
        return tuple(w)

    def pairs_into(self, u):
        return [p for p in self.pairs if p.to_array == u]

    def step_rows(self):
        """Single-step coefficient rows as dense {(u, v): ndarray} over
        the [-w, w] box (index 0 at the box corner)."""
        w = self.reach()
        shape = tuple(2 * wi + 1 for wi in w)
        rows = {}
        for p in self.pairs:
            key = (p.to_array, p.from_array)
            row = rows.setdefault(key, np.zeros(shape))
            for off, c in zip(p.offsets, p.coeffs):
                idx = tuple(off[d] + w[d] for d in range(self.dims))
                row[idx] += c
        return rows

    # -- serialization ----------------------------------------------------

    def to_json(self):
        doc = {
            "dims": self.dims,
            "arrays": self.arrays,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "pairs": [
                {
                    "to": p.to_array,
                    "from": p.from_array,
                    "offsets": [list(o) for o in p.offsets],
                    "coeffs": list(p.coeffs),
                }
                for p in self.pairs
            ],
            "boundary": {"kind": self.boundary.kind},
        }
        if self.name:
            doc["boundary"]["source"] = self.name
        return doc

    def spec_hash(self):
        """sha256 over the canonical JSON of the linear model."""
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def validate_spec(spec):
    if spec.dims < 1:
        raise InvalidSpecError("dims must be >= 1")
    if spec.arrays < 1:
        raise InvalidSpecError("arrays must be >= 1")
    if len(spec.lower) != spec.dims or len(spec.upper) != spec.dims:
        raise InvalidSpecError("lower/upper must have one entry per dim")
    for l, u in zip(spec.lower, spec.upper):
        if u - l + 1 < 8:
            raise InvalidSpecError("grid must span at least 8 points per dim")
    targets = set()
    sums = {}
    for p in spec.pairs:
        if not (0 <= p.to_array < spec.arrays and 0 <= p.from_array < spec.arrays):
            raise InvalidSpecError("pair references an array out of range")
        targets.add(p.to_array)
        for off, c in zip(p.offsets, p.coeffs):
            if len(off) != spec.dims:
                raise InvalidSpecError("offset arity mismatch")
            if not (abs(c) <= 1.0):
                raise InvalidSpecError(f"coefficient {c} outside [-1, 1]")
            sh, sl = sums.get(p.to_array, (0.0, 0.0))
            sums[p.to_array] = dd_add(sh, sl, c, 0.0)
    if targets != set(range(spec.arrays)):
        raise InvalidSpecError("every array needs at least one incoming pair")
    for u, (sh, sl) in sums.items():
        if sh + sl > 1.0 + _SUM_SLACK:
            raise InvalidSpecError(
                f"target {u}: signed coefficient sum {sh + sl} exceeds 1"
            )


def spec_from_json(doc, boundary=None):
    """Rebuild a StencilSpec from its JSON form.

    Boundary callables do not serialize; pass `boundary` to supply them,
    otherwise a zero Dirichlet boundary is attached.
    """
    if boundary is None:
        boundary = BoundaryCondition(DIRICHLET_FIXED, lambda v, pt, t: 0.0)
    pairs = tuple(
        CouplingPair(
            e["to"],
            e["from"],
            tuple(tuple(o) for o in e["offsets"]),
            tuple(float(c) for c in e["coeffs"]),
        )
        for e in doc["pairs"]
    )
    return StencilSpec(
        dims=doc["dims"],
        arrays=doc["arrays"],
        lower=tuple(doc["lower"]),
        upper=tuple(doc["upper"]),
        pairs=pairs,
        boundary=boundary,
        name=doc.get("boundary", {}).get("source", ""),
    )


@dataclass
class GridState:
    """Current values of every array plus the step counter."""

    arrays: list
    step: int = 0
    scratch: list = field(default_factory=list)

    def clone(self):
        return GridState([a.copy() for a in self.arrays], self.step)


class ExponentRange(NamedTuple):
    e_min: int
    e_max: int
    width: int


def scan_exponent_range(state):
    """Binary exponent range over all nonzero magnitudes of all arrays.

    Returns (e_min, e_max, width) with width = e_max - e_min + 1; an
    all-zero input reports width 0 (callers treat that as width 1).
    """
    arrays = state.arrays if isinstance(state, GridState) else list(state)
    e_min, e_max = None, None
    for a in arrays:
        mags = np.abs(np.asarray(a, dtype=np.float64))
        mags = mags[mags > 0]
        if mags.size == 0:
            continue
        _, e = np.frexp(mags)          # m in [0.5, 1): binary exponent is e - 1
        lo, hi = int(e.min()) - 1, int(e.max()) - 1
        e_min = lo if e_min is None else min(e_min, lo)
        e_max = hi if e_max is None else max(e_max, hi)
    if e_min is None:
        return ExponentRange(0, 0, 0)
    return ExponentRange(e_min, e_max, e_max - e_min + 1)


# ---------------------------------------------------------------------------
# stepping


def _interior(spec):
    return tuple(slice(1, -1) for _ in range(spec.dims))


def _shifted(spec, off):
    sl = []
    for d in range(spec.dims):
        n = spec.upper[d] - spec.lower[d] + 1
        sl.append(slice(1 + off[d], n - 1 + off[d]))
    return tuple(sl)


def _accumulate(spec, u, fetch):
    """Left-fold the declared terms for target u; fetch(v, off) gives the
    shifted source block."""
    acc = None
    for p in spec.pairs_into(u):
        for off, c in zip(p.offsets, p.coeffs):
            term = c * fetch(p.from_array, off)
            if acc is None:
                acc = term
            else:
                acc = acc + term
    return acc


def _boundary_coords(spec):
    """Index arrays of all boundary cells, one (mask-free) tuple per side,
    deduplicated so each cell appears once."""
    shape = spec.shape()
    mask = np.zeros(shape, dtype=bool)
    for d in range(spec.dims):
        sl = [slice(None)] * spec.dims
        sl[d] = 0
        mask[tuple(sl)] = True
        sl[d] = shape[d] - 1
        mask[tuple(sl)] = True
    return np.nonzero(mask)


def _apply_dirichlet(spec, new, u, t):
    bc = spec.boundary
    coords = _boundary_coords(spec)
    if bc.vector_fn is not None:
        new[u][coords] = bc.vector_fn(u, coords, t)
        return
    for pt in zip(*coords):
        new[u][pt] = bc.value_fn(u, pt, t)


def _padded_sources(spec, state):
    """Sources padded by one ghost layer per side for Neumann stepping."""
    bc = spec.boundary
    t = state.step
    padded = []
    for v in range(spec.arrays):
        a = state.arrays[v]
        p = np.pad(a, 1)
        for d in range(spec.dims):
            n = a.shape[d]
            # low side: ghost = inner + 2h * outward_flux
            lo_face = [slice(1, -1)] * spec.dims
            lo_face[d] = 0
            inner = [slice(None)] * spec.dims
            inner[d] = 1
            ghost = a[tuple(inner)] + bc.flux_step * _face_flux(spec, v, d, 0, t)
            p[tuple(_pad_face(spec, d, 0))] = ghost
            inner[d] = n - 2
            ghost = a[tuple(inner)] + bc.flux_step * _face_flux(spec, v, d, n - 1, t)
            p[tuple(_pad_face(spec, d, n + 1))] = ghost
        padded.append(p)
    return padded


def _pad_face(spec, d, idx):
    sl = [slice(1, -1)] * spec.dims
    sl[d] = idx
    return sl


def _face_flux(spec, v, d, boundary_idx, t):
    bc = spec.boundary
    shape = spec.shape()
    coords = []
    for dd_ in range(spec.dims):
        if dd_ == d:
            coords.append(np.full(_face_shape(shape, d), boundary_idx, dtype=np.intp))
        else:
            rng = np.arange(shape[dd_])
            reshape = [1] * (spec.dims - 1)
            pos = dd_ if dd_ < d else dd_ - 1
            reshape[pos] = shape[dd_]
            coords.append(np.broadcast_to(rng.reshape(reshape), _face_shape(shape, d)).copy())
    coords = tuple(c.ravel() for c in coords)
    if bc.vector_fn is not None:
        out = bc.vector_fn(v, coords, t)
        return np.asarray(out, dtype=np.float64).reshape(_face_shape(shape, d))
    vals = np.array([bc.value_fn(v, pt, t) for pt in zip(*coords)])
    return vals.reshape(_face_shape(shape, d))


def _face_shape(shape, d):
    return tuple(n for i, n in enumerate(shape) if i != d)


def step_iterated(spec, state):
    """Advance the state by one time step (double-buffered)."""
    if not state.scratch:
        state.scratch = [np.empty_like(a) for a in state.arrays]
    new = state.scratch
    core = _interior(spec)
    for u in range(spec.arrays):
        new[u][core] = _accumulate(
            spec, u, lambda v, off: state.arrays[v][_shifted(spec, off)]
        )
    if spec.boundary.kind == NEUMANN:
        padded = _padded_sources(spec, state)
        coords = _boundary_coords(spec)
        shifted = {}
        for u in range(spec.arrays):
            def fetch(v, off, coords=coords):
                key = (v, off)
                if key not in shifted:
                    idx = tuple(coords[d] + 1 + off[d] for d in range(spec.dims))
                    shifted[key] = padded[v][idx]
                return shifted[key]
            new[u][coords] = _accumulate(spec, u, fetch)
    else:
        t_new = state.step + 1
        for u in range(spec.arrays):
            _apply_dirichlet(spec, new, u, t_new)
    state.arrays, state.scratch = new, state.arrays
    state.step += 1


def run_iterated(spec, state, steps, observer=None):
    """Run `steps` iterations in place.  observer(state) is called after
    every step when given."""
    for _ in range(steps):
        step_iterated(spec, state)
        if observer is not None:
            observer(state)
    return state
