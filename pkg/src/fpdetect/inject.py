"""Fault and bug injection for protected stencil runs.

Two families of trouble, one accounting scheme:

* soft faults -- single bit flips in binary64 grid values, or two flips
  landing in the same 16-byte section (what one corrupted cache beat looks
  like from the program's side);
* software bugs -- a tiled re-implementation of the reference stepper whose
  loop bounds, array index expressions, and loop orders can each be broken
  one site at a time, standing in for a transformed/generated loop nest.

`run_campaign` drives batches of either kind against a detector-protected
run and reports, per trial: whether the fault actually executed (reached),
whether the final state differs bitwise from a clean run (manifested), and
whether a detector check fired (detected).  A check firing on a trial whose
final state is bitwise clean counts as a false positive; campaigns are
engineered so that number is zero.

Trials are reproducible: trial i of a campaign seeded s draws from a
counter-based generator keyed (s, i), so re-running any subset of trials
gives identical plans.
"""

from __future__ import annotations

import csv
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coeffs import CoeffTable, unroll_coefficients
from .errors import (
    IllegalTilingError,
    LocationOutOfRangeError,
    TimeMismatchError,
)
from .fpmodel import binade_exp, clamp_range
from .runtime import _matched_bits_vec, _resolve_bench, run_protected
from .stencil import (
    NEUMANN,
    GridState,
    _apply_dirichlet,
    run_iterated,
    scan_exponent_range,
)
from .synthesis import ConfigLUT, offline_profile

MODE_BITFLIP = "bitflip"
MODE_BITFLIP2 = "bitflip2"
MODE_BOUND = "bound"
MODE_ACCESS = "access"
MODE_REORDER = "reorder"
CAMPAIGN_MODES = (MODE_BITFLIP, MODE_BITFLIP2, MODE_BOUND, MODE_ACCESS,
                  MODE_REORDER)

KIND_BOUND = "LoopBound"
KIND_ACCESS = "ArrayAccess"
KIND_REORDER = "LoopReorder"

SECTION_BITS = 128          # a 16-byte section holds two binary64 words


# ---------------------------------------------------------------------------
# bit flips


def flip_bit(value: float, bit: int) -> float:
    """XOR one bit of the binary64 encoding of `value`.

    Bit 0 is the significand lsb, bit 52 the exponent lsb, bit 63 the sign.
    Involution: flipping the same bit twice returns the original encoding.
    """
    if not 0 <= bit < 64:
        raise ValueError(f"bit index {bit} outside [0, 64)")
    (word,) = struct.unpack("<Q", struct.pack("<d", value))
    (out,) = struct.unpack("<d", struct.pack("<Q", word ^ (1 << bit)))
    return out


@dataclass(frozen=True)
class SoftFaultPlan:
    """One scheduled state corruption.

    Single-bit faults carry (index, bit).  Section faults carry (section,
    bits): section s spans flat elements 2s and 2s+1 of the target array,
    and a section-local bit b in [0, 128) lands in element 2s + b//64 at
    word bit b % 64 -- both flips may hit the same element.  A trailing odd
    element is never part of any section.
    """

    mode: str
    time_step: int
    array: int
    index: Optional[tuple] = None
    bit: Optional[int] = None
    section: Optional[int] = None
    bits: Optional[tuple] = None

    def describe(self) -> str:
        if self.mode == MODE_BITFLIP:
            at = ",".join(str(i) for i in self.index)
            return f"a{self.array}@{at}:b{self.bit}"
        return (f"a{self.array}:s{self.section}"
                f":b{self.bits[0]}+b{self.bits[1]}")


def draw_fault_plan(spec, steps: int, rng, mode: str = MODE_BITFLIP, *,
                    min_bit: int = 0, interior_only: bool = False,
                    arrays: Optional[tuple] = None) -> SoftFaultPlan:
    """Sample a fault uniformly over (time, array, location, bit).

    The default ranges cover everything: all steps in [0, steps), all grid
    points including the boundary ring, all 64 word bits.  `min_bit` and
    `interior_only` restrict the draw to the most significant bits and to
    non-boundary points, for campaigns that target the guaranteed class;
    `arrays` restricts which arrays can be hit (e.g. only the solution
    level, leaving a read-only forcing field alone).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    shape = spec.shape()
    pool = tuple(range(spec.arrays)) if arrays is None else tuple(arrays)
    array = int(pool[rng.integers(len(pool))])
    t = int(rng.integers(steps))
    if mode == MODE_BITFLIP:
        lo = 1 if interior_only else 0
        index = tuple(int(rng.integers(lo, n - lo)) for n in shape)
        bit = int(rng.integers(min_bit, 64))
        return SoftFaultPlan(mode, t, array, index=index, bit=bit)
    if mode == MODE_BITFLIP2:
        flat = 1
        for n in shape:
            flat *= n
        sections = flat // 2
        if sections < 1:
            raise ValueError("array too small for a 16-byte section")
        section = int(rng.integers(sections))
        pair = rng.choice(SECTION_BITS, size=2, replace=False)
        bits = tuple(sorted(int(b) for b in pair))
        return SoftFaultPlan(mode, t, array, section=section, bits=bits)
    raise ValueError(f"unknown fault mode {mode!r}")


def inject_soft_fault(state: GridState, plan: SoftFaultPlan):
    """Apply `plan` to `state` (in place) and return what was flipped.

    The state's step counter must equal the planned step.  Returns a list
    of (array, index, word_bit, previous_value) records, one per flip.
    """
    if state.step != plan.time_step:
        raise TimeMismatchError(
            f"fault planned for step {plan.time_step}, state is at "
            f"step {state.step}")
    if not 0 <= plan.array < len(state.arrays):
        raise LocationOutOfRangeError(f"no array {plan.array}")
    a = state.arrays[plan.array]
    applied = []
    if plan.mode == MODE_BITFLIP:
        if len(plan.index) != a.ndim or any(
                not 0 <= i < n for i, n in zip(plan.index, a.shape)):
            raise LocationOutOfRangeError(
                f"index {plan.index} outside shape {a.shape}")
        pre = float(a[plan.index])
        a[plan.index] = flip_bit(pre, plan.bit)
        applied.append((plan.array, plan.index, plan.bit, pre))
        return applied
    if plan.mode == MODE_BITFLIP2:
        if len(plan.bits) != 2 or plan.bits[0] == plan.bits[1] or any(
                not 0 <= b < SECTION_BITS for b in plan.bits):
            raise ValueError(f"need two distinct bits in [0, {SECTION_BITS})")
        if not 0 <= plan.section < a.size // 2:
            raise LocationOutOfRangeError(
                f"section {plan.section} outside array of {a.size} elements")
        for b in plan.bits:
            flat = 2 * plan.section + b // 64
            index = tuple(int(i) for i in np.unravel_index(flat, a.shape))
            pre = float(a[index])
            a[index] = flip_bit(pre, b % 64)
            applied.append((plan.array, index, b % 64, pre))
        return applied
    raise ValueError(f"unknown fault mode {plan.mode!r}")


def make_fault_hook(plan: SoftFaultPlan, record: Optional[list] = None):
    """Hook for the protected run: fires once when the step matches."""
    def hook(state):
        if state.step == plan.time_step:
            applied = inject_soft_fault(state, plan)
            if record is not None:
                record.extend(applied)
    return hook


# ---------------------------------------------------------------------------
# bug hooks: every bound and index expression in the generated nest routes
# through one of these, so a single site can be broken per run


def bound_hook(site_id: int, value, selected: Optional[int] = None):
    """Loop-bound expression wrapper.

    Unselected sites pass through untouched.  The selected site shifts by
    one toward the loop interior -- start bounds (even ids) move up, end
    bounds (odd ids) move down -- so a broken bound always skips work
    rather than reading out of range.
    """
    if selected != site_id:
        return value
    return value + 1 if site_id % 2 == 0 else value - 1


def access_hook(site_id: int, index, selected: Optional[int] = None):
    """Array-index expression wrapper: the selected site halves the index
    (floor), redirecting reads or writes to the wrong element while staying
    in range for non-negative indices."""
    if selected != site_id:
        return index
    return index // 2


@dataclass(frozen=True)
class BugSite:
    """One breakable location in the generated loop nest, densely numbered
    per kind in static program order."""

    kind: str
    site_id: int
    variant: str = ""
    note: str = ""


@dataclass(frozen=True)
class ReorderVariant:
    """A named rearrangement of the tiled loop nest.

    kind: "legal" variants must reproduce the reference run bitwise;
    "rounding" variants change only summation order (low-bit drift);
    "bug" variants change semantics (stale reads or stale boundaries).

    time_pos says where the time loop sits: "outer" (correct), inside the
    first strip loop ("x-strips" / "strips"), inside both strip loops
    ("y-strips"), or per point ("points").  boundary says when the boundary
    refresh runs: every step before the interior ("step"), every step after
    it ("step_after"), once per time tile ("tile"), or per strip per step
    ("strip", an idempotent replication that keeps boundaries fresh when
    time moves inside a strip loop).  taps "reversed" folds the per-point
    terms in reverse order.  strips "swapped"/"reversed" permutes the strip
    visit order, which never changes any value (disjoint writes) -- that is
    exactly why those variants are legal.
    """

    name: str
    kind: str
    time_pos: str
    boundary: str
    taps: str = "declared"
    strips: str = "canonical"

    @property
    def legal(self) -> bool:
        return self.kind == "legal"


REORDERS_2D = (
    ReorderVariant("spatial-blocks-swapped", "legal", "outer", "step",
                   strips="swapped"),
    ReorderVariant("spatial-points-swapped", "legal", "outer", "step"),
    ReorderVariant("spatial-blocks-and-points-swapped", "legal", "outer",
                   "step", strips="swapped"),
    ReorderVariant("x-strip-inner", "legal", "outer", "step"),
    ReorderVariant("boundary-after-interior", "legal", "outer", "step_after"),
    ReorderVariant("taps-reversed", "rounding", "outer", "step",
                   taps="reversed"),
    ReorderVariant("time-inside-x-blocks", "bug", "x-strips", "strip"),
    ReorderVariant("time-inside-y-blocks", "bug", "y-strips", "strip"),
    ReorderVariant("time-innermost", "bug", "points", "tile"),
    ReorderVariant("boundary-hoisted", "bug", "outer", "tile"),
    ReorderVariant("time-inside-x-blocks-points-swapped", "bug", "x-strips",
                   "strip"),
    ReorderVariant("time-inside-y-blocks-blocks-swapped", "bug", "y-strips",
                   "strip", strips="swapped"),
    ReorderVariant("boundary-hoisted-blocks-swapped", "bug", "outer", "tile",
                   strips="swapped"),
    ReorderVariant("time-innermost-points-swapped", "bug", "points", "tile"),
    ReorderVariant("time-inside-x-blocks-boundary-hoisted", "bug", "x-strips",
                   "tile"),
)

REORDERS_1D = (
    ReorderVariant("boundary-after-interior", "legal", "outer", "step_after"),
    ReorderVariant("strips-reversed", "legal", "outer", "step",
                   strips="reversed"),
    ReorderVariant("points-reversed", "legal", "outer", "step"),
    ReorderVariant("strips-and-points-reversed", "legal", "outer", "step",
                   strips="reversed"),
    ReorderVariant("taps-reversed", "rounding", "outer", "step",
                   taps="reversed"),
    ReorderVariant("time-inside-strips", "bug", "strips", "strip"),
    ReorderVariant("time-innermost", "bug", "points", "tile"),
    ReorderVariant("boundary-hoisted", "bug", "outer", "tile"),
    ReorderVariant("time-inside-strips-boundary-hoisted", "bug", "strips",
                   "tile"),
    ReorderVariant("time-innermost-boundary-hoisted", "bug", "points",
                   "tile"),
    ReorderVariant("time-inside-strips-points-reversed", "bug", "strips",
                   "strip"),
    ReorderVariant("time-innermost-strips-reversed", "bug", "points", "tile",
                   strips="reversed"),
    ReorderVariant("boundary-hoisted-strips-reversed", "bug", "outer", "tile",
                   strips="reversed"),
    ReorderVariant("time-inside-strips-taps-reversed", "bug", "strips",
                   "strip", taps="reversed"),
    ReorderVariant("boundary-hoisted-points-reversed", "bug", "outer",
                   "tile"),
)


# ---------------------------------------------------------------------------
# the tiled stepper


class TiledVariant:
    """A time-tiled, strip-mined rendition of the reference stepper.

    Stands in for the output of a loop transformation tool: the same
    arithmetic as the plain stepper -- identical per-point term order, so a
    clean run is bitwise equal -- but with an explicit loop nest whose
    bounds and index expressions can be broken one site at a time, and
    whose loop order can be replaced by a named variant.

    2-d nest (1-d drops the y loops); strip loops run over block indices
    and nbx = ceil((nx-2)/BX)::

        for tt in [0, steps) by TT:          # time tile       bounds 0,1
          for t in [tt, min(tt+TT, steps)):  # time            bounds 2,3
            refresh boundary of the write buffer
            for jb in [0, nbx): xb = 1+jb*BX  # x strip        bounds 4,5
              for kb in [0, nby): yb = 1+kb*BY  # y strip      bounds 6,7
                for x in [xb, min(xb+BX, nx-1)):  # x point    bounds 8,9
                  for y in [yb, min(yb+BY, ny-1)): # y point   bounds 10,11
                    write[u][x,y] = sum of c * read[v][x+dx, y+dy]

    Reads and writes alternate between two full buffer sets by time parity;
    an update that never runs leaves the stale parity copy in place, which
    is exactly how a skipped iteration corrupts a real double-buffered
    code.  The boundary refresh reuses the reference implementation as an
    opaque block.

    Only width-1 neighbourhoods with value boundaries fit this nest shape;
    flux (mirror) boundaries need a ghost-layer exchange that has no single
    placement, and three and more dimensions are not generated.
    """

    def __init__(self, spec, state0: GridState, *, time_tile: int = 4,
                 block=None):
        if spec.dims > 2:
            raise IllegalTilingError(
                f"no tiled nest is generated for {spec.dims}-d problems")
        if spec.boundary.kind == NEUMANN:
            raise IllegalTilingError(
                "flux boundaries need a ghost-layer exchange; only value "
                "boundaries tile as a single block")
        if spec.reach() != (1,) * spec.dims:
            raise IllegalTilingError(
                "the generated nest assumes a width-1 neighbourhood")
        if time_tile < 1:
            raise ValueError("time_tile must be >= 1")
        self.spec = spec
        self.state0 = state0
        self.shape = spec.shape()
        self.time_tile = int(time_tile)
        if block is None:
            block = (16,) * spec.dims
        self.block = tuple(int(b) for b in block)
        if len(self.block) != spec.dims or any(b < 1 for b in self.block):
            raise ValueError(f"bad block shape {block}")
        self.reorders = REORDERS_2D if spec.dims == 2 else REORDERS_1D
        self.last_reached = False
        self._enumerate_sites()

    # -- site enumeration (static program order) --------------------------

    def _enumerate_sites(self):
        if self.spec.dims == 2:
            loops = ("time tile", "time", "x strip", "y strip",
                     "x point", "y point")
        else:
            loops = ("time tile", "time", "x strip", "x point")
        self.loops = loops
        self._bound_sites = tuple(
            BugSite(KIND_BOUND, 2 * i + j,
                    note=f"{name} loop {'start' if j == 0 else 'end'}")
            for i, name in enumerate(loops) for j in (0, 1))

        sites = []
        self._write_sites = []
        self._terms = []
        sid = 0
        for u in range(self.spec.arrays):
            ws = []
            for d in range(self.spec.dims):
                sites.append(BugSite(KIND_ACCESS, sid,
                                     note=f"a{u} write index {d}"))
                ws.append(sid)
                sid += 1
            self._write_sites.append(tuple(ws))
            terms = []
            for p in self.spec.pairs_into(u):
                for off, c in zip(p.offsets, p.coeffs):
                    rs = []
                    for d in range(self.spec.dims):
                        sites.append(BugSite(
                            KIND_ACCESS, sid,
                            note=(f"a{u} reads a{p.from_array}"
                                  f"{tuple(off)} index {d}")))
                        rs.append(sid)
                        sid += 1
                    terms.append((p.from_array, tuple(off), float(c),
                                  tuple(rs)))
            self._terms.append(terms)
        self._access_sites = tuple(sites)

    def bound_sites(self):
        return self._bound_sites

    def access_sites(self):
        return self._access_sites

    def reorder_sites(self):
        return tuple(BugSite(KIND_REORDER, i, variant=v.name, note=v.kind)
                     for i, v in enumerate(self.reorders))

    def variant(self, name: Optional[str]) -> ReorderVariant:
        if name is None:
            return _CANONICAL
        for v in self.reorders:
            if v.name == name:
                return v
        raise ValueError(f"unknown reorder variant {name!r}")

    # -- hooks -------------------------------------------------------------

    def _hooks(self, bound, access):
        self.last_reached = False

        def B(site_id, value):
            if bound == site_id:
                self.last_reached = True
            return bound_hook(site_id, value, bound)

        def A(site_id, value):
            if access == site_id:
                self.last_reached = True
            return access_hook(site_id, value, access)

        return B, A

    # -- pieces ------------------------------------------------------------

    def _refresh_boundary(self, wr, t):
        for u in range(self.spec.arrays):
            _apply_dirichlet(self.spec, wr, u, t)

    def _n_strips(self, d):
        return -(-(self.shape[d] - 2) // self.block[d])

    def _strip_origins(self, d, B, lo_id, hi_id):
        """Strip loops run over block indices, as generated tiled code
        does; origin = 1 + index * blocksize.  An off-by-one on these
        bounds therefore drops a whole strip, not a single line."""
        return [1 + jb * self.block[d]
                for jb in range(B(lo_id, 0), B(hi_id, self._n_strips(d)))]

    def _strips(self, B, variant):
        """Strip origin visit order, honoring bound sites 4..7."""
        if self.spec.dims == 2:
            xs = self._strip_origins(0, B, 4, 5)
            ys = self._strip_origins(1, B, 6, 7)
            if variant.strips == "swapped":
                return [(a, b) for b in ys for a in xs]
            return [(a, b) for a in xs for b in ys]
        xs = self._strip_origins(0, B, 4, 5)
        if variant.strips == "reversed":
            xs = xs[::-1]
        return [(a,) for a in xs]

    def _block_ranges(self, strip, B):
        """Point ranges for one strip, honoring bound sites 8..11 (6..7)."""
        out = []
        base = 8 if self.spec.dims == 2 else 6
        for d, orig in enumerate(strip):
            hi = self.shape[d] - 1
            lo_id, hi_id = base + 2 * d, base + 2 * d + 1
            out.append((B(lo_id, orig),
                        B(hi_id, min(orig + self.block[d], hi))))
        return out

    def _fold_block(self, rd, wr, u, ranges, A, access, terms):
        """Vectorized per-target update of one block, same fold order as
        the reference stepper."""
        slices = tuple(slice(r0, r1) for r0, r1 in ranges)
        if any(r1 <= r0 for r0, r1 in ranges):
            return
        acc = None
        for v, off, c, rs in terms:
            if access is not None and access in rs:
                idx = []
                for d, (r0, r1) in enumerate(ranges):
                    comp = np.arange(r0, r1) + off[d]
                    if access == rs[d]:
                        comp = A(rs[d], comp)
                    idx.append(comp)
                src = rd[v][np.ix_(*idx)] if len(idx) > 1 else rd[v][idx[0]]
            else:
                src = rd[v][tuple(slice(r0 + off[d], r1 + off[d])
                                  for d, (r0, r1) in enumerate(ranges))]
            term = c * src
            acc = term if acc is None else acc + term
        wr[u][slices] = acc

    def _fold_block_scalar(self, rd, wr, u, ranges, A, access, terms):
        """Point loop kept scalar so duplicate writes resolve in program
        order (last write wins), which a gather/scatter cannot promise."""
        ws = self._write_sites[u]
        for point in _points(ranges):
            acc = None
            for v, off, c, _ in terms:
                src = rd[v][tuple(point[d] + off[d]
                                  for d in range(len(point)))]
                term = c * src
                acc = term if acc is None else acc + term
            out = tuple(A(ws[d], point[d]) if access == ws[d] else point[d]
                        for d in range(len(point)))
            wr[u][out] = acc

    def _update_blocks(self, rd, wr, strip_ranges, A, access, variant):
        for u in range(self.spec.arrays):
            terms = self._terms[u]
            if variant.taps == "reversed":
                terms = terms[::-1]
            if access is not None and access in self._write_sites[u]:
                self._fold_block_scalar(rd, wr, u, strip_ranges, A, access,
                                        terms)
            else:
                self._fold_block(rd, wr, u, strip_ranges, A, access, terms)

    def _step_once(self, bufs, t, B, A, access, variant):
        """One full time step in canonical order (time loop outermost)."""
        rd, wr = bufs[t % 2], bufs[(t + 1) % 2]
        if variant.boundary == "step":
            self._refresh_boundary(wr, t + 1)
        for strip in self._strips(B, variant):
            self._update_blocks(rd, wr, self._block_ranges(strip, B), A,
                                access, variant)
        if variant.boundary == "step_after":
            self._refresh_boundary(wr, t + 1)

    def _tile_inside(self, bufs, tt, te, B, A, access, variant):
        """One time tile with the time loop illegally moved inward.

        Strips (or single points) advance through the whole tile before
        their neighbours take a single step, so every neighbour read off
        the strip is stale by up to TT-1 steps.  With boundary "strip" the
        full boundary is re-refreshed per strip per step (idempotent, so
        boundary values stay correct); with "tile" it runs once up front.
        """
        if variant.boundary == "tile":
            self._refresh_boundary(bufs[(tt + 1) % 2], tt + 1)
        if variant.time_pos == "points":
            for strip in self._strips(B, variant):
                for point in _points(self._block_ranges(strip, B)):
                    for t in range(tt, te):
                        rd, wr = bufs[t % 2], bufs[(t + 1) % 2]
                        for u in range(self.spec.arrays):
                            terms = self._terms[u]
                            if variant.taps == "reversed":
                                terms = terms[::-1]
                            acc = None
                            for v, off, c, _ in terms:
                                src = rd[v][tuple(point[d] + off[d]
                                                  for d in range(len(point)))]
                                term = c * src
                                acc = term if acc is None else acc + term
                            wr[u][point] = acc
            return
        if variant.time_pos in ("strips", "y-strips"):
            units = self._strips(B, variant)
        else:                                   # "x-strips": t under xb
            units = [(a,) for a in self._strip_origins(0, B, 4, 5)]
        for unit in units:
            for t in range(tt, te):
                rd, wr = bufs[t % 2], bufs[(t + 1) % 2]
                if variant.boundary == "strip":
                    self._refresh_boundary(wr, t + 1)
                if variant.time_pos == "x-strips":
                    inner = [(unit[0], b)
                             for b in self._strip_origins(1, B, 6, 7)]
                else:
                    inner = [unit]
                for strip in inner:
                    self._update_blocks(rd, wr,
                                        self._block_ranges(strip, B), A,
                                        access, variant)

    def _executed_times(self, steps, B):
        """Time steps the (possibly bound-broken) time loops actually run."""
        out = set()
        for tt in range(B(0, 0), B(1, steps), self.time_tile):
            for t in range(B(2, tt), B(3, min(tt + self.time_tile, steps))):
                out.add(t)
        return out

    # -- drivers -----------------------------------------------------------

    def _fresh_bufs(self):
        return [[a.copy() for a in self.state0.arrays],
                [a.copy() for a in self.state0.arrays]]

    def run(self, steps: int, *, bound=None, access=None, reorder=None
            ) -> GridState:
        """Standalone run from the initial state; returns the final state.

        Exactly one of bound/access/reorder may be set (or none for the
        clean tiled run, which is bitwise equal to the reference stepper).
        `last_reached` records whether the selected site executed.
        """
        _one_selection(bound, access, reorder)
        variant = self.variant(reorder)
        B, A = self._hooks(bound, access)
        bufs = self._fresh_bufs()
        if variant.time_pos == "outer":
            for tt in range(B(0, 0), B(1, steps), self.time_tile):
                if variant.boundary == "tile":
                    self._refresh_boundary(bufs[(tt + 1) % 2], tt + 1)
                for t in range(B(2, tt),
                               B(3, min(tt + self.time_tile, steps))):
                    self._step_once(bufs, t, B, A, access, variant)
        else:
            for tt in range(0, steps, self.time_tile):
                self._tile_inside(bufs, tt, min(tt + self.time_tile, steps),
                                  B, A, access, variant)
        return GridState([a.copy() for a in bufs[steps % 2]], steps)

    def stepper(self, steps: int, *, bound=None, access=None, reorder=None):
        """A per-step executor for hosting this variant under detectors.

        Each call advances nominal time by one; internally the variant's
        own buffers evolve and the state is pointed at the parity a fused
        observer would read.  A time iteration the broken loops skip leaves
        the buffers untouched (the stale parity shows through).  Variants
        whose time loop moved inward have no per-step program point, so the
        whole tile executes when nominal time crosses into it and every
        in-tile call exposes that result.
        """
        _one_selection(bound, access, reorder)
        variant = self.variant(reorder)
        B, A = self._hooks(bound, access)
        holder = {}
        executed = None
        if variant.time_pos == "outer":
            executed = self._executed_times(steps, B)

        def step_fn(spec, state):
            if "bufs" not in holder:
                holder["bufs"] = [[a.copy() for a in state.arrays],
                                  [a.copy() for a in state.arrays]]
            bufs = holder["bufs"]
            n = state.step
            if variant.time_pos == "outer":
                if variant.boundary == "tile" and n % self.time_tile == 0:
                    self._refresh_boundary(bufs[(n + 1) % 2], n + 1)
                if n in executed:
                    self._step_once(bufs, n, B, A, access, variant)
            else:
                if n % self.time_tile == 0:
                    self._tile_inside(bufs, n,
                                      min(n + self.time_tile, steps), B, A,
                                      access, variant)
            state.arrays = bufs[(n + 1) % 2]
            state.step = n + 1

        return step_fn


_CANONICAL = ReorderVariant("canonical", "legal", "outer", "step")


def _points(ranges):
    if len(ranges) == 1:
        (r,) = ranges
        for x in range(r[0], r[1]):
            yield (x,)
    else:
        (rx, ry) = ranges
        for x in range(rx[0], rx[1]):
            for y in range(ry[0], ry[1]):
                yield (x, y)


def _one_selection(bound, access, reorder):
    if sum(s is not None for s in (bound, access, reorder)) > 1:
        raise ValueError("select at most one of bound/access/reorder")


def tiled_variant(bench, *, grid=None, time_tile: int = 4,
                  block=None) -> TiledVariant:
    """Build the tiled stepper for a benchmark id or (spec, state) pair."""
    spec, state = _resolve_bench(bench, grid)
    return TiledVariant(spec, state, time_tile=time_tile, block=block)


# ---------------------------------------------------------------------------
# campaigns


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator keyed by (campaign seed, trial index)."""
    return np.random.Generator(np.random.Philox(key=(seed << 64) + trial))


@dataclass
class CampaignConfig:
    """One batch of injections against a protected run.

    For bit-flip modes `trials` faults are drawn; for bound/access/reorder
    modes every site (or variant) is tried exactly once and `trials` is
    ignored.  `steps` defaults to twice the detection interval of the
    selected configuration (rounded up to whole time tiles for bug modes).
    `constrain="protected"` restricts flip draws to non-boundary points and
    to word bits at or above 52 - udp; `arrays` narrows them to specific
    arrays.  A prebuilt lookup table and coefficient table may be passed to
    skip re-synthesis.
    """

    benchmark: object
    mode: str
    trials: int = 100
    seed: int = 0
    udp: int = 15
    cov: float = 0.9
    grid: Optional[int] = 128
    steps: Optional[int] = None
    tmax: int = 16
    time_tile: int = 4
    block: Optional[tuple] = None
    constrain: Optional[str] = None
    arrays: Optional[tuple] = None
    lut: Optional[ConfigLUT] = None
    table: Optional[CoeffTable] = None


@dataclass(frozen=True)
class TrialRow:
    trial: int
    mode: str
    site_or_bit: str
    time_step: int
    reached: bool
    manifested: bool
    detected: bool
    matched_bits_min: int


@dataclass
class CampaignReport:
    """Roll-up of one campaign plus its per-trial rows.

    detection_rate_protected is the detection fraction over the class the
    detectors vouch for: for bit flips, faults that executed at an interior
    point, at or above word bit 52 - udp, on a value inside the scanned
    magnitude window; for bug modes, sites whose breakage manifested in the
    final state.  detection_rate_unprotected covers the complement.  A
    detection on a trial with a bitwise-clean final state is a false
    positive.
    """

    benchmark: str
    mode: str
    trials: int
    steps: int
    seed: int
    udp: int
    cov: float
    reached_count: int
    manifested_count: int
    detected_count: int
    detection_rate_protected: float
    detection_rate_unprotected: float
    false_positives: int
    rng: str = "philox"
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    rows: tuple = ()

    def to_json(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "mode": self.mode,
            "trials": self.trials,
            "steps": self.steps,
            "seed": self.seed,
            "udp": self.udp,
            "cov": self.cov,
            "reachedCount": self.reached_count,
            "manifestedCount": self.manifested_count,
            "detectedCount": self.detected_count,
            "detectionRateProtected": self.detection_rate_protected,
            "detectionRateUnprotected": self.detection_rate_unprotected,
            "falsePositives": self.false_positives,
            "rng": self.rng,
            "config": self.config,
            "extra": self.extra,
        }

    def save_summary(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)
            f.write("\n")


def _plan_in_class(applied, spec, udp, e_lo, e_hi) -> bool:
    """Did any flip qualify for the guarantee: interior point, word bit at
    or above 52 - udp, pre-flip magnitude inside the scanned window?"""
    floor = 52 - udp
    shape = spec.shape()
    for _, index, bit, pre in applied:
        if bit < floor:
            continue
        if any(not 1 <= index[d] <= shape[d] - 2 for d in range(spec.dims)):
            continue
        if pre == 0.0 or not e_lo <= binade_exp(abs(pre)) <= e_hi:
            continue
        return True
    return False


def _differs(final_arrays, clean_arrays) -> bool:
    return any(not np.array_equal(a, b)
               for a, b in zip(final_arrays, clean_arrays))


def _rate(num, den) -> float:
    return num / den if den else 0.0


def run_campaign(cfg: CampaignConfig, workers: int = 1) -> CampaignReport:
    """Execute one injection campaign and account for every trial.

    `workers` > 1 runs bit-flip trials on a thread pool (each trial owns its
    grid state; results keep trial order, so reports are identical to a
    serial run).  Bug-mode sweeps are few and stay serial.
    """
    if cfg.mode not in CAMPAIGN_MODES:
        raise ValueError(f"unknown campaign mode {cfg.mode!r}")
    spec, state0 = _resolve_bench(cfg.benchmark, cfg.grid)
    bench_name = cfg.benchmark if isinstance(cfg.benchmark, str) \
        else (spec.name or "custom")

    table = cfg.table if cfg.table is not None \
        else unroll_coefficients(spec, cfg.tmax)
    rngc = clamp_range(scan_exponent_range(state0))
    width = max(rngc.width, 1)
    lut = cfg.lut if cfg.lut is not None else offline_profile(
        spec, table, cfg.tmax, [width], [cfg.udp], [cfg.cov])
    det = lut.lookup(width, cfg.udp, cfg.cov)

    bit_mode = cfg.mode in (MODE_BITFLIP, MODE_BITFLIP2)
    if cfg.steps is not None:
        steps = int(cfg.steps)
    elif bit_mode:
        steps = max(2 * det.t_steps, 4)
    else:
        base = max(2 * det.t_steps, 2 * cfg.time_tile)
        steps = -(-base // cfg.time_tile) * cfg.time_tile

    clean = run_iterated(spec, state0.clone(), steps).arrays
    rows = []
    extra = {}

    if bit_mode:
        constrained = cfg.constrain == "protected"

        def one_trial(trial):
            rng = trial_rng(cfg.seed, trial)
            plan = draw_fault_plan(
                spec, steps, rng, cfg.mode,
                min_bit=(52 - cfg.udp) if constrained else 0,
                interior_only=constrained, arrays=cfg.arrays)
            applied = []
            hook = make_fault_hook(plan, applied)
            # flipped exponent bits routinely send values to inf and the
            # ensuing arithmetic to nan; that propagation is the very thing
            # under test, not a numerical accident worth warning about
            with np.errstate(invalid="ignore", over="ignore"):
                final, outcomes = run_protected(
                    (spec, state0.clone()), lut, cfg.udp, cfg.cov, steps,
                    table=table, hook=hook)
            reached = bool(applied)
            manifested = _differs(final.arrays, clean)
            detected = any(o.detected for o in outcomes)
            mb = min((o.matched_bits for o in outcomes), default=53)
            row = TrialRow(trial, cfg.mode, plan.describe(),
                           plan.time_step, reached, manifested,
                           detected, mb)
            return row, reached and _plan_in_class(
                applied, spec, cfg.udp, rngc.e_min, rngc.e_max)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one_trial, range(cfg.trials)))
        else:
            results = [one_trial(t) for t in range(cfg.trials)]
        rows = [r for r, _ in results]
        in_class = [c for _, c in results]
        n_class = sum(in_class)
        det_class = sum(1 for r, c in zip(rows, in_class)
                        if c and r.detected)
        det_rest = sum(1 for r, c in zip(rows, in_class)
                       if not c and r.detected)
        rate_p = _rate(det_class, n_class)
        rate_u = _rate(det_rest, len(rows) - n_class)
        extra["protectedClassCount"] = n_class
        extra["protectedClassDetected"] = det_class
    else:
        var = TiledVariant(spec, state0, time_tile=cfg.time_tile,
                           block=cfg.block)
        ref = var.run(steps)
        if _differs(ref.arrays, clean):
            raise RuntimeError(
                "tiled reference run diverged from the plain stepper")
        if cfg.mode == MODE_BOUND:
            entries = [({"bound": s.site_id}, f"{s.site_id}:{s.note}", None)
                       for s in var.bound_sites()]
        elif cfg.mode == MODE_ACCESS:
            entries = [({"access": s.site_id}, f"{s.site_id}:{s.note}", None)
                       for s in var.access_sites()]
        else:
            entries = [({"reorder": s.variant}, s.variant,
                        var.variant(s.variant))
                       for s in var.reorder_sites()]
            extra["damageBits"] = {}
        for i, (sel, label, variant) in enumerate(entries):
            buggy = var.run(steps, **sel)
            reached = True if variant is not None else var.last_reached
            manifested = _differs(buggy.arrays, clean)
            if variant is not None and manifested:
                extra["damageBits"][label] = int(min(
                    _matched_bits_vec(c.ravel(), b.ravel()).min()
                    for c, b in zip(clean, buggy.arrays)))
            # a variant whose time loop moved inward has no per-step
            # program point to host checks at; when it does not even
            # manifest there is nothing to detect, so skip the hosted run
            # rather than fabricate one
            host = variant is None or variant.time_pos == "outer" \
                or manifested
            if host:
                final, outcomes = run_protected(
                    (spec, state0.clone()), lut, cfg.udp, cfg.cov, steps,
                    table=table, stepper=var.stepper(steps, **sel))
                detected = any(o.detected for o in outcomes)
                mb = min((o.matched_bits for o in outcomes), default=53)
            else:
                detected = False
                mb = 53
            rows.append(TrialRow(i, cfg.mode, label, -1, reached,
                                 manifested, detected, mb))
        n_manifest = sum(r.manifested for r in rows)
        det_manifest = sum(1 for r in rows if r.manifested and r.detected)
        det_rest = sum(1 for r in rows
                       if not r.manifested and r.detected)
        rate_p = _rate(det_manifest, n_manifest)
        rate_u = _rate(det_rest, len(rows) - n_manifest)

    return CampaignReport(
        benchmark=bench_name,
        mode=cfg.mode,
        trials=len(rows),
        steps=steps,
        seed=cfg.seed,
        udp=cfg.udp,
        cov=cfg.cov,
        reached_count=sum(r.reached for r in rows),
        manifested_count=sum(r.manifested for r in rows),
        detected_count=sum(r.detected for r in rows),
        detection_rate_protected=rate_p,
        detection_rate_unprotected=rate_u,
        false_positives=sum(1 for r in rows
                            if r.detected and not r.manifested),
        config={"detector": det.to_json(), "grid": list(spec.shape()),
                "width": width},
        extra=extra,
        rows=tuple(rows),
    )


# ---------------------------------------------------------------------------
# row serialization

CAMPAIGN_FIELDS = ("trial", "mode", "site_or_bit", "time_step", "reached",
                   "manifested", "detected", "matched_bits_min")


def write_campaign_csv(path, rows, manifest=None):
    """Per-trial rows as CSV, booleans as 0/1.

    `manifest` (a JSON-serializable dict) is embedded as a leading comment
    line; readers skip comment lines.
    """
    with open(path, "w", newline="") as f:
        if manifest is not None:
            f.write("#manifest " + json.dumps(manifest, sort_keys=True) + "\n")
        w = csv.writer(f)
        w.writerow(CAMPAIGN_FIELDS)
        for r in rows:
            w.writerow([r.trial, r.mode, r.site_or_bit, r.time_step,
                        int(r.reached), int(r.manifested), int(r.detected),
                        r.matched_bits_min])


def read_campaign_csv(path):
    rows = []
    with open(path, newline="") as f:
        body = (line for line in f if not line.startswith("#"))
        rd = csv.DictReader(body)
        for rec in rd:
            rows.append(TrialRow(
                int(rec["trial"]), rec["mode"], rec["site_or_bit"],
                int(rec["time_step"]), bool(int(rec["reached"])),
                bool(int(rec["manifested"])), bool(int(rec["detected"])),
                int(rec["matched_bits_min"])))
    return rows
