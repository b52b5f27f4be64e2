"""Offline detector synthesis.

Given T-step coefficient tables and a canonical exponent width, this module
sizes the two spatial regions a runtime detector needs —

* essential width (E_w): the smallest centered box of coefficients a direct
  evaluation must keep so that everything discarded stays provably below the
  agreement precision, and
* protected width (P_w): the largest centered box in which a corruption of the
  top udp bits of any point is guaranteed to push the comparison over its
  threshold, at every look-back distance t in [0, rho],

then sweeps every (T, rho) pair exhaustively to build a lookup table of
cost-optimal configurations per (exponent width, udp, coverage) goal.

All magnitude reasoning is interval arithmetic against the canonical data
interval [1, 2^width]; exponents of interval bounds are binades, with a zero
bound treated as binade -inf so the max(0, . - .) clamps behave.  Coefficient
signs are kept, so sums that can straddle zero lose their exponent and the
affected point or exclusion is simply not credited.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .coeffs import CoeffTable
from .errors import (
    EmptyProtectedRegionError,
    InfeasibleConfigError,
    UnsupportedCoverageError,
)
from .fpmodel import (
    DEFAULT_MODEL,
    FloatModel,
    Interval,
    binade_exp,
    check_width,
    detector_precision,
    update_noise,
)
from .stencil import StencilSpec

_SLACK = 2.0**-40
_NEVER = -(10**9)


def _sum_down(values: np.ndarray) -> float:
    """Lower bound on the exact sum; exact when every element is zero."""
    s = float(np.sum(values))
    mass = float(np.sum(np.abs(values)))
    if mass == 0.0:
        return s
    return float(np.nextafter(s - mass * _SLACK, -np.inf))


def _sum_up(values: np.ndarray) -> float:
    s = float(np.sum(values))
    mass = float(np.sum(np.abs(values)))
    if mass == 0.0:
        return s
    return float(np.nextafter(s + mass * _SLACK, np.inf))


def _pad_down(values: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Outward-round a cumulative sum by the accumulated absolute mass."""
    out = np.nextafter(values - mass * _SLACK, -np.inf)
    exact = mass == 0.0
    out[exact] = values[exact]
    return out


def _pad_up(values: np.ndarray, mass: np.ndarray) -> np.ndarray:
    out = np.nextafter(values + mass * _SLACK, np.inf)
    exact = mass == 0.0
    out[exact] = values[exact]
    return out


def _vec_binade(mag: np.ndarray) -> np.ndarray:
    """Binade exponents of nonnegative magnitudes; zero maps to -inf."""
    out = np.full(mag.shape, -np.inf)
    nz = mag > 0
    _, e = np.frexp(mag[nz])
    out[nz] = e - 1
    return out


def box_bounds(m: int) -> tuple:
    """Centered width-m box in offset units: [-left, +right], left = m//2."""
    return m // 2, (m - 1) // 2


def _box_slices(extent, left, right):
    return tuple(
        slice(e - min(l, e), e + min(r, e) + 1)
        for e, l, r in zip(extent, left, right)
    )


def _chain_slices(extent, m):
    """Slices of the width-m centered box, saturating at the dense extent."""
    left, right = box_bounds(m)
    return _box_slices(extent, (left,) * len(extent), (right,) * len(extent))


def _iter_shells(extent):
    """Yield (m, disjoint regions added when the chain box grows to width m).

    The chain alternates sides, so growth per step is one slab per dimension;
    the telescoping split new\\prev = U_d (new_<d x slab_d x prev_>d) keeps
    the regions disjoint, which summations rely on.  Saturated steps yield
    empty region lists.
    """
    m_max = 2 * max(extent) + 1
    prev = None
    for m in range(1, m_max + 1):
        sl = _chain_slices(extent, m)
        if sl == prev:
            yield m, []
            continue
        if prev is None:
            yield m, [sl]
        else:
            regions = []
            for d in range(len(extent)):
                slabs = []
                if sl[d].start < prev[d].start:
                    slabs.append(slice(sl[d].start, prev[d].start))
                if sl[d].stop > prev[d].stop:
                    slabs.append(slice(prev[d].stop, sl[d].stop))
                for slab in slabs:
                    regions.append(sl[:d] + (slab,) + prev[d + 1:])
            yield m, regions
        prev = sl


# ---------------------------------------------------------------------------
# weighted support of one coefficient row


@dataclass
class WeightedSupport:
    """Product intervals y_i = c_i * [1, 2^width] for one (target, source, T) row.

    The dense offset box is shared with the coefficient table; zero
    coefficients yield the degenerate interval [0, 0].
    """

    t_steps: int
    target: int
    source: int
    width: int
    extent: tuple
    y_lo: np.ndarray
    y_hi: np.ndarray
    total: Interval

    @property
    def size(self) -> int:
        return self.y_lo.size

    def point_interval(self, i) -> Interval:
        lo = self.y_lo.flat[i] if np.isscalar(i) else self.y_lo[i]
        hi = self.y_hi.flat[i] if np.isscalar(i) else self.y_hi[i]
        return Interval(float(lo), float(hi))

    def partial_sum(self, i) -> Interval:
        """Interval of the sum over all points except i (total minus point)."""
        p = self.point_interval(i)
        return Interval(float(np.nextafter(self.total.lo - p.hi, -np.inf)),
                        float(np.nextafter(self.total.hi - p.lo, np.inf)))


def build_support(row, width, t_steps=0, target=0, source=0) -> WeightedSupport:
    """Product intervals of a coefficient row against [1, 2^width].

    `row` is either a double array or a (hi, lo) pair from a CoeffTable; the
    double (correctly rounded) coefficients are what the runtime multiplies
    by, so they define the support.
    """
    eff = check_width(width)
    c = np.asarray(row[0] if isinstance(row, tuple) else row, dtype=float)
    xbar = math.ldexp(1.0, eff)
    a = c * 1.0
    b = c * xbar
    y_lo = np.nextafter(np.minimum(a, b), -np.inf)
    y_hi = np.nextafter(np.maximum(a, b), np.inf)
    y_lo[c == 0] = 0.0
    y_hi[c == 0] = 0.0
    total = Interval(_sum_down(y_lo), _sum_up(y_hi))
    ext = tuple((s - 1) // 2 for s in c.shape)
    return WeightedSupport(t_steps, target, source, width, ext, y_lo, y_hi,
                           total)


def _as_supports(support) -> list:
    return list(support) if isinstance(support, (list, tuple)) else [support]


def max_contrib(support: WeightedSupport, i, p: int = 53) -> int:
    """p - d_min: how many leading bits point i could still disturb.

    d_min compares the smallest magnitude the rest of the sum can take with
    the largest magnitude of the point; a result <= 0 marks the point
    excludable at precision p.
    """
    rest = support.partial_sum(i)
    if rest.lo == 0.0 and rest.hi == 0.0:
        return p  # singleton support: a lone point always matters
    point = support.point_interval(i)
    e_point = binade_exp(point.mag_max)
    if e_point == float("-inf"):
        return _NEVER  # zero coefficient never disturbs anything
    e_rest = binade_exp(rest.mag_min)
    d_min = max(0.0, e_rest - e_point) if e_rest != float("-inf") else 0.0
    return int(p - d_min)


def min_contrib(support: WeightedSupport, i, dp: int) -> int:
    """dp - d_max: guaranteed visible bits of point i in the comparison.

    d_max compares the largest magnitude the rest of the sum can take with
    the smallest magnitude of the point; minContrib >= udp admits the point
    into the protected region.
    """
    point = support.point_interval(i)
    e_point = binade_exp(point.mag_min)
    if e_point == float("-inf"):
        return _NEVER  # zero or sign-straddling contribution: unprotectable
    rest = support.partial_sum(i)
    e_rest = binade_exp(rest.mag_max)
    d_max = max(0.0, e_rest - e_point) if e_rest != float("-inf") else 0.0
    return int(dp - d_max)


# ---------------------------------------------------------------------------
# essential width


@dataclass(frozen=True)
class EssentialWidth:
    left: tuple
    right: tuple

    def widths(self) -> tuple:
        return tuple(l + r + 1 for l, r in zip(self.left, self.right))

    def volume(self) -> int:
        v = 1
        for w in self.widths():
            v *= w
        return v


def _exclusion_ok(supports, left, right, dp) -> bool:
    """Collective test: the excluded interval sum must sit dp binades below
    the retained sum's smallest magnitude."""
    ret_lo = ret_hi = exc_lo = exc_hi = 0.0
    for sup in supports:
        mask = np.zeros(sup.y_lo.shape, dtype=bool)
        mask[_box_slices(sup.extent, left, right)] = True
        ret_lo += _sum_down(sup.y_lo[mask])
        ret_hi += _sum_up(sup.y_hi[mask])
        exc_lo += _sum_down(sup.y_lo[~mask])
        exc_hi += _sum_up(sup.y_hi[~mask])
    z = Interval(exc_lo, exc_hi)
    if z.mag_max == 0.0:
        return True  # nothing material excluded
    r = Interval(ret_lo, ret_hi)
    if r.mag_min == 0.0:
        return False  # retained sum can vanish: no exponent to stand on
    return binade_exp(r.mag_min) - binade_exp(z.mag_max) >= dp


def essential_width(support, dp: int, geometry=None) -> EssentialWidth:
    """Smallest centered box whose complement is collectively excludable at dp.

    Shrinks a symmetric cube first (binary search on the monotone exclusion
    test), then refines each dimension; worst case returns the full support.
    Always contains the center point.
    """
    if dp < 1:
        raise ValueError("essential_width needs dp >= 1")
    supports = _as_supports(support)
    extent = supports[0].extent
    dims = len(extent)

    def ok(a_vec):
        return _exclusion_ok(supports, a_vec, a_vec, dp)

    lo, hi = 0, max(extent)
    while lo < hi:
        mid = (lo + hi) // 2
        if ok((mid,) * dims):
            hi = mid
        else:
            lo = mid + 1
    a = [min(lo, e) for e in extent]
    changed = True
    while changed:
        changed = False
        for d in range(dims):
            while a[d] > 0:
                trial = list(a)
                trial[d] -= 1
                if ok(tuple(trial)):
                    a[d] -= 1
                    changed = True
                else:
                    break
    return EssentialWidth(tuple(a), tuple(a))


# ---------------------------------------------------------------------------
# protected width


def _guard_need(supports) -> np.ndarray:
    """Per-point d_max against the combined multi-array sum, dense.

    A point with an exactly-zero coefficient is not a term of the row at
    all (checkerboard stencils such as the four-point Laplacian zero out
    half of every row), so it imposes no constraint; a nonzero point
    whose interval straddles zero can never be bounded away from the
    noise floor and gets +inf; a point that IS the whole sum needs
    nothing.
    """
    tot_lo = sum(s.total.lo for s in supports)
    tot_hi = sum(s.total.hi for s in supports)
    out = []
    for sup in supports:
        rest_hi = np.nextafter(tot_hi - sup.y_lo, np.inf)
        rest_lo = np.nextafter(tot_lo - sup.y_hi, -np.inf)
        e_rest = _vec_binade(np.maximum(np.abs(rest_lo), np.abs(rest_hi)))
        straddle = (sup.y_lo <= 0) & (sup.y_hi >= 0)
        mag_min = np.where(straddle, 0.0,
                           np.minimum(np.abs(sup.y_lo), np.abs(sup.y_hi)))
        e_point = _vec_binade(mag_min)
        need = np.maximum(0.0, e_rest - e_point)
        need[np.isneginf(e_point)] = np.inf
        need[np.isneginf(e_rest)] = 0.0
        need[(sup.y_lo == 0.0) & (sup.y_hi == 0.0)] = -np.inf
        out.append(need)
    return out[0] if len(out) == 1 else np.maximum.reduce(out)


def box_need_profile(need: np.ndarray) -> np.ndarray:
    """profile[m-1] = max need inside the centered width-m box.

    Monotone non-decreasing by construction (boxes nest), computed by taking
    the max over each newly added shell.
    """
    extent = tuple((s - 1) // 2 for s in need.shape)
    prof = np.empty(2 * max(extent) + 1)
    cur = -np.inf
    for m, regions in _iter_shells(extent):
        for region in regions:
            block = need[region]
            if block.size:
                cur = max(cur, float(np.max(block)))
        prof[m - 1] = cur
    return prof


def largest_guarded_width(need_profile: np.ndarray, slack: float) -> int:
    """Largest m with max in-box need <= slack (0: even the center fails)."""
    return int(np.searchsorted(need_profile, slack, side="right"))


def protected_width(supports_by_k, dp: int, udp: int, rho: int, t_steps: int,
                    geometry=None) -> tuple:
    """Component-wise minimum over look-backs t in [0, rho] of the largest
    centered box whose contributing points all keep minContrib >= udp at
    distance T-t.

    Only actual terms of a row constrain the box: a point whose
    coefficient is exactly zero at some distance (checkerboard-parity
    stencils) cannot influence that comparison in the first place, so it
    is skipped there and bounded by the rows where it does contribute.
    Each row's box is implicitly capped at the row's support extent.

    `supports_by_k` maps step distance k to the support(s) of the k-step row.
    Raises EmptyProtectedRegionError when any look-back has no guaranteed
    point (the configuration is infeasible).
    """
    if udp < 1:
        raise ValueError("udp must be >= 1")
    if udp > dp:
        raise EmptyProtectedRegionError(
            f"cannot protect udp={udp} bits with only dp={dp} matched")
    if not 0 < rho <= t_steps:
        raise ValueError("need 0 < rho <= T")
    m_min = None
    dims = 1
    for t in range(rho + 1):
        k = t_steps - t
        if k not in supports_by_k:
            raise KeyError(f"support for {k}-step row missing")
        sups = _as_supports(supports_by_k[k])
        dims = len(sups[0].extent)
        if k == 0:
            m = 1  # identity row: only the anchor itself is guaranteed
        else:
            m = largest_guarded_width(box_need_profile(_guard_need(sups)),
                                      dp - udp)
        if m == 0:
            raise EmptyProtectedRegionError(
                f"no guaranteed point at look-back {t} "
                f"(row {k}, udp={udp}, dp={dp})")
        m_min = m if m_min is None else min(m_min, m)
    return (m_min,) * dims


# ---------------------------------------------------------------------------
# coverage and cost


def interior_fraction(n_points, reach, t_steps: int) -> float:
    frac = 1.0
    for n, w in zip(n_points, reach):
        frac *= max(0.0, (n - 2.0 * w * t_steps) / n)
    return frac


def coverage_fraction(pw, rho: int, t_steps: int, n_points, reach,
                      in_box_frac: float = 1.0) -> float:
    """Fraction of all points carrying the guarantee: the interior factor
    times the guaranteed share of each rho x P_w placement cell (1.0 for the
    pyramid-trimmed P_w, which is guaranteed at every look-back)."""
    return interior_fraction(n_points, reach, t_steps) * in_box_frac


def config_cost(ew: EssentialWidth, pw, rho: int) -> float:
    cost = 1.0 / rho
    for w, p in zip(ew.widths(), pw):
        if p < 1:
            raise ValueError("pw components must be >= 1")
        cost *= w / p
    return cost


def adjust_coverage(cov: float, interior_frac: float) -> float:
    """Requested whole-grid coverage -> required in-interior coverage."""
    if not 0.0 <= cov <= 1.0:
        raise ValueError("coverage must be within [0, 1]")
    if cov == 0.0:
        return 0.0
    if interior_frac <= 0.0 or cov > interior_frac:
        raise UnsupportedCoverageError(
            f"coverage {cov:.2%} exceeds the protectable interior "
            f"({max(interior_frac, 0.0):.2%} of the grid)")
    return cov / interior_frac


# ---------------------------------------------------------------------------
# configurations and the lookup table


@dataclass(frozen=True)
class DetectorConfig:
    t_steps: int
    rho: int
    dp: int
    pw: tuple
    ew: EssentialWidth
    cost: float
    coverage_frac: float
    width: int = 0
    udp: int = 0

    @property
    def t_delta(self) -> int:
        return self.t_steps - self.rho

    def to_json(self) -> dict:
        return {
            "T": self.t_steps,
            "rho": self.rho,
            "dp": self.dp,
            "pw": list(self.pw),
            "ewl": list(self.ew.left),
            "ewr": list(self.ew.right),
            "cost": self.cost,
            "coverage": self.coverage_frac,
        }

    @staticmethod
    def from_json(doc: dict, width: int = 0, udp: int = 0) -> "DetectorConfig":
        ew = EssentialWidth(tuple(doc["ewl"]), tuple(doc["ewr"]))
        return DetectorConfig(doc["T"], doc["rho"], doc["dp"],
                              tuple(doc["pw"]), ew, doc["cost"],
                              doc["coverage"], width, udp)


def _cell_key(width: int, udp: int, cov_pc: int) -> str:
    return f"e{width}:u{udp}:c{cov_pc}"


class ConfigLUT:
    """Map (exponent width, udp, coverage) -> optimal DetectorConfig or None.

    A config profiled at width W stays valid at any smaller width (its bounds
    only loosen), so lookups fall back to the smallest profiled width >= the
    requested one.
    """

    def __init__(self, entries=None, meta=None):
        self.entries = dict(entries or {})
        self.meta = dict(meta or {})

    def put(self, width: int, udp: int, cov: float, cfg):
        self.entries[(width, udp, round(cov * 100))] = cfg

    def get(self, width: int, udp: int, cov: float):
        return self.entries.get((width, udp, round(cov * 100)))

    def lookup(self, width: int, udp: int, cov: float):
        """Best stored cell valid for `width` (tightest profile first)."""
        cpc = round(cov * 100)
        for w in sorted(w for (w, u, c) in self.entries
                        if u == udp and c == cpc and w >= width):
            cfg = self.entries.get((w, udp, cpc))
            if cfg is not None:
                return cfg
        raise InfeasibleConfigError(
            f"no feasible configuration for exponent width {width}, "
            f"udp {udp}, coverage {cov:.0%}")

    def to_json(self) -> dict:
        doc = {}
        if self.meta:
            doc["_meta"] = dict(self.meta)
        for (w, u, c), cfg in sorted(self.entries.items()):
            doc[_cell_key(w, u, c)] = ("infeasible" if cfg is None
                                       else cfg.to_json())
        return doc

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)
            f.write("\n")

    @staticmethod
    def from_json(doc: dict) -> "ConfigLUT":
        lut = ConfigLUT(meta=doc.get("_meta"))
        for key, val in doc.items():
            if key.startswith("_"):
                continue
            e, u, c = key.split(":")
            width, udp, cov = int(e[1:]), int(u[1:]), int(c[1:]) / 100.0
            cfg = (None if val == "infeasible"
                   else DetectorConfig.from_json(val, width, udp))
            lut.put(width, udp, cov, cfg)
        return lut

    @staticmethod
    def load(path) -> "ConfigLUT":
        with open(path) as f:
            return ConfigLUT.from_json(json.load(f))


# ---------------------------------------------------------------------------
# the offline sweep


class _WidthTables:
    """Per-width per-row reductions reused across every (T, rho) candidate.

    Bounds use the same prefix structure as the public functions: noise born
    m steps before the target is weighted by the m-step absolute row sums,
    and the direct route's components scale with 2^width.
    """

    def __init__(self, spec: StencilSpec, table: CoeffTable, tmax: int,
                 width: int, model: FloatModel, target: int = 0):
        self.dims = spec.dims
        self.width = width
        eff = check_width(width)
        xbar = math.ldexp(1.0, eff)
        mu = DEFAULT_MODEL.mu
        g = [update_noise(spec, v, width, model) for v in range(spec.arrays)]

        self.rs = np.zeros(tmax + 1)
        self.rd = np.zeros(tmax + 1)
        self.need_profiles = [None] * (tmax + 1)
        self.chain = [None] * (tmax + 1)

        for k in range(tmax + 1):
            sups = []
            coeff_round = product_round = abs_sum = 0.0
            n_terms = 0
            abs_rows = np.zeros(spec.arrays)
            for v in range(spec.arrays):
                r = table.row(k, target, v)
                if r is None:
                    continue
                sups.append(build_support(r, width, k, target, v))
                abs_rows[v] = table.abs_row_sum(k, target, v)
                hi, lo = r
                live = (hi != 0) | (lo != 0)
                hi, lo = hi[live], lo[live]
                n_terms += hi.size
                coeff_round += float(np.sum(np.abs(lo)))
                abs_sum += float(np.sum(np.abs(hi)))
                if model.exact_pow2:
                    fr, _ = np.frexp(hi)
                    product_round += float(np.sum(np.abs(hi[np.abs(fr) != 0.5])))
                else:
                    product_round += float(np.sum(np.abs(hi)))
            if k > 0:
                self.rs[k] = self.rs[k - 1] + sum(
                    gv * ar for gv, ar in zip(g, prev_abs_rows))
            prev_abs_rows = abs_rows * (1.0 + _SLACK)
            total = (coeff_round + model.op_eps * product_round) * xbar
            if n_terms > 1:
                total += 2.0 * model.mu * abs_sum * xbar
            self.rd[k] = total * (1.0 + _SLACK) / mu
            if k > 0:
                self.need_profiles[k] = box_need_profile(_guard_need(sups))
            self.chain[k] = _box_chain_profiles(sups)
        self.rs *= (1.0 + _SLACK) / mu

    def guarded_width(self, k: int, slack: float) -> int:
        if k == 0:
            return 1
        return largest_guarded_width(self.need_profiles[k], slack)

    def essential(self, k: int, dp: int) -> EssentialWidth:
        """Symmetric-box essential width via the precomputed chain sums."""
        ret_lo, ret_hi, exc_lo, exc_hi = self.chain[k]
        m_full = len(ret_lo)
        chosen = m_full
        for m in range(1, m_full + 1, 2):  # symmetric (odd) widths only
            z = Interval(exc_lo[m - 1], exc_hi[m - 1])
            if z.mag_max == 0.0:
                chosen = m
                break
            r = Interval(ret_lo[m - 1], ret_hi[m - 1])
            if r.mag_min == 0.0:
                continue
            if binade_exp(r.mag_min) - binade_exp(z.mag_max) >= dp:
                chosen = m
                break
        a = chosen // 2
        return EssentialWidth((a,) * self.dims, (a,) * self.dims)


def _box_chain_profiles(sups):
    """Retained and excluded interval sums for every chain box width.

    Shell sums are accumulated separately and combined by forward (retained)
    and reversed (excluded) cumulative sums, so the bound on an excluded tail
    carries slack proportional to the tail itself — deriving it as
    total - retained would bury a 2^-45-scale tail under the 2^-40 slack of
    two near-equal totals.
    """
    if not sups:
        z = np.zeros(1)
        return z, z.copy(), z.copy(), z.copy()
    extent = sups[0].extent
    m_max = 2 * max(extent) + 1
    shell_lo = np.zeros(m_max)
    shell_hi = np.zeros(m_max)
    for m, regions in _iter_shells(extent):
        lo = hi = 0.0
        for region in regions:
            for sup in sups:
                lo += _sum_down(sup.y_lo[region])
                hi += _sum_up(sup.y_hi[region])
        shell_lo[m - 1] = lo
        shell_hi[m - 1] = hi
    mass = np.maximum(np.abs(shell_lo), np.abs(shell_hi))
    pre_mass = np.cumsum(mass)
    suf_mass = np.concatenate([np.cumsum(mass[::-1])[::-1], [0.0]])[1:]
    ret_lo = _pad_down(np.cumsum(shell_lo), pre_mass)
    ret_hi = _pad_up(np.cumsum(shell_hi), pre_mass)
    suf_lo = np.concatenate([np.cumsum(shell_lo[::-1])[::-1], [0.0]])[1:]
    suf_hi = np.concatenate([np.cumsum(shell_hi[::-1])[::-1], [0.0]])[1:]
    exc_lo = _pad_down(suf_lo, suf_mass)
    exc_hi = _pad_up(suf_hi, suf_mass)
    return ret_lo, ret_hi, exc_lo, exc_hi


def offline_profile(spec: StencilSpec, table: CoeffTable, tmax: int,
                    exp_set, udp_set, cov_set,
                    model: FloatModel = DEFAULT_MODEL,
                    target: int = 0) -> ConfigLUT:
    """Exhaustive sweep of (T, rho) pairs per goal cell.

    For every exponent width: bound the iterated route and both direct
    routes, derive dp per (T, rho), size E_w and the pyramid P_w, and keep
    the cheapest feasible candidate per (udp, cov); ties prefer larger rho,
    then smaller T, then smaller E_w volume.  Cells with no candidate are
    recorded infeasible rather than raising; the sweep never aborts.
    """
    if tmax > table.tmax:
        raise ValueError(f"table only unrolled to {table.tmax} < tmax {tmax}")
    if tmax < 1:
        raise ValueError("tmax must be >= 1")
    n_points = spec.shape()
    reach = spec.reach()
    interior = [interior_fraction(n_points, reach, t) for t in range(tmax + 1)]
    lut = ConfigLUT(meta={"spec": spec.spec_hash(), "tmax": tmax,
                          "grid": list(n_points), "target": target})

    for width in exp_set:
        tabs = _WidthTables(spec, table, tmax, width, model, target)
        # a trailing comparison pairs the T-step route with any shorter one,
        # so its round-off budget is Rd(T) plus the worst Rd below T
        rd_peak = np.maximum.accumulate(tabs.rd)
        ew_memo = {}
        cands_per_udp = {u: [] for u in udp_set}
        for t_steps in range(1, tmax + 1):
            dp = detector_precision(
                tabs.rs[t_steps],
                tabs.rd[t_steps] + rd_peak[t_steps - 1], model)
            if dp < 1:
                continue
            key = (t_steps, dp)
            if key not in ew_memo:
                ew_memo[key] = tabs.essential(t_steps, dp)
            ew = ew_memo[key]
            # guarded widths of the rows a (t_steps, rho) window can touch
            gw = {}
            for rho in range(t_steps // 2 + 1, t_steps + 1):
                for udp in udp_set:
                    if udp < 1 or udp > dp:
                        continue
                    slack = dp - udp
                    m = min(
                        gw.setdefault((t_steps - t, slack),
                                      tabs.guarded_width(t_steps - t, slack))
                        for t in range(rho + 1))
                    if m < 1:
                        continue
                    pw = (m,) * spec.dims
                    cands_per_udp[udp].append(
                        (config_cost(ew, pw, rho), -rho, t_steps,
                         ew.volume(), rho, dp, pw, ew))

        for udp in udp_set:
            cands = sorted(cands_per_udp[udp], key=lambda c: c[:4])
            for cov in cov_set:
                chosen = None
                for cand in cands:
                    if interior[cand[2]] >= cov:
                        chosen = cand
                        break
                if chosen is None:
                    lut.put(width, udp, cov, None)
                else:
                    cost, _, t_steps, _, rho, dp, pw, ew = chosen
                    lut.put(width, udp, cov, DetectorConfig(
                        t_steps, rho, dp, pw, ew, cost,
                        interior[t_steps], width, udp))
    return lut
