"""Detector-embedded stencil execution.

A protected run scans the data's exponent range once, looks up a detector
configuration, and then interleaves normal stepping with two kinds of work:

* at every baseline (each multiple of rho) a bank of detectors predicts, by
  one compensated dot product with the T-step coefficient row restricted to
  the essential box, what its grid point will hold T steps later;
* when a bank's target time arrives the prediction is compared against the
  value the iterated computation actually produced, and any disagreement at
  or above the round-off threshold is reported as a detection.

Banks whose target time falls past the end of the run are closed out by
trailing comparisons: the stored prediction against a fresh direct estimate
of the same target point from the final state via the (T - t')-step row.
At most two banks are ever live because rho > T/2.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coeffs import CoeffTable, unroll_coefficients
from .errors import (
    InfeasibleConfigError,
    PositionTooCloseToBoundaryError,
    RhoTooSmallError,
    TimeMismatchError,
    TstepRowMissingError,
    UnsupportedExponentRangeError,
)
from .fpmodel import DEFAULT_MODEL, binade_exp, clamp_range
from .stencil import GridState, StencilSpec, scan_exponent_range, step_iterated
from .synthesis import DetectorConfig, EssentialWidth, build_support

PASS = "Pass"
DETECTED = "Detected"


def kahan_dot(coeffs, values) -> float:
    """Compensated product-sum: products in order, Kahan-corrected adds."""
    if len(coeffs) != len(values):
        raise ValueError("coeffs and values must have equal length")
    s = 0.0
    comp = 0.0
    for c, v in zip(coeffs, values):
        term = c * v
        y = term - comp
        t = s + y
        comp = (t - s) - y
        s = t
    return float(s)


# ---------------------------------------------------------------------------
# detector bank evaluation


def _row_terms(table: CoeffTable, k: int, target: int,
               ew: Optional[EssentialWidth] = None):
    """Nonzero terms of the k-step row, optionally cut to the essential box.

    Returns [(source, offsets (n, dims) int array, coeffs (n,) doubles)] in
    a fixed order (sources ascending, offsets row-major) that every
    evaluation path — scalar and vectorized — walks identically, so their
    compensated sums agree bit for bit.
    """
    if k > table.tmax:
        raise TstepRowMissingError(
            f"table unrolled to {table.tmax} steps, row {k} unavailable")
    terms = []
    for v in range(table.n_arrays):
        r = table.row(k, target, v)
        if r is None:
            continue
        hi = r[0]
        extent = tuple((s - 1) // 2 for s in hi.shape)
        if ew is None:
            left = extent
            right = extent
        else:
            left = tuple(min(l, e) for l, e in zip(ew.left, extent))
            right = tuple(min(r_, e) for r_, e in zip(ew.right, extent))
        sl = tuple(slice(e - l, e + r_ + 1)
                   for e, l, r_ in zip(extent, left, right))
        cut = hi[sl]
        nz = np.argwhere(cut != 0.0)
        if nz.size == 0:
            continue
        offs = nz - np.asarray(left)
        terms.append((v, offs.astype(np.intp), cut[tuple(nz.T)]))
    return terms


def _eval_positions(state: GridState, terms, pos_idx) -> np.ndarray:
    """Kahan-compensated row evaluation, vectorized across positions."""
    dims = len(pos_idx)
    n = pos_idx[0].size
    s = np.zeros(n)
    comp = np.zeros(n)
    for v, offs, cs in terms:
        a = state.arrays[v]
        for j in range(offs.shape[0]):
            idx = tuple(pos_idx[d] + offs[j, d] for d in range(dims))
            term = cs[j] * a[idx]
            y = term - comp
            t = s + y
            comp = (t - s) - y
            s = t
    return s


def _check_position(shape, reach, t_steps, pos):
    for d, (n, w) in enumerate(zip(shape, reach)):
        margin = w * t_steps
        if not margin <= pos[d] <= n - 1 - margin:
            raise PositionTooCloseToBoundaryError(
                f"position {tuple(pos)} is within {margin} of the dim-{d} "
                f"boundary; its {t_steps}-step dependence leaves the interior")


def detection_threshold(table: CoeffTable, t_steps: int, target: int,
                        width: int, dp: int) -> float:
    """Canonical-scale check threshold 2^(exp(upper sum bound) - dp + 1).

    Multiply by 2^e_min to place it at the data's actual scale.  Using the
    offline support bound instead of the runtime value keeps the comparison
    branch-free and conservative.
    """
    lo = hi = 0.0
    for v in range(table.n_arrays):
        r = table.row(t_steps, target, v)
        if r is None:
            continue
        sup = build_support(r, width, t_steps, target, v)
        lo += sup.total.lo
        hi += sup.total.hi
    mag = max(abs(lo), abs(hi))
    if mag == 0.0:
        return 0.0
    return math.ldexp(1.0, int(binade_exp(mag)) - dp + 1)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class DetectorInstance:
    ident: int
    position: tuple
    array: int
    eval_time: int
    target_time: int
    predicted: float
    config: DetectorConfig
    threshold: float


@dataclass(frozen=True)
class Schedule:
    """Event plan for one protected run.

    checks are (check_time, baseline_time) pairs; trailing are
    (baseline_time, t_prime) pairs for banks the run ends before reaching;
    segments are the stepping run-lengths between consecutive event times.
    """

    iters: int
    t_steps: int
    rho: int
    t_delta: int
    baselines: tuple
    checks: tuple
    trailing: tuple
    segments: tuple


@dataclass(frozen=True)
class CheckOutcome:
    ident: int
    array: int
    position: tuple
    eval_time: int
    target_time: int
    predicted: float
    actual: float
    matched_bits: int
    threshold: float
    verdict: str
    mode: str = "single"

    @property
    def detected(self) -> bool:
        return self.verdict == DETECTED


def matched_bits(predicted: float, actual: float, p: int = 53) -> int:
    """Leading significand bits on which the two values agree (clamped)."""
    diff = abs(predicted - actual)
    if math.isnan(diff) or math.isinf(diff):
        return 0
    if diff == 0.0:
        return p
    ref = max(abs(predicted), abs(actual))
    return max(0, min(p, int(binade_exp(ref)) - int(binade_exp(diff))))


def _matched_bits_vec(pred: np.ndarray, act: np.ndarray, p: int = 53):
    diff = np.abs(pred - act)
    ref = np.maximum(np.abs(pred), np.abs(act))
    out = np.full(pred.shape, p, dtype=np.int64)
    bad = ~np.isfinite(diff)
    nz = (diff > 0) & ~bad
    _, e_r = np.frexp(ref[nz])
    _, e_d = np.frexp(diff[nz])
    out[nz] = np.clip(e_r - e_d, 0, p)
    out[bad] = 0
    return out


def _outcome(det: DetectorInstance, actual: float, mode: str) -> CheckOutcome:
    diff = abs(det.predicted - actual)
    verdict = DETECTED if diff >= det.threshold or math.isnan(diff) else PASS
    return CheckOutcome(det.ident, det.array, det.position, det.eval_time,
                        det.target_time, det.predicted, actual,
                        matched_bits(det.predicted, actual), det.threshold,
                        verdict, mode)


# ---------------------------------------------------------------------------
# single detector operations


def eval_detector(state: GridState, table: CoeffTable, cfg: DetectorConfig,
                  pos, array: int = 0, *, threshold: float = 0.0,
                  ident: int = 0) -> DetectorInstance:
    """Direct T-step prediction of one point from the current state."""
    pos = tuple(int(x) for x in pos)
    _check_position(state.arrays[array].shape, table.reach, cfg.t_steps, pos)
    terms = _row_terms(table, cfg.t_steps, array, cfg.ew)
    coeffs = []
    values = []
    for v, offs, cs in terms:
        a = state.arrays[v]
        for j in range(offs.shape[0]):
            coeffs.append(float(cs[j]))
            values.append(float(a[tuple(pos[d] + offs[j, d]
                                        for d in range(len(pos)))]))
    predicted = kahan_dot(coeffs, values)
    return DetectorInstance(ident, pos, array, state.step,
                            state.step + cfg.t_steps, predicted, cfg,
                            threshold)


def detector_check(state: GridState, det: DetectorInstance) -> CheckOutcome:
    """Compare a detector's prediction against the computed value."""
    if state.step != det.target_time:
        raise TimeMismatchError(
            f"check at step {state.step}, detector targets {det.target_time}")
    actual = float(state.arrays[det.array][det.position])
    return _outcome(det, actual, "single")


def trailing_check(state_t0: GridState, state_t1: GridState,
                   table: CoeffTable, cfg: DetectorConfig, pos,
                   array: int = 0, *, threshold: Optional[float] = None,
                   ident: int = 0) -> CheckOutcome:
    """Double-direct comparison closing out a bank the run ended inside.

    The T-step estimate from the earlier baseline is compared against the
    (T - t')-step estimate of the same target point from the later state;
    both miss the target time, but their difference still obeys the
    round-off threshold, and corruption striking between the two baselines
    separates them.
    """
    t_prime = state_t1.step - state_t0.step
    if not 0 <= t_prime < cfg.t_steps:
        raise TimeMismatchError(
            f"baseline gap {t_prime} outside [0, T={cfg.t_steps})")
    det = eval_detector(state_t0, table, cfg, pos, array, ident=ident,
                        threshold=_default_threshold(state_t0, table, cfg,
                                                     array, threshold))
    k = cfg.t_steps - t_prime
    terms = _row_terms(table, k, array)
    pos_idx = tuple(np.asarray([p], dtype=np.intp) for p in det.position)
    actual = float(_eval_positions(state_t1, terms, pos_idx)[0])
    return _outcome(det, actual, "trailing")


def _default_threshold(state, table, cfg, array, given):
    if given is not None:
        return given
    rng = clamp_range(scan_exponent_range(state))
    canon = detection_threshold(table, cfg.t_steps, array, rng.width, cfg.dp)
    return math.ldexp(canon, rng.e_min)


# ---------------------------------------------------------------------------
# scheduling and placement


def plan_schedule(iters: int, cfg: DetectorConfig) -> Schedule:
    """Baseline/check/trailing event plan for `iters` steps.

    Banks are evaluated at every multiple of rho before the end; a bank is
    checked normally when its target time fits, otherwise (partial progress)
    it is closed out by a trailing comparison at the end.
    """
    t, rho = cfg.t_steps, cfg.rho
    if rho < 1 or 2 * rho <= t:
        raise RhoTooSmallError(f"need rho > T/2, got rho={rho}, T={t}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    baselines = tuple(range(0, iters, rho))
    checks = tuple((b + t, b) for b in baselines if b + t <= iters)
    trailing = tuple((b, iters - b) for b in baselines
                     if b + t > iters and iters - b > 0)
    events = sorted({0, iters} | set(baselines) | {c for c, _ in checks})
    segments = tuple(b - a for a, b in zip(events, events[1:]))
    return Schedule(iters, t, rho, t - rho, baselines, checks, trailing,
                    segments)


def placement(spec: StencilSpec, cfg: DetectorConfig, target: int = 0):
    """Detector positions: a pw-spaced lattice inside the protected interior.

    Per dimension the first detector sits at w*T + ceil(pw/2) so its P_w box
    starts where the boundary-influenced band ends; spacing is exactly pw,
    tiling the interior.  A grid too small for even one lattice point gets a
    single centered detector if any interior exists.
    """
    shape = spec.shape()
    reach = spec.reach()
    axes = []
    for d in range(spec.dims):
        margin = reach[d] * cfg.t_steps
        lo, hi = margin, shape[d] - 1 - margin
        if lo > hi:
            raise InfeasibleConfigError(
                f"T={cfg.t_steps} leaves no protected interior on a "
                f"{shape[d]}-point axis")
        start = lo + (cfg.pw[d] + 1) // 2
        xs = list(range(start, hi + 1, cfg.pw[d]))
        if not xs:
            xs = [min(start, hi)]
        axes.append(xs)
    grids = np.meshgrid(*[np.asarray(a, dtype=np.intp) for a in axes],
                        indexing="ij")
    return tuple(g.ravel() for g in grids)


# ---------------------------------------------------------------------------
# the protected run


@dataclass
class RunManifest:
    """Reproducibility record embedded next to every artifact."""

    benchmark: str = ""
    grid: tuple = ()
    steps: int = 0
    udp: int = 0
    cov: float = 0.0
    e_min: int = 0
    e_max: int = 0
    width: int = 0
    config: Optional[dict] = None
    spec_hash: str = ""
    seed: Optional[int] = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {
            "benchmark": self.benchmark,
            "grid": list(self.grid),
            "steps": self.steps,
            "udp": self.udp,
            "cov": self.cov,
            "exponent_range": [self.e_min, self.e_max, self.width],
            "config": self.config,
            "spec_hash": self.spec_hash,
            "seed": self.seed,
            "threads": self.threads,
        }
        doc.update(self.extra)
        return doc

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)
            f.write("\n")


def _resolve_bench(bench, grid):
    if isinstance(bench, str):
        from .benchmarks import build_benchmark
        if grid is None:
            raise ValueError("grid size required when passing a benchmark id")
        return build_benchmark(bench, grid)
    spec, state = bench
    return spec, state


def run_protected(bench, lut, udp: int, cov: float, steps: int, *,
                  grid: Optional[int] = None, table: Optional[CoeffTable] = None,
                  hook: Optional[Callable] = None,
                  stepper: Optional[Callable] = None,
                  early_stop: Optional[Callable] = None,
                  revalidate: bool = False, target: int = 0):
    """Run `steps` iterations with embedded detectors.

    bench is a benchmark id (with `grid`) or a (spec, state) pair.  The
    exponent range is scanned once up front; the configuration comes from
    the lookup table (falling back across profiled widths); placement,
    scheduling, evaluation, and checking all follow from it.  `hook(state)`
    runs between the events at a step and the step itself (injection point);
    `stepper(spec, state)` replaces the grid update (tiled variants);
    `early_stop(state)` ends the run at a baseline-independent point, with
    trailing checks closing out live banks.

    Returns (final GridState, list of CheckOutcome ordered by check time).
    """
    spec, state = _resolve_bench(bench, grid)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    scanned = scan_exponent_range(state)
    rng = clamp_range(scanned)
    cfg = lut.lookup(rng.width, udp, cov)

    # re-validate the coverage goal on this grid; the table may have been
    # profiled on another one
    from .synthesis import adjust_coverage, interior_fraction
    adjust_coverage(cov, interior_fraction(spec.shape(), spec.reach(),
                                           cfg.t_steps))

    if table is None or table.tmax < cfg.t_steps:
        table = unroll_coefficients(spec, cfg.t_steps)
    canon = detection_threshold(table, cfg.t_steps, target, rng.width, cfg.dp)
    threshold = math.ldexp(canon, rng.e_min)

    schedule = plan_schedule(steps, cfg)
    pos_idx = placement(spec, cfg, target)
    positions = list(zip(*(ax.tolist() for ax in pos_idx)))
    eval_terms = _row_terms(table, cfg.t_steps, target, cfg.ew)
    step_fn = stepper if stepper is not None else step_iterated

    checks_at = {}
    for check_time, baseline in schedule.checks:
        checks_at.setdefault(check_time, []).append(baseline)
    baseline_set = set(schedule.baselines)

    def bank_outcomes(bank, actual, mode):
        first_id, eval_t, predicted = bank
        mb = _matched_bits_vec(predicted, actual)
        diff = np.abs(predicted - actual)
        hit = (diff >= threshold) | np.isnan(diff)
        return [
            CheckOutcome(first_id + i, target, positions[i], eval_t,
                         eval_t + cfg.t_steps, float(predicted[i]),
                         float(actual[i]), int(mb[i]), threshold,
                         DETECTED if hit[i] else PASS, mode)
            for i in range(predicted.size)
        ]

    banks = {}          # baseline time -> (first ident, eval time, predictions)
    outcomes = []
    next_ident = 0
    stopped = False

    for t in range(steps + 1):
        if t in checks_at:
            for baseline in checks_at[t]:
                actual = state.arrays[target][pos_idx]
                outcomes.extend(bank_outcomes(banks.pop(baseline), actual,
                                              "single"))
        if not stopped and t in baseline_set and t < steps:
            predicted = _eval_positions(state, eval_terms, pos_idx)
            banks[t] = (next_ident, t, predicted)
            next_ident += predicted.size
            if len(banks) > 2:
                raise RuntimeError(
                    "internal invariant broken: more than two live banks")
            if revalidate:
                now = scan_exponent_range(state)
                if now.width > 0 and now.e_max > rng.e_max:
                    raise UnsupportedExponentRangeError(
                        f"data outgrew the scanned range at step {t}: "
                        f"e_max {now.e_max} > {rng.e_max}")
        if t == steps:
            break
        if hook is not None:
            hook(state)
        step_fn(spec, state)
        if early_stop is not None and early_stop(state):
            stopped = True
            break

    # close out banks the run ended inside
    for baseline in sorted(banks):
        t_prime = state.step - baseline
        if t_prime <= 0:
            continue
        if t_prime >= cfg.t_steps:
            actual = state.arrays[target][pos_idx]
            outcomes.extend(bank_outcomes(banks[baseline], actual, "single"))
            continue
        k = cfg.t_steps - t_prime
        terms = _row_terms(table, k, target)
        actual = _eval_positions(state, terms, pos_idx)
        outcomes.extend(bank_outcomes(banks[baseline], actual, "trailing"))
    return state, outcomes


# ---------------------------------------------------------------------------
# outcome serialization

OUTCOME_FIELDS = ("detector_id", "array", "position", "eval_t", "target_t",
                  "predicted_hex", "actual_hex", "matched_bits", "verdict")


def write_outcomes(path, outcomes, manifest=None):
    """Outcome stream as CSV, one row per check, positions ;-joined.

    `manifest` (a JSON-serializable dict) is embedded as a leading comment
    line; readers skip comment lines.
    """
    with open(path, "w", newline="") as f:
        if manifest is not None:
            f.write("#manifest " + json.dumps(manifest, sort_keys=True) + "\n")
        w = csv.writer(f)
        w.writerow(OUTCOME_FIELDS)
        for o in outcomes:
            w.writerow([o.ident, o.array, ";".join(map(str, o.position)),
                        o.eval_time, o.target_time, o.predicted.hex(),
                        o.actual.hex(), o.matched_bits, o.verdict])


def read_outcomes(path):
    """CheckOutcome rows back from CSV (config-free, threshold omitted)."""
    out = []
    with open(path, newline="") as f:
        body = (line for line in f if not line.startswith("#"))
        for row in csv.DictReader(body):
            pos = tuple(int(x) for x in row["position"].split(";"))
            pred = float.fromhex(row["predicted_hex"])
            act = float.fromhex(row["actual_hex"])
            out.append(CheckOutcome(int(row["detector_id"]), int(row["array"]),
                                    pos, int(row["eval_t"]),
                                    int(row["target_t"]), pred, act,
                                    int(row["matched_bits"]), 0.0,
                                    row["verdict"]))
    return out
