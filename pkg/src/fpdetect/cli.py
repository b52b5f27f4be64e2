"""Batch front end tying the pipeline stages together.

Four subcommands:

  synth    offline analysis for one stencil: coefficient table + config LUT
  run      one protected execution, outcome stream to CSV
  inject   fault/bug campaigns, per-trial CSV plus summary JSON
  report   reshape campaign outputs into plot-ready tables

`run` exits 0 when no check fired, 2 when at least one detection occurred,
and 1 on configuration errors (unsupported coverage, unknown benchmark,
I/O trouble); the other subcommands use 0/1.  All randomness flows from
--seed, so identical invocations produce byte-identical artifacts apart
from the timestamp inside each embedded manifest.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import time

from . import __version__
from .benchmarks import BENCHMARKS, build_benchmark
from .coeffs import save_table, unroll_coefficients
from .errors import (
    FpdetectError,
    MalformedInputError,
    UnsupportedCoverageError,
)
from .fpmodel import clamp_range, error_estimate
from .inject import (
    CAMPAIGN_MODES,
    CampaignConfig,
    SoftFaultPlan,
    make_fault_hook,
    read_campaign_csv,
    run_campaign,
    write_campaign_csv,
)
from .runtime import RunManifest, run_protected, write_outcomes
from .stencil import run_iterated, scan_exponent_range, spec_from_json
from .synthesis import (
    ConfigLUT,
    adjust_coverage,
    interior_fraction,
    offline_profile,
)

DEFAULT_SEED = 1729
TMAX_CAP_1D = 256
TMAX_CAP_2D = 64  # dense 2-d rows grow as (2T+1)^2 per table entry


def resolve_threads(flag):
    """--threads flag, else FPDETECT_THREADS, else 1."""
    value = flag if flag is not None else os.environ.get("FPDETECT_THREADS", 1)
    n = int(value)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    return n


def _default_grid(bench_id: str) -> int:
    return 4096 if BENCHMARKS[bench_id].dims == 1 else 128


def _cov_arg(value: float) -> float:
    """Coverage accepted as a fraction (0.9) or percentage (90)."""
    return value / 100.0 if value > 1.0 else value


def _manifest(command: str, *, seed=None, threads=1, **fields) -> RunManifest:
    man = RunManifest(seed=seed, threads=threads)
    man.extra["command"] = command
    man.extra["toolVersion"] = __version__
    man.extra["timestamp"] = datetime.datetime.now(
        datetime.timezone.utc).isoformat(timespec="seconds")
    for key, val in fields.items():
        if val is not None:
            setattr(man, key, val) if hasattr(man, key) \
                else man.extra.__setitem__(key, val)
    return man


def _load_spec(args):
    """The stencil under analysis: a benchmark id or a spec JSON file."""
    if getattr(args, "spec", None):
        with open(args.spec) as f:
            return spec_from_json(json.load(f)), None
    grid = getattr(args, "grid", None) or _default_grid(args.bench)
    return build_benchmark(args.bench, grid)


def parse_fault(text: str) -> SoftFaultPlan:
    """`bitflip:t=3,a=0,i=40x60,b=51` or `bitflip2:t=3,a=0,s=120,b=7+93`."""
    mode, _, rest = text.partition(":")
    try:
        kv = dict(item.split("=", 1) for item in rest.split(",") if item)
        t, a = int(kv["t"]), int(kv.get("a", 0))
        if mode == "bitflip":
            index = tuple(int(x) for x in kv["i"].split("x"))
            return SoftFaultPlan(mode, t, a, index=index, bit=int(kv["b"]))
        if mode == "bitflip2":
            bits = tuple(sorted(int(x) for x in kv["b"].split("+")))
            return SoftFaultPlan(mode, t, a, section=int(kv["s"]), bits=bits)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"cannot parse fault spec {text!r}: {exc}") from exc
    raise ValueError(
        f"--inject supports bitflip/bitflip2 (campaigns cover the bug "
        f"modes), got {mode!r}")


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args, threads: int) -> int:
    if args.tmax < 1:
        print("synth: --tmax must be >= 1", file=sys.stderr)
        return 1
    spec, _ = _load_spec(args)
    cap = TMAX_CAP_1D if spec.dims == 1 else TMAX_CAP_2D
    tmax = min(args.tmax, cap)
    if tmax < args.tmax:
        print(f"note: tmax capped at {cap} for {spec.dims}-d stencils")

    table = unroll_coefficients(spec, tmax)
    save_table(table, args.out_table)

    exp_set = list(range(1, args.exp_max + 1))
    udp_set = list(range(1, args.udp_max + 1))
    cov_set = [c / 100.0 for c in range(0, 101, args.cov_step)]
    lut = offline_profile(spec, table, tmax, exp_set, udp_set, cov_set)

    man = _manifest("synth", seed=None, threads=threads,
                    benchmark=getattr(args, "bench", None) or args.spec,
                    spec_hash=spec.spec_hash(),
                    tablePath=args.out_table, tmax=tmax)
    lut.meta["manifest"] = man.to_json()
    lut.save(args.out_lut)

    for w in exp_set:
        est = error_estimate(spec, table, tmax, 0, w)
        print(f"width {w:2d}: dp at T={tmax} -> {est.dp}")
    print(f"feasible widths of {len(exp_set)} per (udp, cov%):")
    header = " ".join(f"{int(c * 100):3d}" for c in cov_set)
    print(f"  udp \\ cov {header}")
    for u in udp_set:
        row = " ".join(
            f"{sum(1 for w in exp_set if lut.get(w, u, c) is not None):3d}"
            for c in cov_set)
        print(f"  {u:9d} {row}")
    print(f"wrote {args.out_table} and {args.out_lut} "
          f"({len(lut.entries)} cells)")
    return 0


# ---------------------------------------------------------------------------
# run

def cmd_run(args, threads: int) -> int:
    grid = args.grid or _default_grid(args.bench)
    spec, state = build_benchmark(args.bench, grid)
    cov = _cov_arg(args.cov)
    # T=1 has the largest protectable interior; a goal beyond it cannot be
    # met on this grid by any configuration
    adjust_coverage(cov, interior_fraction(spec.shape(), spec.reach(), 1))
    plan = parse_fault(args.inject) if args.inject else None

    scanned = clamp_range(scan_exponent_range(state))
    if args.lut:
        lut = ConfigLUT.load(args.lut)
        table = None
    else:
        tmax = min(TMAX_CAP_1D if spec.dims == 1 else TMAX_CAP_2D, 16)
        table = unroll_coefficients(spec, tmax)
        lut = offline_profile(spec, table, tmax, [scanned.width],
                              [args.udp], [cov])

    cfg = lut.lookup(scanned.width, args.udp, cov)
    steps = args.steps if args.steps else 2 * cfg.t_steps

    applied = []
    hook = make_fault_hook(plan, applied) if plan else None
    t0 = time.perf_counter()
    final, outcomes = run_protected((spec, state.clone()), lut, args.udp,
                                    cov, steps, table=table, hook=hook)
    t_protected = time.perf_counter() - t0
    t0 = time.perf_counter()
    run_iterated(spec, state.clone(), steps)
    t_plain = time.perf_counter() - t0
    overhead = (t_protected / t_plain - 1.0) * 100.0 if t_plain > 0 else 0.0

    detections = sum(1 for o in outcomes if o.detected)
    man = _manifest("run", seed=None, threads=threads,
                    benchmark=args.bench, grid=spec.shape(), steps=steps,
                    udp=args.udp, cov=cov, e_min=scanned.e_min,
                    e_max=scanned.e_max, width=scanned.width,
                    config=cfg.to_json(), spec_hash=spec.spec_hash(),
                    injected=args.inject,
                    overheadPct=round(overhead, 1))
    write_outcomes(args.out, outcomes, manifest=man.to_json())
    print(f"{args.bench}: {len(outcomes)} checks, {detections} detected, "
          f"config T={cfg.t_steps} rho={cfg.rho} dp={cfg.dp}")
    print(f"overhead: {overhead:+.1f}% wall vs unprotected (informational)")
    return 2 if detections else 0


# ---------------------------------------------------------------------------
# inject

def cmd_inject(args, threads: int) -> int:
    if args.trials < 1:
        print("inject: --trials must be >= 1", file=sys.stderr)
        return 1
    cfg = CampaignConfig(
        benchmark=args.bench, mode=args.mode, trials=args.trials,
        seed=args.seed, udp=args.udp, cov=_cov_arg(args.cov),
        grid=args.grid or _default_grid(args.bench), steps=args.steps,
        constrain="protected" if args.protected_only else None)
    rep = run_campaign(cfg, workers=threads)

    base = args.out
    for suffix in (".csv", ".json"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    man = _manifest("inject", seed=args.seed, threads=threads,
                    benchmark=rep.benchmark, steps=rep.steps, udp=rep.udp,
                    cov=rep.cov, mode=args.mode, trials=rep.trials,
                    config=rep.config or None)
    write_campaign_csv(base + ".csv", rep.rows, manifest=man.to_json())
    summary = rep.to_json()
    summary["manifest"] = man.to_json()
    with open(base + ".json", "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"{rep.benchmark} {rep.mode}: {rep.trials} trials, "
          f"{rep.manifested_count} manifested, {rep.detected_count} "
          f"detected, protected-class rate "
          f"{rep.detection_rate_protected:.3f}, "
          f"{rep.false_positives} false positives")
    print(f"wrote {base}.csv and {base}.json")
    return 0


# ---------------------------------------------------------------------------
# report

_SUMMARY_KEYS = (
    "benchmark", "mode", "trials", "steps", "seed", "reachedCount",
    "manifestedCount", "detectedCount", "detectionRateProtected",
    "detectionRateUnprotected", "falsePositives",
)


def _load_report_input(path) -> dict:
    """One campaign artifact -> flat metrics dict (summary JSON or rows CSV)."""
    if os.path.getsize(path) == 0:
        raise MalformedInputError(f"{path}: empty file")
    if path.endswith(".json"):
        with open(path) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise MalformedInputError(f"{path}: {exc}") from exc
        missing = [k for k in ("benchmark", "mode", "trials") if k not in doc]
        if missing:
            raise MalformedInputError(
                f"{path}: not a campaign summary (missing {missing})")
        return {k: doc.get(k, "") for k in _SUMMARY_KEYS}
    try:
        rows = read_campaign_csv(path)
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedInputError(f"{path}: not a campaign CSV ({exc})") from exc
    if not rows:
        raise MalformedInputError(f"{path}: no data rows")
    manifested = sum(r.manifested for r in rows)
    detected = sum(r.detected for r in rows)
    det_of_man = sum(1 for r in rows if r.manifested and r.detected)
    stem = os.path.splitext(os.path.basename(path))[0]
    return {
        "benchmark": stem, "mode": rows[0].mode, "trials": len(rows),
        "steps": "", "seed": "",
        "reachedCount": sum(r.reached for r in rows),
        "manifestedCount": manifested, "detectedCount": detected,
        "detectionRateProtected": round(det_of_man / manifested, 4)
        if manifested else 0.0,
        "detectionRateUnprotected": "",
        "falsePositives": sum(1 for r in rows
                              if r.detected and not r.manifested),
    }


def cmd_report(args, threads: int) -> int:
    tables = [_load_report_input(p) for p in args.inputs]
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        if len(tables) == 1:
            if args.format == "json":
                json.dump(tables[0], out, indent=1, sort_keys=True)
                out.write("\n")
            else:
                out.write(",".join(_SUMMARY_KEYS) + "\n")
                out.write(",".join(str(tables[0][k])
                                   for k in _SUMMARY_KEYS) + "\n")
        else:
            # side-by-side: one row per metric, one column per input
            labels = [f"{t['benchmark']}:{t['mode']}#{i}"
                      for i, t in enumerate(tables)]
            if args.format == "json":
                doc = {"columns": labels,
                       "rows": {k: [t[k] for t in tables]
                                for k in _SUMMARY_KEYS}}
                json.dump(doc, out, indent=1, sort_keys=True)
                out.write("\n")
            else:
                out.write("metric," + ",".join(labels) + "\n")
                for k in _SUMMARY_KEYS:
                    out.write(k + "," + ",".join(str(t[k])
                                                 for t in tables) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# parser plumbing

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: FPDETECT_THREADS or 1)")

    p = argparse.ArgumentParser(
        prog="fpdetect",
        description="Round-off analysis and runtime error detectors "
                    "for iterative stencil computations.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", parents=[common],
                        help="offline analysis: coefficient table + LUT")
    g = ps.add_mutually_exclusive_group(required=True)
    g.add_argument("--bench", choices=sorted(BENCHMARKS))
    g.add_argument("--spec", help="stencil spec JSON file")
    ps.add_argument("--grid", type=int, help="points per dimension")
    ps.add_argument("--tmax", type=int, required=True,
                    help="largest detection interval to profile")
    ps.add_argument("--out-table", default="coeffs.json")
    ps.add_argument("--out-lut", default="lut.json")
    ps.add_argument("--exp-max", type=int, default=20)
    ps.add_argument("--udp-max", type=int, default=40)
    ps.add_argument("--cov-step", type=int, default=5)
    ps.set_defaults(func=cmd_synth)

    pr = sub.add_parser("run", parents=[common],
                        help="one protected execution")
    pr.add_argument("--bench", required=True, choices=sorted(BENCHMARKS))
    pr.add_argument("--lut", help="LUT file from synth (else synthesized)")
    pr.add_argument("--udp", type=int, required=True)
    pr.add_argument("--cov", type=float, required=True,
                    help="coverage goal, fraction or percent")
    pr.add_argument("--steps", type=int,
                    help="iterations (default: 2x detection interval)")
    pr.add_argument("--grid", type=int)
    pr.add_argument("--inject",
                    help="deterministic fault, e.g. bitflip:t=3,a=0,i=40x60,b=51")
    pr.add_argument("--out", default="outcomes.csv")
    pr.set_defaults(func=cmd_run)

    pi = sub.add_parser("inject", parents=[common],
                        help="fault/bug campaign")
    pi.add_argument("--bench", required=True, choices=sorted(BENCHMARKS))
    pi.add_argument("--mode", required=True, choices=sorted(CAMPAIGN_MODES))
    pi.add_argument("--trials", type=int, default=100)
    pi.add_argument("--seed", type=int, default=DEFAULT_SEED)
    pi.add_argument("--udp", type=int, required=True)
    pi.add_argument("--cov", type=float, required=True)
    pi.add_argument("--grid", type=int)
    pi.add_argument("--steps", type=int)
    pi.add_argument("--protected-only", action="store_true",
                    help="draw flips only from the guaranteed class")
    pi.add_argument("--out", default="campaign")
    pi.set_defaults(func=cmd_inject)

    pp = sub.add_parser("report", parents=[common],
                        help="plot-ready tables from campaign outputs")
    pp.add_argument("--in", dest="inputs", required=True, nargs="+",
                    help="campaign summary JSON or rows CSV (1+ files)")
    pp.add_argument("--format", choices=("csv", "json"), default="csv")
    pp.add_argument("--out")
    pp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        threads = resolve_threads(args.threads)
        return args.func(args, threads)
    except UnsupportedCoverageError as exc:
        print(f"unsupported coverage: {exc}", file=sys.stderr)
        return 1
    except (FpdetectError, ValueError, OSError) as exc:
        print(f"fpdetect {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
