#!/usr/bin/env python3
"""Run every registered experiment at its production defaults.

Results land in the shared result cache (SBMLAB_CACHE, defaulting to
<repo>/runs/cache), so a later `sbmlab --experiment ...` or the
acceptance suite picks them up without recomputing.  Cheap experiments
run first so most of the cache fills early; the multi-hour ones
(two-sim-agreement, exit-law, exponent-fine) close the queue.

Usage:
    python3 scripts/run_all.py [--only name1,name2] [--workers K]
"""

import argparse
import os
import sys
import time
import traceback
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

REPO = Path(__file__).resolve().parents[1]
os.environ.setdefault("SBMLAB_CACHE", str(REPO / "runs" / "cache"))

from sbmlab.experiments import experiment_names, run_experiment  # noqa: E402

# cheap-to-expensive; the tail entries are the overnight ones
SEQUENCE = [
    "criticality",
    "qvar",
    "pde",
    "csbp-law",
    "range-interval",
    "extinction",
    "mean-localtime",
    "tanaka",
    "oscillation",
    "envelope",
    "exponent",
    "cluster-tail",
    "superposition",
    "two-sim-agreement",
    "exit-law",
    "exponent-fine",
]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--only", default="",
                    help="comma-separated subset to run, in the given order")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    names = [n for n in args.only.split(",") if n] or SEQUENCE
    unknown = set(names) - set(experiment_names())
    if unknown:
        ap.error(f"unknown experiments: {sorted(unknown)}")

    print(f"cache: {os.environ['SBMLAB_CACHE']}", flush=True)
    worst = 0
    for name in names:
        t0 = time.time()
        print(f"[{time.strftime('%H:%M:%S')}] {name} ...", flush=True)
        try:
            res = run_experiment(name, workers=args.workers)
        except Exception:
            traceback.print_exc()
            worst = max(worst, 1)
            continue
        wall = time.time() - t0
        cached = " (cached)" if res.meta.get("cache_hit") else ""
        print(f"  exit={res.exit_code}  wall={wall:.1f}s{cached}", flush=True)
        for v in res.verdicts:
            state = {True: "pass", False: "FAIL", None: "n/a"}[v.passed]
            print(f"    {v.name}: {state}  measured={v.measured:.6g} "
                  f"target={v.target:g} tol={v.tolerance:g}", flush=True)
        worst = max(worst, res.exit_code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
