"""Experiment runner: resolve parameters, dispatch, persist artifacts.

Parameter resolution, lowest to highest precedence:

    registry defaults  <  --config file  <  SBMLAB_* env vars  <  flags

Config files are flat ``key = value`` lines with ``#`` comments, except
that a file whose first non-blank character is ``{`` is parsed as a
manifest (the JSON written by a previous run), which makes every
``manifest.txt`` directly re-runnable: the stored experiment name and
parameter block reproduce the original tables byte-for-byte.

Environment overrides use the parameter name upper-cased with an
``SBMLAB_`` prefix (``SBMLAB_REPLICATES=500``).  ``SBMLAB_CACHE`` is
reserved for the result cache directory.  Env keys an experiment does
not define are skipped with a warning, since the environment is shared
across experiments; misspelled config-file keys and flags are hard
errors.

Exit codes: 0 all verdicts pass, 2 some verdict fails, 3 no verdict is
decidable (insufficient data), 4 unknown experiment or invalid
configuration, 5 output I/O failure.
"""

import argparse
import ast
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .experiments import experiment_defaults, experiment_names, run_experiment

# the public catalog: every experiment with the law it exercises
CATALOG = [
    ("extinction", "P(dead by t) = exp(-2*y0/t), plus the exact"
     " finite-N birth-death oracle (N*t/(2+N*t))^n0"),
    ("mean-localtime", "E L_t(x) = sqrt(2t/pi)*exp(-x^2/(2t))"
     " - |x|*erfc(|x|/sqrt(2t)), the expected occupation density"),
    ("tanaka", "centred occupation functional of |x-.|/2: mean 0,"
     " second moment t^2/2 + x^2*t"),
    ("qvar", "occupation integral summed particle-major vs bin-major"
     " agrees to float roundoff on every replicate"),
    ("exit-law", "mass frozen at level r: P(Y_r = 0) = exp(-6*y0/r^2)"
     " and E[Y_r] = y0 exactly"),
    ("csbp-law", "E exp(-lam*Y_r) = exp(-6*y0/(r + sqrt(6/lam))^2) for"
     " the 3/2-stable mass cascade in the level variable"),
    ("two-sim-agreement", "particle-ladder exit masses vs Levy-driven"
     " cascade paths: two-sample Kolmogorov-Smirnov"),
    ("pde", "shooting solve of u'' = u^2, u(r) = lam, against the closed"
     " form 6/(r - x + sqrt(6/lam))^2"),
    ("exponent", "log L(R-d) vs log d slope near the support edge;"
     " cubic scaling means slope 3"),
    ("oscillation", "dyadic oscillation ladder of L at the edge and the"
     " implied scaling exponent"),
    ("envelope", "pointwise bounds 2^g*d^g above and 2^(-g/2)*d^g below"
     " near the edge: satisfied fractions with distance resolution"),
    ("cluster-tail", "single-ancestor reach: N*P(cluster hits r)"
     " approaches 6/r^2"),
    ("superposition", "full-system reach 1 - exp(-6*y0/r^2) rebuilt from"
     " Poisson-thinned single-ancestor clusters"),
    ("range-interval", "occupied range is an interval: census of"
     " interior zero-mass bins"),
]

_FLAG_TO_PARAM = [("seed", "seed"), ("particles", "N"), ("dt", "dt"),
                  ("bin_width", "h"), ("replicates", "replicates")]
_ENV_PREFIX = "SBMLAB_"
_ENV_RESERVED = {"SBMLAB_CACHE"}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the exit contract wants 4."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(4)


def _parse_value(text: str):
    """Literal if it parses (ints, floats, tuples, ...), else the string."""
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def load_config(path):
    """Return (experiment_name_or_None, params) from a config file.

    Flat ``key = value`` lines, ``#`` starts a comment.  A leading ``{``
    switches to manifest mode and reads the experiment/params echo.
    """
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        raw = json.loads(text)
        return raw["experiment"], dict(raw["params"])
    name = None
    params = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "experiment":
            name = val
        else:
            params[key] = _parse_value(val)
    return name, params


def _env_overrides(defaults: dict) -> dict:
    out = {}
    for key, val in sorted(os.environ.items()):
        if not key.startswith(_ENV_PREFIX) or key in _ENV_RESERVED:
            continue
        param = key[len(_ENV_PREFIX):].lower()
        if param not in defaults:
            print(f"warning: ignoring {key} (no such parameter)",
                  file=sys.stderr)
            continue
        out[param] = _parse_value(val)
    return out


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_tables(result, outdir: Path) -> list:
    """One RFC-4180-style CSV per table, floats at 17 significant digits."""
    paths = []
    for tname in sorted(result.tables):
        table = result.tables[tname]
        path = outdir / f"{result.experiment}_{tname}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([_fmt_cell(v) for v in row])
        paths.append(path)
    return paths


def write_manifest(result, outdir: Path, workers: int) -> Path:
    manifest = {
        "code_version": __version__,
        "experiment": result.experiment,
        "params": result.params,
        "workers": workers,
        "tables": sorted(result.tables),
        "verdicts": [asdict(v) for v in result.verdicts],
        "meta": result.meta,
    }
    path = outdir / "manifest.txt"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def main(argv=None) -> int:
    ap = _Parser(prog="sbmlab",
                 description="run a named super-Brownian experiment")
    ap.add_argument("--experiment", metavar="NAME")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--particles", type=int, help="particle count N")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--bin-width", type=float, dest="bin_width",
                    help="occupation bin width h")
    ap.add_argument("--replicates", type=int)
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--list-experiments", action="store_true")
    args = ap.parse_args(argv)

    if args.list_experiments:
        width = max(len(n) for n, _ in CATALOG)
        for name, desc in CATALOG:
            print(f"{name:<{width}}  {desc}")
        return 0

    name = args.experiment
    overrides = {}
    if args.config:
        try:
            cfg_name, overrides = load_config(args.config)
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
            print(f"error: bad config {args.config}: {e}", file=sys.stderr)
            return 4
        name = name or cfg_name
    if not name:
        print("error: no experiment named (use --experiment or --config, "
              "see --list-experiments)", file=sys.stderr)
        return 4
    if name not in experiment_names():
        print(f"error: unknown experiment {name!r}", file=sys.stderr)
        return 4

    overrides.update(_env_overrides(experiment_defaults(name)))
    for flag, param in _FLAG_TO_PARAM:
        val = getattr(args, flag)
        if val is not None:
            overrides[param] = val

    try:
        result = run_experiment(name, overrides, workers=args.workers)
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return 4

    outdir = Path(args.out) if args.out else Path("runs") / name
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        paths = write_tables(result, outdir)
        paths.append(write_manifest(result, outdir, args.workers))
    except OSError as e:
        print(f"error: cannot write artifacts: {e}", file=sys.stderr)
        return 5

    state = {True: "pass", False: "FAIL", None: "indeterminate"}
    for v in result.verdicts:
        print(f"[{state[v.passed]}] {v.name}: measured={v.measured:.6g} "
              f"target={v.target:g} tolerance={v.tolerance:g}  ({v.note})")
    cached = " [cached result]" if result.meta.get("cache_hit") else ""
    print(f"wrote {len(paths)} files to {outdir}{cached}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
