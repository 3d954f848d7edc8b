"""Named Monte Carlo experiments over the closed 14-name set.

Each experiment is a driver function taking a resolved parameter dict
and a worker count, returning tables, verdicts and run metadata.  All
drivers follow the same reproducibility scheme: work is split into
fixed-size chunks whose boundaries and stream assignments depend only
on the parameters (never on the worker count), chunk results are
merged in chunk order, and every random draw comes from a counter-based
stream keyed by (seed, replicate index, domain).  Consequently the
output bytes are identical for any worker count.

An optional result cache keyed by the resolved parameters lives under
the directory named by the SBMLAB_CACHE environment variable; it
exists so that long runs can be produced once (e.g. overnight) and
re-read by tests, and stores exactly what a fresh run returns.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import clusters, csbp, localtime, regularity, stats
from .engine import SimConfig, mass_chain, run_absorbed, run_ancestor_batch, \
    run_until_extinction
from .exitmeasure import continuum_matched_level, ladder_ensemble
from .stats import McSummary, merge_summaries

CACHE_SALT = "sbmlab-results-1"


# ---------------------------------------------------------------------------
# result containers

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


@dataclass
class Table:
    columns: list
    rows: list

    def to_csv_text(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"


@dataclass
class Verdict:
    """One acceptance target: measured value vs target with tolerance.

    passed is True/False, or None for indeterminate (insufficient
    data).  note carries context such as the tolerance rule applied.
    """

    name: str
    measured: float
    target: float
    tolerance: float
    passed: bool | None
    note: str = ""


@dataclass
class ExperimentResult:
    experiment: str
    params: dict
    tables: dict
    verdicts: list
    meta: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        flags = [v.passed for v in self.verdicts]
        if any(f is False for f in flags):
            return 2
        if any(f is None for f in flags):
            return 3
        return 0

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)


# ---------------------------------------------------------------------------
# chunk scheduling (the only place worker count appears)

def _run_chunks(fn, arg_list, workers: int) -> list:
    """Apply fn to each args tuple, in order.  With workers > 1 the
    chunks run in a fork pool; results are still merged in submission
    order, so the outcome is identical for any worker count."""
    if workers <= 1 or len(arg_list) <= 1:
        return [fn(a) for a in arg_list]
    import multiprocessing as mp

    with mp.get_context("fork").Pool(min(workers, len(arg_list))) as pool:
        return pool.map(fn, arg_list)


def _chunk_ranges(total: int, chunk: int):
    return [(lo, min(chunk, total - lo)) for lo in range(0, total, chunk)]


# ---------------------------------------------------------------------------
# cache

def _cache_file(experiment: str, params: dict):
    root = os.environ.get("SBMLAB_CACHE")
    if not root:
        return None
    key = json.dumps({"experiment": experiment, "params": params,
                      "salt": CACHE_SALT}, sort_keys=True, default=list)
    digest = hashlib.sha256(key.encode()).hexdigest()[:20]
    return os.path.join(root, f"{experiment}-{digest}.json")


def _cache_load(path) -> ExperimentResult | None:
    if path is None or not os.path.exists(path):
        return None
    with open(path) as f:
        raw = json.load(f)
    tables = {name: Table(columns=t["columns"],
                          rows=[tuple(r) for r in t["rows"]])
              for name, t in raw["tables"].items()}
    verdicts = [Verdict(**v) for v in raw["verdicts"]]
    meta = dict(raw["meta"])
    meta["cache_hit"] = True
    return ExperimentResult(experiment=raw["experiment"], params=raw["params"],
                            tables=tables, verdicts=verdicts, meta=meta)


def _cache_store(path, result: ExperimentResult) -> None:
    if path is None:
        return
    os.makedirs(os.path.dirname(path), exist_ok=True)
    raw = {"experiment": result.experiment, "params": result.params,
           "tables": {n: {"columns": t.columns, "rows": [list(r) for r in t.rows]}
                      for n, t in result.tables.items()},
           "verdicts": [asdict(v) for v in result.verdicts],
           "meta": result.meta}
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(raw, f, default=_json_scalar)
    os.replace(tmp, path)


def _json_scalar(o):
    """numpy scalars leak into verdicts and rows; store them as plain."""
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# extinction / criticality (total-mass chain)

def _ext_chunk(args):
    seed, N, dt, y0, t_grid, chunk, lo, n = args
    # stream blocks are keyed by lo // chunk, so the scheduling chunk and
    # the chain's internal chunk must agree for worker-count invariance
    alive = mass_chain(N, dt, y0, seed, n, t_grid, chunk=chunk,
                       first_replicate=lo)
    extinct = [int((alive[:, j] == 0).sum()) for j in range(len(t_grid))]
    sums = [McSummary.from_samples(alive[:, j] / N) for j in range(len(t_grid))]
    return extinct, sums


def run_extinction(p: dict, workers: int = 1) -> ExperimentResult:
    t_grid = tuple(float(t) for t in p["t_grid"])
    M = int(p["replicates"])
    chunk = int(p["chunk"])
    args = [(p["seed"], p["N"], p["dt"], p["y0"], t_grid, chunk, lo, n)
            for lo, n in _chunk_ranges(M, chunk)]
    parts = _run_chunks(_ext_chunk, args, workers)
    n0 = round(p["y0"] * p["N"])
    ext_rows, mass_rows, verdicts = [], [], []
    checks = set(str(p["checks"]).split(","))
    for j, t in enumerate(t_grid):
        k = sum(part[0][j] for part in parts)
        s = merge_summaries([part[1][j] for part in parts])
        p_hat = k / M
        se = math.sqrt(max(p_hat * (1 - p_hat), 1e-300) / M)
        q = p["N"] * t / (2.0 + p["N"] * t)          # one-line extinction by t
        oracle = q ** n0
        continuum = math.exp(-2.0 * p["y0"] / t)
        z = (p_hat - oracle) / se if se > 0 else 0.0
        ext_rows.append((t, p_hat, se, oracle, continuum, z,
                         abs(p_hat - continuum)))
        mz = (s.mean - p["y0"]) / s.se if s.se > 0 else 0.0
        mass_rows.append((t, s.mean, s.se, p["y0"], mz))
        if "extinction" in checks:
            verdicts.append(Verdict(
                name=f"extinction-abs-t{t:g}", measured=abs(p_hat - continuum),
                target=0.0, tolerance=p["tol_abs"],
                passed=abs(p_hat - continuum) <= p["tol_abs"],
                note="|P(extinct by t) - exp(-2*y0/t)|"))
            verdicts.append(Verdict(
                name=f"extinction-z-t{t:g}", measured=abs(z), target=0.0,
                tolerance=p["tol_z"], passed=abs(z) <= p["tol_z"],
                note="z vs discrete oracle (N*t/(2+N*t))^n0"))
        if "criticality" in checks:
            verdicts.append(Verdict(
                name=f"criticality-t{t:g}", measured=s.mean, target=p["y0"],
                tolerance=p["crit_z"] * s.se,
                passed=abs(s.mean - p["y0"]) <= p["crit_z"] * s.se,
                note=f"mean total mass within {p['crit_z']:g} SE"))
    tables = {
        "extinction": Table(["t", "p_hat", "se", "oracle_discrete",
                             "oracle_continuum", "z_oracle", "abs_err"],
                            ext_rows),
        "mass": Table(["t", "mean", "se", "target", "z"], mass_rows),
    }
    return ExperimentResult("extinction", p, tables, verdicts,
                            {"replicates": M})


# ---------------------------------------------------------------------------
# mean local time

def _mlt_chunk(args):
    seed, N, dt, y0, t, h, x_eval, lo, n = args
    cfg = SimConfig(N=N, dt=dt, t_max=t, y0=y0, seed=seed)
    sums = [McSummary() for _ in x_eval]
    for i in range(n):
        traj = run_until_extinction(cfg, replicate=lo + i, h=h,
                                    checkpoint_times=(t,))
        prof = localtime.accumulate_occupation(traj, t=t)
        for s, x in zip(sums, x_eval):
            s.push(prof.value_at(x))
    return sums


def run_mean_localtime(p: dict, workers: int = 1) -> ExperimentResult:
    x_eval = tuple(float(x) for x in p["x_eval"])
    M = int(p["replicates"])
    args = [(p["seed"], p["N"], p["dt"], p["y0"], p["t"], p["h"], x_eval,
             lo, n) for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    parts = _run_chunks(_mlt_chunk, args, workers)
    rows, verdicts = [], []
    for j, x in enumerate(x_eval):
        s = merge_summaries([part[j] for part in parts])
        target = localtime.mean_local_time_oracle(p["t"], x)
        err = abs(s.mean - target)
        tol = max(p["tol_z"] * s.se, p["tol_rel"] * target)
        rows.append((x, s.mean, s.se, target, err,
                     err / target if target else math.inf))
        verdicts.append(Verdict(
            name=f"mean-localtime-x{x:g}", measured=s.mean, target=target,
            tolerance=tol, passed=err <= tol,
            note=f"within max({p['tol_z']:g} SE, {p['tol_rel']:.0%})"))
    tables = {"mean_localtime": Table(
        ["x", "mean", "se", "target", "abs_err", "rel_err"], rows)}
    return ExperimentResult("mean-localtime", p, tables, verdicts,
                            {"replicates": M})


# ---------------------------------------------------------------------------
# Tanaka residual moments

def _tanaka_chunk(args):
    seed, N, dt, y0, t, h, x, lo, n = args
    cfg = SimConfig(N=N, dt=dt, t_max=t, y0=y0, seed=seed)
    s = McSummary()
    for i in range(n):
        traj = run_until_extinction(cfg, replicate=lo + i, h=h,
                                    checkpoint_times=(t,))
        prof = localtime.accumulate_occupation(traj, t=t)
        s.push(localtime.tanaka_residual(traj, prof, x, t))
    return s


def run_tanaka(p: dict, workers: int = 1) -> ExperimentResult:
    M = int(p["replicates"])
    x, t = float(p["x"]), float(p["t"])
    args = [(p["seed"], p["N"], p["dt"], p["y0"], t, p["h"], x, lo, n)
            for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    s = merge_summaries(_run_chunks(_tanaka_chunk, args, workers))
    second = s.m2 / s.count + s.mean ** 2
    target2 = t * t / 2.0 + x * x * t
    rows = [(x, t, s.mean, s.se, second, target2,
             abs(second - target2) / target2)]
    verdicts = [
        Verdict(name="tanaka-mean", measured=s.mean, target=0.0,
                tolerance=p["tol_z"] * s.se,
                passed=abs(s.mean) <= p["tol_z"] * s.se,
                note="martingale term has mean zero"),
        Verdict(name="tanaka-second-moment", measured=second, target=target2,
                tolerance=p["tol_rel2"] * target2,
                passed=abs(second - target2) <= p["tol_rel2"] * target2,
                note="E[M^2] = t^2/2 + x^2 t"),
    ]
    tables = {"tanaka": Table(
        ["x", "t", "mean", "se", "second_moment", "target_second", "rel_err"],
        rows)}
    return ExperimentResult("tanaka", p, tables, verdicts, {"replicates": M})


# ---------------------------------------------------------------------------
# quadratic-variation identity

def _qvar_chunk(args):
    seed, N, dt, y0, t, h, x, y, lo, n = args
    cfg = SimConfig(N=N, dt=dt, t_max=t, y0=y0, seed=seed)
    rows = []
    for i in range(n):
        traj = run_until_extinction(cfg, replicate=lo + i, h=h,
                                    snapshot_stride=1, checkpoint_times=(t,))
        prof = localtime.accumulate_occupation(traj, t=t)
        res = localtime.qvar_consistency(traj, prof, x, y, t)
        rows.append((lo + i, res, int(traj.extinct),
                     traj.zeta if traj.extinct else math.inf))
    return rows


def run_qvar(p: dict, workers: int = 1) -> ExperimentResult:
    M = int(p["replicates"])
    args = [(p["seed"], p["N"], p["dt"], p["y0"], p["t"], p["h"],
             p["x"], p["y"], lo, n)
            for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    rows = [r for part in _run_chunks(_qvar_chunk, args, workers)
            for r in part]
    worst = max(r[1] for r in rows)
    verdicts = [Verdict(
        name="qvar-max-residual", measured=worst, target=0.0,
        tolerance=p["tol"], passed=worst <= p["tol"],
        note="occupation-vs-profile identity, relative, worst replicate")]
    tables = {"qvar": Table(["replicate", "residual", "extinct", "zeta"],
                            rows)}
    return ExperimentResult("qvar", p, tables, verdicts, {"replicates": M})


# ---------------------------------------------------------------------------
# exit law at fixed levels (atom + mean)

def _reach_chunk(args):
    seed, N, dt, y0, t_max, level, lo, n = args
    cfg = SimConfig(N=N, dt=dt, t_max=t_max, y0=y0, seed=seed)
    hits = undecided = 0
    ysum = ysq = 0.0
    for i in range(n):
        traj, frozen = run_absorbed(cfg, level, replicate=lo + i,
                                    stop_at_first_freeze=True)
        if frozen > 0:
            hits += 1
        elif not traj.settled:
            undecided += 1
        # frozen+alive mass at the stop step; its mean is exactly y0 at
        # any N, dt (offspring mean is exactly one per step).
        m = (frozen + traj.final_alive) / N
        ysum += m
        ysq += m * m
    return hits, undecided, ysum, ysq


def run_exit_law(p: dict, workers: int = 1) -> ExperimentResult:
    levels = tuple(float(r) for r in p["levels"])
    M = int(p["replicates"])
    N = int(p["N"])
    frac = float(p["level_fraction"])
    checks = set(str(p["checks"]).split(","))
    verdicts, meta = [], {}
    atom_rows, mean_rows = [], []
    for j, r in enumerate(levels):
        lvl = continuum_matched_level(r, N, frac)
        args = [(p["seed"], N, p["dt"], p["y0"], p["t_max"], lvl,
                 j * M + lo, n)
                for lo, n in _chunk_ranges(M, int(p["chunk"]))]
        parts = _run_chunks(_reach_chunk, args, workers)
        hits = sum(part[0] for part in parts)
        und = sum(part[1] for part in parts)
        p0 = 1.0 - (hits + 0.5 * und) / M
        se = math.sqrt(max(p0 * (1 - p0), 1e-300) / M)
        target = math.exp(-6.0 * p["y0"] / (r * r))
        atom_rows.append((r, lvl, p0, se, und, target, abs(p0 - target), M))
        ymean = sum(part[2] for part in parts) / M
        yvar = max(sum(part[3] for part in parts) / M - ymean * ymean, 0.0)
        yse = math.sqrt(yvar / M)
        mean_rows.append((r, lvl, ymean, yse, M))
        if "atom" in checks:
            verdicts.append(Verdict(
                name=f"exit-law-atom-r{r:g}", measured=p0, target=target,
                tolerance=p["tol_abs"], passed=abs(p0 - target) <= p["tol_abs"],
                note="P(exit mass = 0) vs exp(-6*y0/r^2) at freeze level "
                     f"r - {frac:g}*sqrt(6/N); undecided bracket "
                     f"+-{und / (2 * M):.2g}"))
        if "mean" in checks:
            verdicts.append(Verdict(
                name=f"exit-law-mean-r{r:g}", measured=ymean,
                target=p["y0"], tolerance=p["tol_z"] * yse,
                passed=abs(ymean - p["y0"]) <= p["tol_z"] * yse,
                note="mean frozen+alive mass at the stop step (exact "
                     "martingale, no discards)"))
        meta[f"undecided_r{r:g}"] = und
    tables = {
        "exit_law": Table(
            ["r", "freeze_level", "p_zero", "se", "undecided", "target",
             "abs_err", "replicates"], atom_rows),
        "exit_mass_mean": Table(
            ["r", "freeze_level", "mean_stopped_mass", "se", "replicates"],
            mean_rows),
    }
    return ExperimentResult("exit-law", p, tables, verdicts, meta)


# ---------------------------------------------------------------------------
# CSBP Laplace law (direct Levy-driven simulation)

def _csbp_chunk(args):
    y0, levels, lam_grid, dr, seed, chunk, lo, n = args
    ys = csbp.csbp_ensemble(y0, levels, n, dr=dr, seed=seed, chunk=chunk,
                            first_path=lo)
    out = np.empty((len(levels), len(lam_grid), 2))
    atoms = np.empty(len(levels), dtype=np.int64)
    for j in range(len(levels)):
        for k, lam in enumerate(lam_grid):
            e = np.exp(-lam * ys[:, j])
            out[j, k] = (e.sum(), (e * e).sum())
        atoms[j] = int((ys[:, j] == 0).sum())
    return out, atoms


def run_csbp_law(p: dict, workers: int = 1) -> ExperimentResult:
    levels = tuple(float(r) for r in p["levels"])
    lam_grid = tuple(float(x) for x in p["lam_grid"])
    M = int(p["replicates"])
    chunk = int(p["chunk"])
    args = [(p["y0"], levels, lam_grid, p["dr"], p["seed"], chunk, lo, n)
            for lo, n in _chunk_ranges(M, chunk)]
    parts = _run_chunks(_csbp_chunk, args, workers)
    sums = sum(part[0] for part in parts)
    atoms = sum(part[1] for part in parts)
    rows, worst = [], 0.0
    for j, r in enumerate(levels):
        for k, lam in enumerate(lam_grid):
            mean = sums[j, k, 0] / M
            var = max(sums[j, k, 1] / M - mean * mean, 0.0)
            se = math.sqrt(var / M)
            exact = csbp.laplace_exact(p["y0"], r, lam)
            err = abs(mean - exact)
            worst = max(worst, err)
            rows.append((r, lam, mean, se, exact, err))
    atom_rows = [(r, atoms[j] / M, csbp.laplace_exact(p["y0"], r, math.inf))
                 for j, r in enumerate(levels)]
    verdicts = [Verdict(
        name="csbp-law-max-abs-err", measured=float(worst), target=0.0,
        tolerance=p["tol_abs"], passed=bool(worst <= p["tol_abs"]),
        note="max |empirical - exact| Laplace transform over the grid")]
    tables = {
        "csbp_laplace": Table(["r", "lam", "empirical", "se", "exact",
                               "abs_err"], rows),
        "csbp_atom": Table(["r", "p_zero", "exact"], atom_rows),
    }
    return ExperimentResult("csbp-law", p, tables, verdicts,
                            {"replicates": M})


# ---------------------------------------------------------------------------
# two-simulator agreement (particle ladder vs Levy CSBP)

def _ladder_raw_chunk(args):
    seed, N, dt, y0, levels, t_max, lo, n = args
    cfg = SimConfig(N=N, dt=dt, t_max=t_max, y0=y0, seed=seed)
    lads = ladder_ensemble(cfg, levels, n, first_replicate=lo)
    return np.vstack([lad.masses for lad in lads])


def run_two_sim(p: dict, workers: int = 1) -> ExperimentResult:
    levels = tuple(float(r) for r in p["levels"])
    N = int(p["N"])
    frac = float(p["level_fraction"])
    # the particle ladder freezes at the matched levels so its exit law
    # lines up with the limit law sampled at the nominal r
    phys = tuple(continuum_matched_level(r, N, frac) for r in levels)
    M = int(p["replicates"])
    args = [(p["seed"], N, p["dt"], p["y0"], phys, p["t_max"], lo, n)
            for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    pm = np.vstack(_run_chunks(_ladder_raw_chunk, args, workers))
    levy = csbp.csbp_ensemble(p["y0"], levels, M, dr=p["csbp_dr"],
                              seed=p["seed"] + 1)
    rows, verdicts = [], []
    settled = ~np.isnan(pm[:, -1])
    for j, r in enumerate(levels):
        a = pm[settled, j]
        b = levy[:, j]
        d, pv = stats.ks_two_sample(a, b)
        rows.append((r, phys[j], d, pv, a.size, b.size,
                     float((a == 0).mean()), float((b == 0).mean())))
        verdicts.append(Verdict(
            name=f"two-sim-ks-r{r:g}", measured=pv, target=p["alpha"],
            tolerance=0.0, passed=pv >= p["alpha"],
            note=f"two-sample KS p-value >= {p['alpha']:g}; D={d:.17g}"))
    tables = {"two_sim": Table(
        ["r", "freeze_level", "ks_d", "ks_p", "n_particle", "n_levy",
         "atom_particle", "atom_levy"], rows)}
    return ExperimentResult("two-sim-agreement", p, tables, verdicts,
                            {"replicates": M,
                             "unsettled": int((~settled).sum())})


# ---------------------------------------------------------------------------
# exit ODE shooting

def run_pde(p: dict, workers: int = 1) -> ExperimentResult:
    t0 = time.perf_counter()
    sol = csbp.solve_exit_pde(p["lam"], p["r"], p["x_min"], tol=p["tol"],
                              npoints=int(p["npoints"]))
    runtime = time.perf_counter() - t0
    exact = sol.closed_form()
    rows = [(x, u, e, abs(u - e)) for x, u, e in zip(sol.x, sol.u, exact)]
    verdicts = [
        Verdict(name="pde-sup-error", measured=sol.sup_error, target=0.0,
                tolerance=p["tol_sup"], passed=sol.sup_error <= p["tol_sup"],
                note="sup |U - 6*(r-x+sqrt(6/lam))^-2| on the grid"),
        Verdict(name="pde-runtime", measured=runtime, target=0.0,
                tolerance=p["time_budget"], passed=runtime < p["time_budget"],
                note="shooting wall time (seconds)"),
    ]
    tables = {
        "pde_solution": Table(["x", "u", "exact", "abs_err"], rows),
        "pde_summary": Table(["lam", "r", "x_min", "sup_error", "residual",
                              "npoints"],
                             [(p["lam"], p["r"], p["x_min"], sol.sup_error,
                               sol.residual, len(sol.x))]),
    }
    return ExperimentResult("pde", p, tables, verdicts, {})


# ---------------------------------------------------------------------------
# boundary exponent over extinct replicates

def _profile_attempts(args):
    """Shared attempt loop: free runs, extinct-only, boundary + profile.

    thresh is forwarded to detect_boundary.  Exponent-style fits use 0.0
    (any occupied bin counts, so rhat sits at the outermost visited bin);
    the default mass threshold would park rhat ~0.1 inside the true edge
    and flatten every log-log slope through the window.
    """
    seed, N, dt, y0, t_max, h, thresh, lo, n = args
    cfg = SimConfig(N=N, dt=dt, t_max=t_max, y0=y0, seed=seed)
    out = []
    for i in range(n):
        traj = run_until_extinction(cfg, replicate=lo + i, h=h)
        if not traj.extinct:
            out.append((lo + i, None, None, math.inf))
            continue
        prof = localtime.accumulate_occupation(traj)
        try:
            be = localtime.detect_boundary(prof, threshold=thresh)
        except ValueError:
            out.append((lo + i, None, None, traj.zeta))
            continue
        out.append((lo + i, prof, be, traj.zeta))
    return out


def _exponent_chunk(args):
    core, extent_min, window = args[:-2], args[-2], args[-1]
    rows = []
    counts = dict(attempts=0, extinct=0, short=0, fitted=0)
    for rep, prof, be, zeta in _profile_attempts(core):
        counts["attempts"] += 1
        if math.isfinite(zeta):
            counts["extinct"] += 1
        if prof is None:
            continue
        if be.right < extent_min:
            # support never cleared the fit window; a slope through two or
            # three noisy bins says nothing about the boundary
            counts["short"] += 1
            continue
        try:
            f = regularity.fit_exponent(prof, be.right, tuple(window))
        except regularity.RegularityError:
            continue
        counts["fitted"] += 1
        rows.append((rep, f.slope, f.stderr, f.npoints, f.excluded_zeros,
                     be.right, zeta))
    return rows, counts


def run_exponent(p: dict, workers: int = 1) -> ExperimentResult:
    M = int(p["replicates"])
    args = [((p["seed"], p["N"], p["dt"], p["y0"], p["t_max"], p["h"],
              p["boundary_threshold"], lo, n)
             + (p["extent_min"], tuple(p["window"])))
            for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    parts = _run_chunks(_exponent_chunk, args, workers)
    rows = [r for part in parts for r in part[0]]
    counts = {k: sum(part[1][k] for part in parts)
              for k in ("attempts", "extinct", "short", "fitted")}
    slopes = np.array([r[1] for r in rows])
    mean = float(slopes.mean()) if slopes.size else math.nan
    se = (float(slopes.std(ddof=1) / math.sqrt(slopes.size))
          if slopes.size > 1 else math.nan)
    enough = counts["fitted"] >= int(p["min_extinct"])
    in_window = (p["gamma_lo"] <= mean <= p["gamma_hi"]) if enough else None
    verdicts = [
        Verdict(name="exponent-count", measured=counts["fitted"],
                target=int(p["min_extinct"]), tolerance=0,
                passed=enough, note="fitted extinct replicates"),
        Verdict(name="exponent-window", measured=mean, target=3.0,
                tolerance=0.0, passed=in_window,
                note=f"replicate-averaged slope in "
                     f"[{p['gamma_lo']:g}, {p['gamma_hi']:g}]"),
    ]
    tables = {
        "exponent_fits": Table(["replicate", "slope", "stderr", "points",
                                "excluded_zeros", "rhat", "zeta"], rows),
        "exponent_summary": Table(
            ["mean_slope", "se", "fitted", "short", "extinct", "attempts"],
            [(mean, se, counts["fitted"], counts["short"], counts["extinct"],
              counts["attempts"])]),
    }
    return ExperimentResult("exponent", p, tables, verdicts, counts)


# ---------------------------------------------------------------------------
# dyadic oscillation ladder

def _oscillation_chunk(args):
    core, extent_min, scales = args[:-2], args[-2], args[-1]
    rows = []
    for rep, prof, be, zeta in _profile_attempts(core):
        if prof is None or be.right < extent_min:
            continue
        try:
            t = regularity.dyadic_oscillation(prof, be.right, scales)
        except regularity.RegularityError:
            continue
        rows.append((rep,) + tuple(t.osc) + (t.xi_hat,))
    return rows


def run_oscillation(p: dict, workers: int = 1) -> ExperimentResult:
    M = int(p["replicates"])
    scales = tuple(int(s) for s in p["scales"])
    args = [((p["seed"], p["N"], p["dt"], p["y0"], p["t_max"], p["h"],
              p["boundary_threshold"], lo, n)
             + (p["extent_min"], scales))
            for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    rows = [r for part in _run_chunks(_oscillation_chunk, args, workers)
            for r in part]
    xis = np.array([r[-1] for r in rows])
    finite = xis[np.isfinite(xis)]
    summary = [(float(finite.mean()) if finite.size else math.nan,
                len(rows), M)]
    cols = ["replicate"] + [f"osc_{s}" for s in scales] + ["xi_hat"]
    tables = {
        "oscillation": Table(cols, rows),
        "oscillation_summary": Table(["mean_xi", "profiles", "attempts"],
                                     summary),
    }
    return ExperimentResult("oscillation", p, tables, [],
                            {"profiles": len(rows)})


# ---------------------------------------------------------------------------
# envelope satisfaction fractions

_ENVELOPE_DBINS = 5


def _envelope_chunk(args):
    core = args[:-4]
    extent_min, g_up, g_lo, window = args[-4:]
    d_edges = np.geomspace(window[0], window[1], _ENVELOPE_DBINS + 1)
    rows = []
    # distance-resolved satisfaction: (sum_upper, sum_lower, profiles) per
    # geometric sub-bin of the window, to show where failures concentrate
    bins = np.zeros((_ENVELOPE_DBINS, 3))
    for rep, prof, be, zeta in _profile_attempts(core):
        if prof is None or be.right < extent_min:
            continue
        try:
            fu = regularity.envelope_check(prof, be.right, g_up, "upper",
                                           tuple(window))
            fl = regularity.envelope_check(prof, be.right, g_lo, "lower",
                                           tuple(window))
        except regularity.RegularityError:
            continue
        rows.append((rep, fu, fl, be.right))
        for k in range(_ENVELOPE_DBINS):
            sub = (float(d_edges[k]), float(d_edges[k + 1]))
            try:
                su = regularity.envelope_check(prof, be.right, g_up,
                                               "upper", sub)
                sl = regularity.envelope_check(prof, be.right, g_lo,
                                               "lower", sub)
            except regularity.RegularityError:
                continue
            bins[k] += (su, sl, 1.0)
    return rows, bins


def run_envelope(p: dict, workers: int = 1) -> ExperimentResult:
    M = int(p["replicates"])
    window = tuple(p["window"])
    args = [((p["seed"], p["N"], p["dt"], p["y0"], p["t_max"], p["h"],
              p["boundary_threshold"], lo, n)
             + (p["extent_min"], p["gamma_upper"], p["gamma_lower"], window))
            for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    parts = _run_chunks(_envelope_chunk, args, workers)
    rows = [r for part in parts for r in part[0]]
    bins = sum(part[1] for part in parts)
    d_edges = np.geomspace(window[0], window[1], _ENVELOPE_DBINS + 1)
    dist_rows = [(float(d_edges[k]), float(d_edges[k + 1]),
                  float(bins[k, 0] / bins[k, 2]) if bins[k, 2] else math.nan,
                  float(bins[k, 1] / bins[k, 2]) if bins[k, 2] else math.nan,
                  int(bins[k, 2]))
                 for k in range(_ENVELOPE_DBINS)]
    enough = len(rows) >= int(p["min_extinct"])
    fu = float(np.mean([r[1] for r in rows])) if rows else math.nan
    fl = float(np.mean([r[2] for r in rows])) if rows else math.nan
    verdicts = [
        Verdict(name="envelope-count", measured=len(rows),
                target=int(p["min_extinct"]), tolerance=0, passed=enough,
                note="profiles with a resolvable window"),
        Verdict(name="envelope-upper", measured=fu, target=1.0,
                tolerance=1.0 - p["threshold"],
                passed=(fu >= p["threshold"]) if enough else None,
                note=f"mean satisfied fraction, L <= 2^g*d^g at "
                     f"g={p['gamma_upper']:g}"),
        Verdict(name="envelope-lower", measured=fl, target=1.0,
                tolerance=1.0 - p["threshold"],
                passed=(fl >= p["threshold"]) if enough else None,
                note=f"mean satisfied fraction, L >= 2^(-g/2)*d^g at "
                     f"g={p['gamma_lower']:g}"),
    ]
    tables = {"envelope": Table(
        ["replicate", "frac_upper", "frac_lower", "rhat"], rows),
        "envelope_summary": Table(
            ["mean_upper", "mean_lower", "profiles", "attempts"],
            [(fu, fl, len(rows), M)]),
        "envelope_by_distance": Table(
            ["d_lo", "d_hi", "frac_upper", "frac_lower", "profiles"],
            dist_rows)}
    return ExperimentResult("envelope", p, tables, verdicts,
                            {"profiles": len(rows)})


# ---------------------------------------------------------------------------
# single-ancestor cluster tail

def _tail_chunk(args):
    seed, N, dt, r, t_max, batch, lo, n = args
    suc, ext = run_ancestor_batch(seed, N, dt, r, t_max, n,
                                  first_replicate=lo, batch=batch)
    undecided = int(((suc == 0) & (ext == -1)).sum())
    return int(suc.sum()), undecided


def run_cluster_tail(p: dict, workers: int = 1) -> ExperimentResult:
    M = int(p["replicates"])
    r = float(p["r"])
    args = [(p["seed"], p["N"], p["dt"], r, p["t_max"], int(p["batch"]),
             lo, n) for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    parts = _run_chunks(_tail_chunk, args, workers)
    est = clusters.TailEstimate(r=r, N=p["N"], dt=p["dt"], replicates=M,
                                successes=sum(a for a, _ in parts),
                                undecided=sum(b for _, b in parts))
    lo_ci, hi_ci = est.ci
    target = 6.0 / (r * r)
    tol = p["tol_rel"] * target
    verdicts = [Verdict(
        name="cluster-tail", measured=est.estimate, target=target,
        tolerance=tol, passed=abs(est.estimate - target) <= tol,
        note=f"N*P(single ancestor reaches r={r:g}); "
             f"{est.undecided} undecided")]
    tables = {
        "cluster_tail": Table(
            ["r", "estimate", "ci_low", "ci_high", "replicates", "accepts"],
            [(r, est.estimate, lo_ci, hi_ci, M, est.successes)]),
        "cluster_tail_detail": Table(
            ["r", "N", "dt", "successes", "undecided", "t_max"],
            [(r, p["N"], p["dt"], est.successes, est.undecided, p["t_max"])]),
    }
    return ExperimentResult("cluster-tail", p, tables, verdicts,
                            {"undecided": est.undecided})


# ---------------------------------------------------------------------------
# Poisson superposition of clusters vs full process

def run_superposition(p: dict, workers: int = 1) -> ExperimentResult:
    levels = tuple(float(r) for r in p["levels"])
    M = int(p["replicates"])
    Mt = int(p["tail_replicates"])
    rows, verdicts = [], []
    meta = {}
    for j, r in enumerate(levels):
        lvl = continuum_matched_level(r, int(p["N"]),
                                      float(p["level_fraction"]))
        args = [(p["seed"], p["N"], p["dt"], p["y0"], p["t_max"], lvl,
                 j * M + lo, n)
                for lo, n in _chunk_ranges(M, int(p["chunk"]))]
        parts = _run_chunks(_reach_chunk, args, workers)
        hits = sum(part[0] for part in parts)
        und = sum(part[1] for part in parts)
        full_p = (hits + 0.5 * und) / M
        se = math.sqrt(max(full_p * (1 - full_p), 1e-300) / M)
        targs = [(p["seed"] + 1, p["tail_N"], p["tail_dt"], r, p["tail_t_max"],
                  int(p["batch"]), j * Mt + lo, n)
                 for lo, n in _chunk_ranges(Mt, int(p["tail_chunk"]))]
        tparts = _run_chunks(_tail_chunk, targs, workers)
        test = clusters.TailEstimate(
            r=r, N=p["tail_N"], dt=p["tail_dt"], replicates=Mt,
            successes=sum(a for a, _ in tparts),
            undecided=sum(b for _, b in tparts))
        implied = -math.expm1(-p["y0"] * test.estimate)
        exact = -math.expm1(-6.0 * p["y0"] / (r * r))
        rows.append((r, lvl, full_p, se, test.estimate, implied,
                     full_p - implied, exact, abs(full_p - exact)))
        meta[f"undecided_full_r{r:g}"] = und
        meta[f"undecided_tail_r{r:g}"] = test.undecided
        if abs(r - p["target_level"]) < 1e-12:
            verdicts.append(Verdict(
                name=f"superposition-r{r:g}", measured=full_p, target=exact,
                tolerance=p["tol_abs"],
                passed=abs(full_p - exact) <= p["tol_abs"],
                note="full-process P(R > r) vs 1 - exp(-6*y0/r^2)"))
    tables = {"superposition": Table(
        ["r", "freeze_level", "full_prob", "full_se", "tail_estimate",
         "implied", "deviation", "target_exact", "abs_err_exact"], rows)}
    return ExperimentResult("superposition", p, tables, verdicts, meta)


# ---------------------------------------------------------------------------
# range-is-an-interval gap fractions

def _range_chunk(args):
    seed, N, dt, y0, t_max, h, lo, n = args
    rows = []
    # the gap census is about the mass-thresholded support, so this one
    # keeps the default 1/(2Nh) threshold rather than the zero anchor
    for rep, prof, be, zeta in _profile_attempts(
            (seed, N, dt, y0, t_max, h, None, lo, n)):
        if prof is None:
            continue
        span = int(round((be.right - be.left) / prof.h))
        rows.append((rep, be.left, be.right, span, be.interior_gaps, zeta))
    return rows


def run_range_interval(p: dict, workers: int = 1) -> ExperimentResult:
    M = int(p["replicates"])
    args = [(p["seed"], p["N"], p["dt"], p["y0"], p["t_max"], p["h"], lo, n)
            for lo, n in _chunk_ranges(M, int(p["chunk"]))]
    rows = [r for part in _run_chunks(_range_chunk, args, workers)
            for r in part]
    gaps = sum(r[4] for r in rows)
    interior = sum(max(r[3] - 2, 0) for r in rows)
    frac = gaps / interior if interior else math.nan
    verdicts = [Verdict(
        name="range-interval-gap-fraction", measured=frac, target=0.0,
        tolerance=p["tol"], passed=(frac <= p["tol"]) if interior else None,
        note=f"{gaps} sub-threshold interior bins / {interior} interior bins "
             f"over {len(rows)} extinct replicates")]
    tables = {"range_interval": Table(
        ["replicate", "left", "right", "span_bins", "interior_gaps", "zeta"],
        rows),
        "range_summary": Table(["gap_fraction", "gaps", "interior_bins",
                                "extinct_replicates", "attempts"],
                               [(frac, gaps, interior, len(rows), M)])}
    return ExperimentResult("range-interval", p, tables, verdicts,
                            {"extinct": len(rows)})


# ---------------------------------------------------------------------------
# registry

EXPERIMENTS = {
    "extinction": (run_extinction, {
        "N": 2000, "dt": 2.5e-6, "y0": 1.0, "t_grid": (1.0, 2.0, 4.0),
        "replicates": 10000, "seed": 20, "chunk": 2000, "tol_abs": 0.02,
        "tol_z": 3.0, "crit_z": 3.0, "checks": "criticality,extinction"}),
    "criticality": (run_extinction, {
        "N": 1000, "dt": 1e-4, "y0": 1.0, "t_grid": (1.0,),
        "replicates": 10000, "seed": 34, "chunk": 2000, "tol_abs": 0.02,
        "tol_z": 3.0, "crit_z": 3.0, "checks": "criticality"}),
    "mean-localtime": (run_mean_localtime, {
        "N": 1000, "dt": 1e-4, "y0": 1.0, "t": 1.0, "h": 0.05,
        "x_eval": (0.0, 0.5, 1.0), "replicates": 3000, "seed": 21,
        "chunk": 100, "tol_rel": 0.05, "tol_z": 3.0}),
    "tanaka": (run_tanaka, {
        "N": 1000, "dt": 5e-5, "y0": 1.0, "t": 1.0, "h": 0.05, "x": 0.5,
        "replicates": 3000, "seed": 22, "chunk": 100, "tol_z": 3.0,
        "tol_rel2": 0.10}),
    "qvar": (run_qvar, {
        "N": 500, "dt": 1e-4, "y0": 1.0, "t": 1.0, "h": 0.05, "x": -0.525,
        "y": 0.525, "replicates": 20, "seed": 23, "chunk": 1, "tol": 1e-12}),
    "exit-law": (run_exit_law, {
        "N": 500, "dt": 5e-5, "y0": 1.0, "levels": (2.0, 3.0),
        "t_max": 160.0, "replicates": 10000, "chunk": 500,
        "level_fraction": 1.0, "seed": 24,
        "tol_abs": 0.02, "tol_z": 3.0, "checks": "atom,mean"}),
    "csbp-law": (run_csbp_law, {
        "y0": 1.0, "levels": (0.5, 1.0, 2.0), "lam_grid": (1.0, 6.0, 24.0),
        "replicates": 100000, "dr": 0.002, "seed": 25, "chunk": 8192,
        "tol_abs": 0.02}),
    "two-sim-agreement": (run_two_sim, {
        "N": 2048, "dt": 0.05 / 2048, "y0": 0.025, "levels": (1.0, 2.0),
        "t_max": 40.0, "replicates": 10000, "csbp_dr": 2.5e-4,
        "level_fraction": 0.5, "seed": 26, "chunk": 250, "alpha": 0.01}),
    "pde": (run_pde, {
        "lam": 6.0, "r": 1.0, "x_min": 0.0, "tol": 1e-9, "npoints": 2001,
        "tol_sup": 1e-6, "time_budget": 1.0, "seed": 0}),
    "exponent": (run_exponent, {
        "N": 10000, "dt": 1e-5, "y0": 0.06, "t_max": 1.5, "h": 0.02,
        "window": (0.04, 0.25), "boundary_threshold": 0.0,
        "extent_min": 0.3, "replicates": 360, "min_extinct": 200,
        "seed": 27, "chunk": 10, "gamma_lo": 2.3, "gamma_hi": 3.7}),
    "exponent-fine": (run_exponent, {
        "N": 40000, "dt": 2.5e-6, "y0": 0.06, "t_max": 1.5, "h": 0.01,
        "window": (0.04, 0.25), "boundary_threshold": 0.0,
        "extent_min": 0.3, "replicates": 255, "min_extinct": 200,
        "seed": 33, "chunk": 5, "gamma_lo": 2.3, "gamma_hi": 3.7}),
    "oscillation": (run_oscillation, {
        "N": 10000, "dt": 1e-5, "y0": 0.06, "t_max": 1.5, "h": 0.02,
        "scales": (2, 3, 4), "boundary_threshold": 0.0, "extent_min": 0.3,
        "replicates": 200, "seed": 28, "chunk": 10}),
    "envelope": (run_envelope, {
        "N": 10000, "dt": 1e-5, "y0": 0.06, "t_max": 1.5, "h": 0.02,
        "gamma_upper": 2.5, "gamma_lower": 3.5, "window": (0.04, 0.25),
        "boundary_threshold": 0.0, "extent_min": 0.3,
        "replicates": 250, "min_extinct": 200, "threshold": 0.9,
        "seed": 29, "chunk": 10}),
    "cluster-tail": (run_cluster_tail, {
        "N": 10000, "dt": 1e-5, "r": 1.0, "t_max": 5.0,
        "replicates": 1200000, "seed": 30, "batch": 4096, "chunk": 65536,
        "tol_rel": 0.15}),
    "superposition": (run_superposition, {
        "N": 400, "dt": 1.25e-4, "y0": 1.0, "levels": (2.0,),
        "t_max": 160.0, "replicates": 5000, "chunk": 250,
        "level_fraction": 1.0,
        "tail_N": 2000, "tail_dt": 5e-5, "tail_t_max": 5.0,
        "tail_replicates": 200000, "tail_chunk": 65536, "batch": 4096,
        "seed": 31, "tol_abs": 0.03, "target_level": 2.0}),
    "range-interval": (run_range_interval, {
        "N": 2000, "dt": 5e-5, "y0": 0.3, "t_max": 4.0, "h": 0.02,
        "replicates": 300, "seed": 32, "chunk": 10, "tol": 0.01}),
}


def experiment_names() -> list:
    return list(EXPERIMENTS)


def experiment_defaults(name: str) -> dict:
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}")
    return dict(EXPERIMENTS[name][1])


def run_experiment(name: str, overrides: dict | None = None, *,
                   workers: int = 1, use_cache: bool = True) -> ExperimentResult:
    """Resolve parameters (defaults <- overrides) and run the driver.

    Unknown override keys raise KeyError.  When SBMLAB_CACHE is set and
    use_cache is true, a stored result for the same resolved parameters
    is returned as-is.
    """
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}")
    driver, defaults = EXPERIMENTS[name]
    params = dict(defaults)
    for k, v in (overrides or {}).items():
        if k not in params:
            raise KeyError(f"unknown parameter {k!r} for experiment {name}")
        params[k] = v
    cache = _cache_file(name, params) if use_cache else None
    hit = _cache_load(cache)
    if hit is not None:
        return hit
    t0 = time.perf_counter()
    res = driver(params, workers)
    res.meta["wall_time_s"] = time.perf_counter() - t0
    res.meta["workers"] = workers
    res.meta.setdefault("cache_hit", False)
    _cache_store(cache, res)
    return res
