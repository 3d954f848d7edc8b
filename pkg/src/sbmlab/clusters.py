"""Single-ancestor (canonical-cluster) experiments.

The cluster law is approximated by N times the law of one ancestor
particle of mass 1/N — the same scaling that defines the measure-valued
limit.  The headline check is the reach probability: N * P(one
ancestor's descendants ever reach level r) tends to 6/r^2, and Poisson
superposition of clusters must reproduce the full-process boundary law
P(R > r) = 1 - exp(-y0 * 6/r^2).

Reach events are decided by absorbed runs that stop at the first
freeze.  A replicate still alive at the horizon without a freeze is
undecided; estimates carry the bracket [successes, successes +
undecided] and the point estimate splits it in the middle.  Conditioned
cluster profiles use rejection sampling on free runs; rejected attempts
consume replicate indices in order, so acceptance is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import MAX_NDT, SimConfig, run_ancestor_batch, run_until_extinction
from .localtime import LocalTimeProfile, accumulate_occupation
from .stats import clopper_pearson


@dataclass
class TailEstimate:
    """N * P(single ancestor reaches r), with binomial CI.

    ci bounds are Clopper-Pearson, widened by the undecided bracket:
    the lower bound treats undecided replicates as misses, the upper as
    hits.  zero_success flags a degenerate (one-sided) interval.
    """

    r: float
    N: int
    dt: float
    replicates: int
    successes: int
    undecided: int
    conf: float = 0.95

    @property
    def estimate(self) -> float:
        return self.N * (self.successes + 0.5 * self.undecided) / self.replicates

    @property
    def ci(self) -> tuple[float, float]:
        lo, _ = clopper_pearson(self.successes, self.replicates, self.conf)
        _, hi = clopper_pearson(self.successes + self.undecided,
                                self.replicates, self.conf)
        return self.N * lo, self.N * hi

    @property
    def zero_success(self) -> bool:
        return self.successes == 0


def cluster_tail(config: SimConfig, r: float, replicates: int, *,
                 first_replicate: int = 0, batch: int = 4096) -> TailEstimate:
    """Estimate N * P(single ancestor of mass 1/N reaches level r).

    config supplies N, dt, seed and the decision horizon t_max; the
    ancestor starts at config.x0 with r measured on the absolute axis.
    """
    cfg = config
    if not r > cfg.x0:
        raise ValueError("level r must exceed the ancestor position")
    if cfg.N * cfg.dt > MAX_NDT * (1 + 1e-12):
        raise ValueError("N*dt exceeds 0.1")
    suc, ext = run_ancestor_batch(cfg.seed, cfg.N, cfg.dt, r, cfg.t_max,
                                  replicates, first_replicate=first_replicate,
                                  batch=batch)
    undecided = int(((suc == 0) & (ext == -1)).sum())
    return TailEstimate(r=float(r), N=cfg.N, dt=cfg.dt, replicates=replicates,
                        successes=int(suc.sum()), undecided=undecided)


@dataclass
class SuperpositionRow:
    r: float
    full_prob: float          # empirical P(R-hat > r) for the full process
    full_se: float
    full_replicates: int
    tail_estimate: float      # N * P(cluster reaches r)
    implied: float            # 1 - exp(-y0 * tail_estimate)
    deviation: float


def superposition_check(full_config: SimConfig, levels, full_replicates: int,
                        tail_config: SimConfig, tail_replicates: int, *,
                        method: str = "reach",
                        ladder_masses: np.ndarray | None = None) -> list[SuperpositionRow]:
    """Compare full-process P(R-hat > r) with the Poisson superposition
    of the measured cluster rate, per level.

    The full-process side estimates P(exit mass at r > 0) either with
    independent first-freeze runs per level (method "reach", cheap) or
    with one exit-mass ladder through all levels per replicate (method
    "ladder"); pass ladder_masses (replicates x levels, nan =
    unsettled) to reuse existing ladder runs.  The cluster side
    estimates the rate at each level with single-ancestor runs under
    tail_config.
    """
    from .exitmeasure import ladder_ensemble, level_reach_probability

    lv = np.asarray(levels, dtype=float)
    if method not in ("reach", "ladder"):
        raise ValueError("method must be 'reach' or 'ladder'")
    if ladder_masses is None and method == "ladder":
        lads = ladder_ensemble(full_config, lv, full_replicates)
        ladder_masses = np.vstack([l.masses for l in lads])
    rows = []
    for j, r in enumerate(lv):
        if ladder_masses is not None:
            col = ladder_masses[:, j]
            use = ~np.isnan(col)
            m = int(use.sum())
            if m == 0:
                raise RuntimeError(f"no settled replicates at level {r:g}")
            p = float((col[use] > 0).mean())
            se = math.sqrt(max(p * (1 - p), 1e-300) / m)
        else:
            re_ = level_reach_probability(full_config, float(r),
                                          full_replicates)
            p, se, m = re_.estimate, re_.se, re_.replicates
        tail = cluster_tail(tail_config, float(r), tail_replicates)
        implied = -math.expm1(-full_config.y0 * tail.estimate)
        rows.append(SuperpositionRow(
            r=float(r), full_prob=p, full_se=se, full_replicates=m,
            tail_estimate=tail.estimate, implied=implied,
            deviation=p - implied))
    return rows


@dataclass
class ClusterSample:
    """Accepted single-ancestor replicates under a conditioning."""

    N: int
    condition: tuple            # ("level", r) or ("time", eps)
    accepted: list[int] = field(default_factory=list)
    attempts: int = 0
    rhats: list[float] = field(default_factory=list)
    zetas: list[float] = field(default_factory=list)
    profiles: list[LocalTimeProfile] = field(default_factory=list)


def sample_clusters(config: SimConfig, condition: tuple, n_accept: int, *,
                    max_attempts: int = 10 ** 6, h: float | None = None,
                    first_replicate: int = 0) -> ClusterSample:
    """Rejection-sample conditioned clusters with occupation profiles.

    condition ("level", r) retains replicates whose occupation support
    reaches r (so R-hat > r on every retained replicate); ("time", eps)
    retains replicates alive at eps.  Attempts consume replicate
    indices in order and are logged in .accepted.
    """
    kind, value = condition
    if kind not in ("level", "time"):
        raise ValueError("condition kind must be 'level' or 'time'")
    cfg = config
    if cfg.n0 != 1:
        raise ValueError("cluster sampling requires a single ancestor (y0 = 1/N)")
    out = ClusterSample(N=cfg.N, condition=(kind, float(value)))
    rep = first_replicate
    while len(out.accepted) < n_accept:
        if out.attempts >= max_attempts:
            raise RuntimeError(
                f"rejection sampling exhausted {max_attempts} attempts "
                f"({len(out.accepted)}/{n_accept} accepted)")
        traj = run_until_extinction(cfg, replicate=rep, h=h)
        out.attempts += 1
        support = np.nonzero(traj.occupation > 0)[0]
        rhat = (traj.bin_edges[support[-1] + 1] if support.size
                else cfg.x0)
        keep = (rhat > value if kind == "level"
                else traj.zeta > value)
        if keep:
            out.accepted.append(rep)
            out.rhats.append(float(rhat))
            out.zetas.append(float(traj.zeta))
            out.profiles.append(accumulate_occupation(traj))
        rep += 1
    return out


def save_tail_csv(estimates: list[TailEstimate], path) -> None:
    with open(path, "w") as f:
        f.write("r,estimate,ci_low,ci_high,replicates,accepts\n")
        for e in estimates:
            lo, hi = e.ci
            f.write(f"{e.r:.17g},{e.estimate:.17g},{lo:.17g},{hi:.17g},"
                    f"{e.replicates},{e.successes}\n")
