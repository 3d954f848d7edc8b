"""Exit-mass ladders through increasing absorption levels.

The exit mass Y_r is the mass frozen at level r when every particle is
stopped at its first crossing of r.  Freezing must stop branching, so a
single free run cannot yield Y_r for more than one r; instead the
ladder restarts: run absorbed to r_0, release the frozen particles at
r_0 with absorption at r_1, and so on.  Frozen particles are re-used
one-for-one, so every Y_k is an exact integer multiple of 1/N and zero
is absorbing along the ladder.  The restart leaves the law of later
exit masses unchanged (strong Markov property at the exit time); the
test suite checks this against a direct single-stage run.

Each replicate owns one counter-based stream which all its stages
consume in order, so ladders are reproducible and independent across
replicates.  A stage that still has undecided particles at the per-
stage time cap (config.t_max) marks the ladder unsettled from that
level on; callers discard such replicates from exit statistics and
report the count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .engine import _MAX_CAPACITY, SimConfig, _absorbed_stage
from .rng import DOMAIN_LADDER, make_state


class LadderError(RuntimeError):
    pass


@dataclass
class ExitLadder:
    """One replicate's exit masses along an increasing level grid.

    counts[k] is the number of particles frozen at levels[k]; the exit
    mass is counts[k]/N.  stage_settled[k] is False when the stage hit
    the time cap with undecided particles; counts and settle times are
    only meaningful on the settled prefix.
    """

    levels: np.ndarray
    counts: np.ndarray
    settle_times: np.ndarray
    stage_settled: np.ndarray
    N: int
    dt: float
    y0: float
    x0: float
    seed: int
    replicate: int
    t_cap: float

    @property
    def masses(self) -> np.ndarray:
        m = self.counts / self.N
        m[~self.stage_settled] = np.nan
        return m

    @property
    def settled(self) -> bool:
        return bool(self.stage_settled.all())

    @property
    def first_zero(self) -> int:
        """Index of the first settled level with zero mass, or -1."""
        for k in range(self.levels.size):
            if not self.stage_settled[k]:
                return -1
            if self.counts[k] == 0:
                return k
        return -1


def exit_ladder(config: SimConfig, levels, *, replicate: int = 0,
                on_unsettled: str = "flag") -> ExitLadder:
    """Run the ladder restart chain for one replicate.

    The per-stage settle cap is config.t_max.  on_unsettled is "flag"
    (mark and stop the ladder) or "raise".
    """
    cfg = config
    lv = np.asarray(levels, dtype=float)
    if lv.ndim != 1 or lv.size == 0:
        raise ValueError("levels must be a nonempty 1-d sequence")
    if np.any(np.diff(lv) <= 0):
        raise ValueError("levels must be strictly increasing")
    if not lv[0] > cfg.x0:
        raise ValueError("levels[0] must exceed the initial position")
    if on_unsettled not in ("flag", "raise"):
        raise ValueError("on_unsettled must be 'flag' or 'raise'")

    counts = np.zeros(lv.size, dtype=np.int64)
    settle = np.full(lv.size, np.nan)
    ok = np.zeros(lv.size, dtype=bool)
    st = make_state(cfg.seed, replicate, DOMAIN_LADDER)
    n = cfg.n0
    x = cfg.x0
    for k in range(lv.size):
        if n == 0:
            counts[k] = 0
            settle[k] = 0.0
            ok[k] = True
            continue
        cap = max(4 * n, 1 << 14)
        while True:
            st_stage = st.copy()      # stage start, for capacity retries
            res = _absorbed_stage(st, n, x, lv[k], cfg.N, cfg.dt,
                                  cfg.p_branch, cfg.nsteps, cap=cap)
            if res["status"] == kernels.STATUS_CAPACITY:
                cap *= 4
                if cap > _MAX_CAPACITY:
                    raise MemoryError("ladder stage exceeded capacity limit")
                st = st_stage
                continue
            break
        if res["status"] != kernels.STATUS_DONE:
            if on_unsettled == "raise":
                raise LadderError(
                    f"stage to level {lv[k]:g} not settled within "
                    f"t_max={cfg.t_max:g} ({res['alive']} alive)")
            break
        counts[k] = res["frozen"]
        settle[k] = res["settle_step"] * cfg.dt
        ok[k] = True
        n = res["frozen"]
        x = lv[k]
    return ExitLadder(levels=lv, counts=counts, settle_times=settle,
                      stage_settled=ok, N=cfg.N, dt=cfg.dt, y0=cfg.y0,
                      x0=cfg.x0, seed=cfg.seed, replicate=replicate,
                      t_cap=cfg.t_max)


def ladder_ensemble(config: SimConfig, levels, replicates: int, *,
                    first_replicate: int = 0) -> list[ExitLadder]:
    """Independent ladders for replicate indices [first, first+replicates)."""
    return [exit_ladder(config, levels, replicate=first_replicate + i)
            for i in range(replicates)]


def level_hitting(ladder: ExitLadder, n: int) -> float:
    """R_n estimate: smallest ladder level with Y <= 2^(-n).

    Ties at exactly 2^(-n) count as hit.  Returns inf when no settled
    level qualifies on a fully settled ladder, nan when the ladder is
    unsettled before any qualifying level (undecidable).
    """
    thr = 2.0 ** (-n)
    if thr * ladder.N < 1.0 - 1e-9:
        raise ValueError("threshold 2^-n below the mass resolution 1/N")
    # counts are integers; Y <= thr  <=>  counts <= thr*N (exact ties ok)
    lim = thr * ladder.N * (1.0 + 1e-12)
    for k in range(ladder.levels.size):
        if not ladder.stage_settled[k]:
            return math.nan
        if ladder.counts[k] <= lim:
            return float(ladder.levels[k])
    return math.inf


def boundary_from_ladder(ladder: ExitLadder) -> tuple[float, float]:
    """Boundary estimate from the first zero-mass level.

    The boundary lies in (prev, levels[k]] where k is the first level
    with Y = 0; returns (midpoint, half-gap).
    """
    k = ladder.first_zero
    if k < 0:
        raise LadderError("no zero level reached; extend levels or t_max")
    prev = ladder.x0 if k == 0 else float(ladder.levels[k - 1])
    lvl = float(ladder.levels[k])
    return 0.5 * (prev + lvl), 0.5 * (lvl - prev)


@dataclass
class ReachEstimate:
    """Empirical P(Y_r > 0) = P(R-hat > r) from first-freeze runs.

    A replicate counts as a hit at its first freeze (Y_r > 0 decided
    without settling the rest); a replicate alive at t_max with no
    freeze is undecided, bracketing the estimate by
    [hits, hits + undecided] / replicates.
    """

    r: float
    hits: int
    undecided: int
    replicates: int

    @property
    def estimate(self) -> float:
        return (self.hits + 0.5 * self.undecided) / self.replicates

    @property
    def se(self) -> float:
        p = self.estimate
        return math.sqrt(max(p * (1 - p), 1e-300) / self.replicates)

    @property
    def bracket(self) -> tuple[float, float]:
        return (self.hits / self.replicates,
                (self.hits + self.undecided) / self.replicates)


def level_reach_probability(config: SimConfig, r: float, replicates: int, *,
                            first_replicate: int = 0) -> ReachEstimate:
    """P(exit mass at r is positive), decided per replicate at the
    first freeze or at extinction below r."""
    from .engine import run_absorbed

    hits = 0
    undecided = 0
    for i in range(replicates):
        traj, frozen = run_absorbed(config, r, replicate=first_replicate + i,
                                    stop_at_first_freeze=True)
        if frozen > 0:
            hits += 1
        elif not traj.settled:
            undecided += 1
    return ReachEstimate(r=float(r), hits=hits, undecided=undecided,
                         replicates=replicates)


def default_levels(x0: float, r_min: float, r_max: float,
                   count: int = 24) -> np.ndarray:
    """Geometric level grid in the distance from x0 (denser low, where
    the boundary law concentrates)."""
    if not (x0 < r_min < r_max):
        raise ValueError("need x0 < r_min < r_max")
    g = np.geomspace(r_min - x0, r_max - x0, count)
    return x0 + g


def boundary_layer_width(N: int) -> float:
    """Width sqrt(6/N) of the freeze-level boundary layer.

    For one initial particle of mass 1/N at x with absorption at L, the
    hit probability u(x) = P(any descendant freezes) solves the exact
    discrete-branching fixed point; in the continuous-time limit at
    fixed N it satisfies u'' = N u^2 with u(L) = 1, giving

        u(x) = 6 / (N (L - x + sqrt(6/N))^2).

    Against the mass-to-infinity law 6/(lam (L - x)^2) the particle
    system behaves as if absorbed sqrt(6/N) beyond the freeze level:
    a single frozen particle carries mass 1/N, not the infinitesimal
    mass of the scaling limit, so the effective Dirichlet boundary
    sits one cluster-width outside L.
    """
    if N <= 0:
        raise ValueError("need N > 0")
    return math.sqrt(6.0 / N)


def continuum_matched_level(r: float, N: int, fraction: float = 1.0) -> float:
    """Freeze level whose particle exit law best matches the scaling
    limit at nominal level r.

    fraction=1 returns r - sqrt(6/N), which makes the zero-mass atom
    exact: with n0 = N*y0 initial particles at 0,

        P(Y = 0) = (1 - 6/(N r^2))^{n0} = exp(-6 y0 / r^2) (1 + O(1/N)),

    the boundary-layer shift cancelling against the atom target.  Bulk
    functionals (moderate Laplace arguments) see no layer, so the full
    shift overshoots them by the same sqrt(6/N); fraction=0.5 splits
    the discrepancy and roughly halves the worst-case distributional
    (Kolmogorov) distance to the limit law.  Use 1.0 when the measured
    functional is the atom / reach probability, 0.5 when comparing the
    whole exit-mass distribution.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    level = r - fraction * boundary_layer_width(N)
    if level <= 0:
        raise ValueError("corrected level is not positive; increase N")
    return level


def save_ladder_csv(ladder: ExitLadder, path) -> None:
    with open(path, "w") as f:
        f.write(f"# N={ladder.N} dt={ladder.dt:.17g} seed={ladder.seed} "
                f"replicate={ladder.replicate} t_cap={ladder.t_cap:.17g}\n")
        f.write("level,exit_mass,settle_time\n")
        masses = ladder.masses
        for k in range(ladder.levels.size):
            f.write(f"{ladder.levels[k]:.17g},{masses[k]:.17g},"
                    f"{ladder.settle_times[k]:.17g}\n")
