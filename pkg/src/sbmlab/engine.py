"""Critical branching Brownian particle system.

Approximates super-Brownian motion started from y0 * delta_{x0}:
round(y0*N) particles of mass 1/N start at x0; each step every alive
particle takes an independent N(0, dt) displacement and then branches
with probability p_b = 1 - exp(-N*dt) into 0 or 2 offspring (equal odds,
both at the parent position).  This mass-1/N / rate-N scaling gives the
limit process branching rate one; see the README for the quadratic
variation bookkeeping.  The constraint N*dt <= 0.1 keeps the
one-branching-event-per-step approximation honest.

Absorbed mode freezes particles at a level r > x0 on first crossing.  A
step from a to b freezes outright when b >= r, and otherwise with the
Brownian bridge crossing probability exp(-2(r-a)(r-b)/dt); the bridge
term removes the O(sqrt(dt)) bias of endpoint-only crossing detection.
Frozen particles stop moving and branching, so frozen_count/N is the
exit mass at r.

Occupation is tallied as integer step-visit counts on a fixed grid
(post-branch multiplicity, alive particles only), which makes the
occupation identity used by the local time estimator exact rather than
approximate.  Replicate streams derive from (seed, replicate index) via
a counter-based generator, so results do not depend on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .rng import (DOMAIN_FREE, DOMAIN_ABSORBED, DOMAIN_ANCESTOR,
                  DOMAIN_CHAIN, make_state, numpy_generator)

MAX_NDT = 0.1
_MAX_CAPACITY = 1 << 27


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one particle-system realisation.

    N      particles per unit mass (density); particle mass is 1/N
    dt     time step; N*dt <= 0.1 enforced
    t_max  horizon
    y0     initial mass at x0 (round(y0*N) >= 1 enforced)
    freeze_level  absorption level, required in absorbed mode
    seed   64-bit master seed; replicate streams derive from it
    """

    N: int
    dt: float
    t_max: float
    y0: float = 1.0
    x0: float = 0.0
    freeze_level: float | None = None
    seed: int = 0
    mode: str = "free"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.N * self.dt > MAX_NDT * (1 + 1e-12):
            raise ValueError(
                f"N*dt = {self.N * self.dt:g} exceeds {MAX_NDT}; "
                "per-step branching probability would be too coarse")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if round(self.y0 * self.N) < 1:
            raise ValueError("initial mass y0 rounds to zero particles")
        if self.mode not in ("free", "absorbed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "absorbed":
            if self.freeze_level is None:
                raise ValueError("absorbed mode needs freeze_level")
            if not self.freeze_level > self.x0:
                raise ValueError("freeze_level must exceed x0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def n0(self) -> int:
        return int(round(self.y0 * self.N))

    @property
    def p_branch(self) -> float:
        return -math.expm1(-self.N * self.dt)

    @property
    def nsteps(self) -> int:
        return max(1, int(math.ceil(self.t_max / self.dt - 1e-9)))


@dataclass
class ParticleSystem:
    """Explicit particle state for the step-at-a-time API.

    positions holds alive particles only; frozen particles all sit at
    freeze_level and are counted, dead particles carry no mass and are
    dropped.  rng_state is mutated by step().
    """

    config: SimConfig
    positions: np.ndarray
    t: float = 0.0
    steps: int = 0
    frozen_count: int = 0
    dead_count: int = 0
    rng_state: np.ndarray = field(default=None, repr=False)

    @property
    def alive_count(self) -> int:
        return len(self.positions)

    @property
    def total_mass(self) -> float:
        # alive + frozen; dead particles carry no mass
        return (self.alive_count + self.frozen_count) / self.config.N

    @property
    def frozen_positions(self) -> np.ndarray:
        lvl = self.config.freeze_level
        return np.full(self.frozen_count, 0.0 if lvl is None else lvl)


def init_system(config: SimConfig, replicate: int = 0) -> ParticleSystem:
    """round(y0*N) alive particles at x0, stream from (seed, replicate)."""
    domain = DOMAIN_FREE if config.mode == "free" else DOMAIN_ABSORBED
    st = make_state(config.seed, replicate, domain)
    pos = np.full(config.n0, float(config.x0))
    return ParticleSystem(config=config, positions=pos, rng_state=st)


def step(sys: ParticleSystem, dt: float | None = None) -> ParticleSystem:
    """One step: displacement, then freeze check (absorbed), then branching.

    dt, if given, must equal the config step (the discretisation is fixed
    per system).  Returns a new ParticleSystem; the rng state advances.
    """
    cfg = sys.config
    if dt is not None and not math.isclose(dt, cfg.dt, rel_tol=1e-12):
        raise ValueError("step dt must match config.dt")
    n = len(sys.positions)
    absorbed = cfg.mode == "absorbed"
    level = cfg.freeze_level if absorbed else 0.0
    dst = np.empty(max(2 * n, 2))
    m, fz, died, fault = kernels.step_once(
        sys.positions, n, sys.rng_state, math.sqrt(cfg.dt),
        cfg.p_branch / 2.0, cfg.p_branch, absorbed, float(level),
        2.0 / cfg.dt, dst)
    assert fault == 0  # dst has room for 2 children per parent
    return ParticleSystem(
        config=cfg, positions=dst[:m].copy(), t=sys.t + cfg.dt,
        steps=sys.steps + 1, frozen_count=sys.frozen_count + fz,
        dead_count=sys.dead_count + died, rng_state=sys.rng_state)


@dataclass
class Trajectory:
    """Recorded output of one replicate.

    occupation holds integer step-visit counts per bin accumulated over
    every step up to t_run; local time estimates derive from it exactly.
    counts/alive are per-bin and total alive counts at the (optional)
    stride sample times.  In absorbed mode frozen_count/N is the exit
    mass and `settled` reports whether no alive particles remain.
    """

    N: int
    dt: float
    h: float
    grid_lo: float
    nbins: int
    x0: float
    y0: float
    seed: int
    replicate: int
    times: np.ndarray
    counts: np.ndarray | None
    alive: np.ndarray
    occupation: np.ndarray
    ckpt_times: np.ndarray
    ckpt_occupation: np.ndarray
    final_counts: np.ndarray
    t_run: float
    extinct: bool
    zeta: float
    max_alive: int
    frozen_count: int = 0
    settled: bool = True
    level: float | None = None
    final_alive: int = 0

    @property
    def bin_edges(self) -> np.ndarray:
        return self.grid_lo + self.h * np.arange(self.nbins + 1)

    @property
    def bin_centers(self) -> np.ndarray:
        return self.grid_lo + self.h * (np.arange(self.nbins) + 0.5)

    @property
    def totals(self) -> np.ndarray:
        """Total mass X_t(1) at the stride sample times."""
        return self.alive / self.N

    @property
    def final_mass(self) -> float:
        return float(self.final_counts.sum()) / self.N

    @property
    def not_extinct_by_horizon(self) -> bool:
        return not self.extinct


def _default_halfwidth(cfg: SimConfig) -> float:
    # generous Brownian range bound; widened automatically on overflow
    return abs(cfg.x0) + 6.0 * math.sqrt(cfg.t_max) + 3.0 * math.sqrt(max(1.0, cfg.y0))


def _grid(cfg: SimConfig, h: float, halfwidth: float) -> tuple[float, int]:
    # bin centers at x0 + k*h so probe points on the h-lattice sit mid-bin
    k = int(math.ceil(halfwidth / h)) + 1
    return cfg.x0 - h / 2 - k * h, 2 * k + 1


def run_until_extinction(config: SimConfig, *, replicate: int = 0,
                         h: float | None = None,
                         halfwidth: float | None = None,
                         snapshot_stride: int = 0,
                         checkpoint_times: tuple = (),
                         p_branch_override: float | None = None) -> Trajectory:
    """Free-mode replicate recording occupation (always) and optional
    per-bin snapshots every snapshot_stride steps.

    h defaults to N^(-1/3) (variance ~ 1/(N h) against bin bias ~ h^3 at
    the boundary).  checkpoint_times get occupation copies, giving
    profiles at intermediate horizons.  p_branch_override=0 disables
    branching (pure Brownian cloud, used by calibration tests).
    """
    if config.mode != "free":
        raise ValueError("run_until_extinction requires free mode")
    cfg = config
    if h is None:
        h = cfg.N ** (-1.0 / 3.0)
    if halfwidth is None:
        halfwidth = _default_halfwidth(cfg)
    p_b = cfg.p_branch if p_branch_override is None else float(p_branch_override)
    nsteps = cfg.nsteps
    ckpt_steps = np.array(sorted(int(round(t / cfg.dt)) for t in checkpoint_times),
                          dtype=np.int64)
    if len(ckpt_steps) and (ckpt_steps[0] < 1 or ckpt_steps[-1] > nsteps):
        raise ValueError("checkpoint times outside (0, t_max]")
    stride = int(snapshot_stride)
    cap = max(4 * cfg.n0, 1 << 16)
    while True:
        grid_lo, nbins = _grid(cfg, h, halfwidth)
        occ = np.zeros(nbins, dtype=np.int64)
        n_snap_max = nsteps // stride if stride > 0 else 0
        snap_counts = np.zeros((n_snap_max, nbins), dtype=np.int32)
        snap_totals = np.zeros(n_snap_max, dtype=np.int64)
        ckpt_occ = np.zeros((len(ckpt_steps), nbins), dtype=np.int64)
        final_counts = np.zeros(nbins, dtype=np.int64)
        out = np.zeros(8, dtype=np.int64)
        st = make_state(cfg.seed, replicate, DOMAIN_FREE)
        pos_a = np.empty(cap)
        pos_b = np.empty(cap)
        kernels.free_run(st, cfg.n0, float(cfg.x0), math.sqrt(cfg.dt),
                         p_b / 2.0, p_b, nsteps, grid_lo, 1.0 / h, nbins,
                         occ, stride, snap_counts, snap_totals,
                         ckpt_steps, ckpt_occ, pos_a, pos_b, final_counts, out)
        status = int(out[0])
        if status == kernels.STATUS_CAPACITY:
            cap *= 4
            if cap > _MAX_CAPACITY:
                raise MemoryError("particle population exceeded capacity limit")
            continue
        if status == kernels.STATUS_GRID:
            halfwidth *= 1.5
            continue
        break
    steps_done = int(out[1])
    extinct = int(out[2]) >= 0
    n_snaps = int(out[5])
    return Trajectory(
        N=cfg.N, dt=cfg.dt, h=h, grid_lo=grid_lo, nbins=nbins,
        x0=cfg.x0, y0=cfg.y0, seed=cfg.seed, replicate=replicate,
        times=cfg.dt * stride * np.arange(1, n_snaps + 1),
        counts=snap_counts[:n_snaps] if stride > 0 else None,
        alive=snap_totals[:n_snaps],
        occupation=occ, ckpt_times=ckpt_steps * cfg.dt,
        ckpt_occupation=ckpt_occ, final_counts=final_counts,
        t_run=steps_done * cfg.dt, extinct=extinct,
        zeta=int(out[2]) * cfg.dt if extinct else math.inf,
        max_alive=int(out[4]), final_alive=int(out[3]))


def _absorbed_stage(st, n0, x0, level, N, dt, p_branch, nsteps, *,
                    stop_at_first_freeze=False, count_occ=False,
                    h=0.0, grid_lo=0.0, nbins=1, occ=None, cap=None):
    """Run one absorbed stage on an existing stream state.

    Returns dict with frozen, status, steps, alive, max_alive.  The
    caller owns retries: on capacity/grid faults the stream state has
    been consumed, so the whole replicate must be re-run from a fresh
    state (results are reproducible because streams are counter-based).
    """
    if cap is None:
        cap = max(4 * n0, 1 << 16)
    if occ is None:
        occ = np.zeros(max(nbins, 1), dtype=np.int64)
    out = np.zeros(8, dtype=np.int64)
    pos_a = np.empty(cap)
    pos_b = np.empty(cap)
    kernels.absorbed_run(st, n0, float(x0), math.sqrt(dt),
                         p_branch / 2.0, p_branch, nsteps, float(level),
                         2.0 / dt, stop_at_first_freeze, grid_lo,
                         1.0 / h if h else 1.0, nbins if count_occ else 1,
                         occ, count_occ, pos_a, pos_b, out)
    return dict(status=int(out[0]), steps=int(out[1]),
                settle_step=int(out[2]), alive=int(out[3]),
                max_alive=int(out[4]), frozen=int(out[5]), occ=occ)


def run_absorbed(config: SimConfig, level: float | None = None, *,
                 replicate: int = 0, stop_at_first_freeze: bool = False,
                 h: float | None = None, halfwidth: float | None = None,
                 count_occupation: bool = False) -> tuple[Trajectory, int]:
    """Absorbed replicate: run until every particle is frozen or dead.

    Returns (trajectory, frozen_count); exit mass at the level is
    frozen_count/N.  traj.settled is False when the horizon was reached
    with alive particles (caller decides whether to discard).
    """
    cfg = config
    if cfg.mode != "absorbed" and level is None:
        raise ValueError("run_absorbed requires absorbed mode or explicit level")
    lvl = float(cfg.freeze_level if level is None else level)
    if not lvl > cfg.x0:
        raise ValueError("level must exceed x0")
    if h is None:
        h = cfg.N ** (-1.0 / 3.0)
    if halfwidth is None:
        halfwidth = max(_default_halfwidth(cfg), lvl + 1.0)
    cap = max(4 * cfg.n0, 1 << 16)
    while True:
        grid_lo, nbins = _grid(cfg, h, halfwidth)
        occ = np.zeros(nbins, dtype=np.int64)
        st = make_state(cfg.seed, replicate, DOMAIN_ABSORBED)
        res = _absorbed_stage(st, cfg.n0, cfg.x0, lvl, cfg.N, cfg.dt,
                              cfg.p_branch, cfg.nsteps,
                              stop_at_first_freeze=stop_at_first_freeze,
                              count_occ=count_occupation, h=h,
                              grid_lo=grid_lo, nbins=nbins, occ=occ, cap=cap)
        if res["status"] == kernels.STATUS_CAPACITY:
            cap *= 4
            if cap > _MAX_CAPACITY:
                raise MemoryError("particle population exceeded capacity limit")
            continue
        if res["status"] == kernels.STATUS_GRID:
            halfwidth *= 1.5
            continue
        break
    settled = res["status"] in (kernels.STATUS_DONE, kernels.STATUS_FROZE)
    empty_i = np.zeros(0, dtype=np.int64)
    traj = Trajectory(
        N=cfg.N, dt=cfg.dt, h=h, grid_lo=grid_lo, nbins=nbins,
        x0=cfg.x0, y0=cfg.y0, seed=cfg.seed, replicate=replicate,
        times=np.zeros(0), counts=None, alive=empty_i,
        occupation=occ if count_occupation else np.zeros(nbins, dtype=np.int64),
        ckpt_times=np.zeros(0), ckpt_occupation=np.zeros((0, nbins), dtype=np.int64),
        final_counts=np.zeros(nbins, dtype=np.int64),
        t_run=res["steps"] * cfg.dt,
        extinct=res["settle_step"] >= 0 and res["frozen"] == 0,
        zeta=res["settle_step"] * cfg.dt if res["settle_step"] >= 0 else math.inf,
        max_alive=res["max_alive"], frozen_count=res["frozen"],
        settled=settled, level=lvl, final_alive=res["alive"])
    return traj, res["frozen"]


def mass_chain(N: int, dt: float, y0: float, seed: int, replicates: int,
               record_times, *, chunk: int = 4096,
               first_replicate: int = 0) -> np.ndarray:
    """Alive-particle counts of the total-mass chain at record_times.

    Branching is independent of positions, so the total-mass process of
    the spatial system is exactly this Galton-Watson chain: per step,
    events ~ Binomial(alive, p_b), doubles ~ Binomial(events, 1/2),
    alive' = alive - events + 2*doubles.  Vectorised across replicates
    in seed-indexed chunks; output is independent of chunking because
    each chunk owns its stream.
    """
    if N * dt > MAX_NDT * (1 + 1e-12):
        raise ValueError("N*dt exceeds 0.1")
    n0 = int(round(y0 * N))
    if n0 < 1:
        raise ValueError("initial mass rounds to zero particles")
    p_b = -math.expm1(-N * dt)
    record_steps = np.array([int(round(t / dt)) for t in record_times])
    if np.any(record_steps < 0):
        raise ValueError("record times must be >= 0")
    nsteps = int(record_steps.max(initial=0))
    out = np.zeros((replicates, len(record_steps)), dtype=np.int64)
    for lo in range(0, replicates, chunk):
        hi = min(lo + chunk, replicates)
        gen = numpy_generator(seed, DOMAIN_CHAIN, block=(first_replicate + lo) // chunk)
        alive = np.full(hi - lo, n0, dtype=np.int64)
        for k in range(1, nsteps + 1):
            events = gen.binomial(alive, p_b)
            doubles = gen.binomial(events, 0.5)
            alive += 2 * doubles - events
            sel = record_steps == k
            if sel.any():
                out[lo:hi, sel] = alive[:, None]
            if not alive.any():
                break  # extinct chunk: all later records stay 0
        sel = record_steps == 0
        if sel.any():
            out[lo:hi, sel] = n0
    return out


def run_ancestor_batch(seed: int, N: int, dt: float, level: float,
                       t_max: float, n_systems: int, *,
                       first_replicate: int = 0,
                       batch: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """n_systems independent single-ancestor systems absorbed at level.

    System i uses stream (seed, first_replicate + i), so outcomes are
    independent of batching.  Returns (success, extinct_step): success
    means some descendant froze at the level (the system stops there);
    extinct_step is -1 for successes and for systems alive at t_max.
    """
    if N * dt > MAX_NDT * (1 + 1e-12):
        raise ValueError("N*dt exceeds 0.1")
    p_b = -math.expm1(-N * dt)
    nsteps = max(1, int(math.ceil(t_max / dt - 1e-9)))
    success = np.zeros(n_systems, dtype=np.int64)
    extinct_step = np.full(n_systems, -1, dtype=np.int64)
    for lo in range(0, n_systems, batch):
        hi = min(lo + batch, n_systems)
        b = hi - lo
        cap = 16 * b + 4096
        while True:
            states = np.empty((b, 9), dtype=np.uint64)
            for i in range(b):
                states[i] = make_state(seed, first_replicate + lo + i,
                                       DOMAIN_ANCESTOR)
            pos_a = np.empty(cap)
            pos_b = np.empty(cap)
            sys_a = np.empty(cap, dtype=np.int64)
            sys_b = np.empty(cap, dtype=np.int64)
            suc = np.zeros(b, dtype=np.int64)
            ext = np.zeros(b, dtype=np.int64)
            fault = kernels.ancestor_batch(states, b, math.sqrt(dt),
                                           p_b / 2.0, p_b, nsteps,
                                           float(level), 2.0 / dt,
                                           pos_a, sys_a, pos_b, sys_b, cap,
                                           suc, ext)
            if fault == 2:
                cap *= 4
                if cap > _MAX_CAPACITY:
                    raise MemoryError("ancestor batch exceeded capacity limit")
                continue
            break
        success[lo:hi] = suc
        extinct_step[lo:hi] = ext
    return success, extinct_step
