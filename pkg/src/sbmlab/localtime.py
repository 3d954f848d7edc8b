"""Local time estimation and boundary functionals.

The local time density L^x is estimated by the histogram estimator
L_hat^x = (1/h) * sum_steps dt * (mass in the bin containing x), taken
directly from the trajectory's integer step-visit counts.  Because the
counts are integers regrouped rather than re-measured, the occupation
identity h * sum_bins L_hat = dt * sum_steps X_s(1) holds exactly on
every replicate, and the quadratic-variation consistency check below is
an identity up to float summation order.

The mean oracle is q_t(x) = int_0^t (2*pi*s)^(-1/2) exp(-x^2/(2s)) ds,
the expected occupation density of the limit process started from
delta_0; a closed form of the same integral is kept alongside as an
independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as _integrate
from scipy import special as _special

from .engine import Trajectory


@dataclass
class LocalTimeProfile:
    """Binned occupation density with its integer count backbone."""

    grid_lo: float
    h: float
    values: np.ndarray      # L_hat per bin (time*mass per unit length)
    counts: np.ndarray      # int64 step-visit counts the values derive from
    t: float                # horizon the occupation covers
    N: int
    dt: float
    seed: int = 0
    replicate: int = 0

    @property
    def nbins(self) -> int:
        return len(self.values)

    @property
    def bin_edges(self) -> np.ndarray:
        return self.grid_lo + self.h * np.arange(self.nbins + 1)

    @property
    def bin_centers(self) -> np.ndarray:
        return self.grid_lo + self.h * (np.arange(self.nbins) + 0.5)

    def bin_of(self, x: float) -> int:
        i = int(math.floor((x - self.grid_lo) / self.h))
        if not 0 <= i < self.nbins:
            raise ValueError(f"x = {x:g} outside the profile grid")
        return i

    def value_at(self, x: float) -> float:
        return float(self.values[self.bin_of(x)])

    def scaled(self, c: float) -> "LocalTimeProfile":
        return LocalTimeProfile(self.grid_lo, self.h, c * self.values,
                                self.counts, self.t, self.N, self.dt,
                                self.seed, self.replicate)


@dataclass
class BoundaryEstimate:
    """Support endpoints of the super-threshold set of a profile."""

    left: float
    right: float
    threshold: float
    interior_gaps: int      # sub-threshold bins strictly between the ends


def default_threshold(N: int, h: float) -> float:
    # half of one particle's bin density 1/(N*h): "positive" means visited
    return 1.0 / (2.0 * N * h)


def accumulate_occupation(traj: Trajectory, h: float | None = None,
                          t: float | None = None) -> LocalTimeProfile:
    """Profile from a trajectory's step-visit counts.

    h must be an integer multiple of the trajectory bin width (counts are
    regrouped, never interpolated, keeping the occupation identity
    exact).  t selects an occupation checkpoint recorded by the run;
    default is the full horizon covered.
    """
    if h is None:
        m = 1
        h = traj.h
    else:
        ratio = h / traj.h
        m = int(round(ratio))
        if m < 1 or abs(ratio - m) > 1e-9:
            raise ValueError("h must be a positive integer multiple of traj.h")
    if t is None:
        occ = traj.occupation
        t_cov = traj.t_run
    else:
        hits = np.nonzero(np.abs(traj.ckpt_times - t) <= 1e-9 * max(1.0, t))[0]
        if len(hits) == 0:
            raise ValueError(f"no occupation checkpoint at t = {t:g}")
        occ = traj.ckpt_occupation[hits[0]]
        t_cov = float(traj.ckpt_times[hits[0]])
    n = len(occ)
    ng = (n + m - 1) // m
    if n % m:
        padded = np.zeros(ng * m, dtype=np.int64)
        padded[:n] = occ
        occ = padded
    counts = occ.reshape(ng, m).sum(axis=1)
    values = counts * (traj.dt / (traj.N * h))
    return LocalTimeProfile(grid_lo=traj.grid_lo, h=h, values=values,
                            counts=counts, t=t_cov, N=traj.N, dt=traj.dt,
                            seed=traj.seed, replicate=traj.replicate)


def mean_local_time_oracle(t: float, x: float) -> float:
    """E L_t^x for the unit-mass start at 0, by adaptive quadrature."""
    if t <= 0:
        raise ValueError("t must be positive")
    x2 = x * x

    def integrand(s):
        return math.exp(-x2 / (2.0 * s)) / math.sqrt(2.0 * math.pi * s)

    val, _ = _integrate.quad(integrand, 0.0, t, epsabs=1e-9, limit=200)
    return val


def mean_local_time_exact(t: float, x: float) -> float:
    """Closed form of the same integral (independent route for tests):
    sqrt(2t/pi) exp(-x^2/2t) - |x| erfc(|x|/sqrt(2t))."""
    if t <= 0:
        raise ValueError("t must be positive")
    ax = abs(x)
    return (math.sqrt(2.0 * t / math.pi) * math.exp(-ax * ax / (2.0 * t))
            - ax * _special.erfc(ax / math.sqrt(2.0 * t)))


def detect_boundary(profile: LocalTimeProfile,
                    threshold: float | None = None) -> BoundaryEstimate:
    """Endpoints of the rightmost/leftmost bins exceeding the threshold."""
    if threshold is None:
        threshold = default_threshold(profile.N, profile.h)
    mask = profile.values > threshold
    idx = np.nonzero(mask)[0]
    if len(idx) == 0:
        raise ValueError("profile has no support above the threshold")
    lo, hi = int(idx[0]), int(idx[-1])
    gaps = int((hi - lo + 1) - len(idx))
    edges = profile.bin_edges
    return BoundaryEstimate(left=float(edges[lo]), right=float(edges[hi + 1]),
                            threshold=threshold, interior_gaps=gaps)


def _mass_functional(counts_row, centers, x, N):
    return float(np.sum(counts_row * np.abs(centers - x))) / N


def tanaka_residual(traj: Trajectory, profile: LocalTimeProfile,
                    x: float, t: float) -> float:
    """Martingale part M_hat_t(g_x) = X_t(g_x) - X_0(g_x) - L_hat_t^x
    with g_x(y) = |y - x|; X_t(g_x) is grid-summed mass times distance.

    Zero mean over replicates; second moment y0*(t^2/2) + y0*x^2*t for a
    start at the origin.  t must be the trajectory horizon or one of its
    stride sample times.
    """
    if math.isclose(x, traj.x0, rel_tol=0.0, abs_tol=1e-12):
        raise ValueError("x must differ from the starting point")
    centers = traj.bin_centers
    if (abs(t - traj.t_run) <= 1e-9 * max(1.0, t)
            or (traj.extinct and t >= traj.t_run)):
        # extinct runs hold the zero measure from zeta onward, so the
        # (empty) final state is the state at any later t as well
        row = traj.final_counts
    else:
        if traj.counts is None:
            raise ValueError("t is not the horizon and no snapshots recorded")
        hits = np.nonzero(np.abs(traj.times - t) <= 1e-9 * max(1.0, t))[0]
        if len(hits) == 0:
            raise ValueError(f"no snapshot at t = {t:g}")
        row = traj.counts[hits[0]]
    xt_g = _mass_functional(row, centers, x, traj.N)
    x0_g = traj.y0 * abs(x - traj.x0)
    return xt_g - x0_g - profile.value_at(x)


def derivative_profile(profile: LocalTimeProfile) -> np.ndarray:
    """Central-difference slope per bin; one-sided at the edges."""
    v = profile.values
    if len(v) < 3:
        raise ValueError("need at least 3 bins")
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * profile.h)
    out[0] = (v[1] - v[0]) / profile.h
    out[-1] = (v[-1] - v[-2]) / profile.h
    return out


def qvar_consistency(traj: Trajectory, profile: LocalTimeProfile,
                     x: float, y: float, t: float) -> float:
    """Relative residual between two summation orders of the occupation
    of [x, y]: A = 4*dt*sum_samples(mass in [x,y]) from the per-step
    snapshots, B = 4*h*sum_bins L_hat over the same bins.  On a
    grid-aligned window both sum identical integers, so the residual is
    float-roundoff only; misaligned endpoints shift the bin set by at
    most one bin per side.
    """
    if not x < y:
        raise ValueError("need x < y")
    if traj.counts is None or len(traj.times) == 0:
        raise ValueError("needs a trajectory with per-step snapshots")
    stride_dt = float(traj.times[0])
    nrows = int(round(t / stride_dt))
    if nrows > len(traj.times):
        if not traj.extinct:
            raise ValueError("t beyond recorded samples")
        # extinct before t: all later samples are identically zero, so the
        # recorded rows already hold the full integral
        nrows = len(traj.times)
    # trajectory-resolution bin range fully inside [x, y]
    i0 = int(math.ceil((x - traj.grid_lo) / traj.h - 1e-9))
    i1 = int(math.floor((y - traj.grid_lo) / traj.h + 1e-9))
    i0 = max(i0, 0)
    i1 = min(i1, traj.nbins)
    a = 0.0
    if i1 > i0:
        col = traj.counts[:nrows, i0:i1].sum(axis=1, dtype=np.int64)
        a = 4.0 * stride_dt * float(col.sum()) / traj.N
    j0 = int(math.ceil((x - profile.grid_lo) / profile.h - 1e-9))
    j1 = int(math.floor((y - profile.grid_lo) / profile.h + 1e-9))
    j0 = max(j0, 0)
    j1 = min(j1, profile.nbins)
    b = 4.0 * profile.h * float(profile.values[j0:j1].sum()) if j1 > j0 else 0.0
    return abs(a - b) / max(abs(a), 1e-12)


def save_profile_csv(profile: LocalTimeProfile, path) -> None:
    """bin_left, bin_right, value rows; run parameters in a comment line."""
    edges = profile.bin_edges
    with open(path, "w", newline="") as f:
        f.write(f"# N={profile.N} dt={profile.dt!r} h={profile.h!r} "
                f"t={profile.t!r} seed={profile.seed}\n")
        f.write("bin_left,bin_right,value\n")
        for i, v in enumerate(profile.values):
            f.write(f"{edges[i]:.17g},{edges[i + 1]:.17g},{v:.17g}\n")
