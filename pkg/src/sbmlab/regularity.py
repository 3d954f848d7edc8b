"""Boundary-regularity diagnostics for local-time profiles.

The local time of the one-dimensional process vanishes cubically at the
right edge R of its support: log L(x) against log(R - x) has slope 3 in
the infinite-density, zero-bandwidth limit, the derivative decays with
exponent 2, and explicit two-sided envelopes hold near R:

    upper:  L(x) <= 2^gamma   * (R - x)^gamma   for gamma < 3,
    lower:  L(x) >= 2^(-gamma/2) * (R - x)^gamma for gamma > 3.

At finite resolution these appear as regression slopes and satisfied
fractions; everything here is deterministic post-processing of a
profile, so replicate-level parallelism is trivial.

Fits use dyadically spaced distances snapped to bin centers (mismatch
at most h/2).  Zero bins are excluded from log fits and counted, not
floored: a sampling zero is a finite-N artifact whose log would
dominate the regression.  Because the boundary estimate R-hat enters
every distance, fits are repeated at R-hat +- h and the slope spread is
added to the regression stderr.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .exitmeasure import ExitLadder, level_hitting
from .localtime import LocalTimeProfile
from .stats import loglog_regression


class RegularityError(RuntimeError):
    pass


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    stderr: float             # regression stderr + R-hat sensitivity spread
    stderr_fit: float
    rhat_spread: float
    window: tuple
    npoints: int
    excluded_zeros: int
    rhat: float


def _dyadic_points(profile: LocalTimeProfile, rhat: float,
                   window: tuple) -> tuple[np.ndarray, np.ndarray, int]:
    """(distances, values, zeros_excluded) at half-octave spacing,
    snapped to distinct bin centers."""
    d_min, d_max = window
    centers = profile.bin_centers
    vals = profile.values
    k = 0
    seen = set()
    ds, vs, zeros = [], [], 0
    while True:
        d = d_max * 2.0 ** (-0.5 * k)
        if d < d_min * (1 - 1e-12):
            break
        k += 1
        x = rhat - d
        i = int(round((x - (profile.grid_lo + 0.5 * profile.h)) / profile.h))
        if i < 0 or i >= vals.size or i in seen:
            continue
        seen.add(i)
        d_snap = rhat - centers[i]
        if d_snap <= 0:
            continue
        if vals[i] <= 0.0:
            zeros += 1
            continue
        ds.append(d_snap)
        vs.append(vals[i])
    return np.array(ds), np.array(vs), zeros


def fit_exponent(profile: LocalTimeProfile, rhat: float,
                 window: tuple) -> ExponentFit:
    """Log-log slope of the profile against distance to the boundary.

    window = (d_min, d_max) in distance units, d_min >= 2h.  Raises
    RegularityError when fewer than 5 nonzero points remain.
    """
    d_min, d_max = window
    if not 0 < d_min < d_max:
        raise ValueError("window must satisfy 0 < d_min < d_max")
    if d_min < 2.0 * profile.h * (1 - 1e-12):
        raise ValueError("window below resolution: need d_min >= 2h")
    slopes = {}
    main = None
    for tag, r in (("mid", rhat), ("lo", rhat - profile.h),
                   ("hi", rhat + profile.h)):
        ds, vs, zeros = _dyadic_points(profile, r, window)
        if tag == "mid":
            if ds.size < 5:
                raise RegularityError(
                    f"only {ds.size} usable points in window {window} "
                    f"({zeros} zero bins excluded)")
            slope, intercept, se = loglog_regression(list(zip(ds, vs)))
            main = (slope, intercept, se, ds.size, zeros)
        else:
            if ds.size >= 2:
                s, _, _ = loglog_regression(list(zip(ds, vs)))
                slopes[tag] = s
    slope, intercept, se, npts, zeros = main
    spread = max((abs(s - slope) for s in slopes.values()), default=0.0)
    return ExponentFit(slope=slope, intercept=intercept,
                       stderr=se + spread, stderr_fit=se, rhat_spread=spread,
                       window=(d_min, d_max), npoints=npts,
                       excluded_zeros=zeros, rhat=rhat)


@dataclass
class OscillationTable:
    """Dyadic oscillation ladder osc_N near the boundary.

    osc_N = max{|L(x) - L(y)| : x in [R - 2^-N, R], |y - x| <= 2^-N};
    xi_hat is the slope of -log2 osc_N against N (inf when every
    oscillation vanishes, as for a constant profile).
    """

    scales: np.ndarray
    osc: np.ndarray
    xi_hat: float
    rhat: float


def dyadic_oscillation(profile: LocalTimeProfile, rhat: float,
                       scales) -> OscillationTable:
    ns = np.asarray(scales, dtype=int)
    if ns.size == 0:
        raise ValueError("empty scale range")
    h = profile.h
    if np.any(2.0 ** (-ns.astype(float)) < 2 * h * (1 - 1e-12)):
        raise ValueError("scales below resolution: need 2^-N >= 2h")
    vals = profile.values
    centers = profile.bin_centers
    osc = np.empty(ns.size)
    for j, n in enumerate(ns):
        delta = 2.0 ** (-float(n))
        w = int(math.ceil(delta / h))
        hi = maximum_filter1d(vals, size=2 * w + 1, mode="nearest")
        lo = minimum_filter1d(vals, size=2 * w + 1, mode="nearest")
        in_z = (centers >= rhat - delta) & (centers <= rhat) & (centers > 0)
        if not in_z.any():
            raise RegularityError(f"empty window at scale N={n}")
        osc[j] = float(np.maximum(hi - vals, vals - lo)[in_z].max())
    pos = osc > 0
    if not pos.any():
        xi = math.inf
    elif pos.sum() == 1:
        xi = math.nan
    else:
        x = ns[pos].astype(float)
        y = -np.log2(osc[pos])
        xm, ym = x.mean(), y.mean()
        xi = float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())
    return OscillationTable(scales=ns, osc=osc, xi_hat=xi, rhat=rhat)


def envelope_check(profile: LocalTimeProfile, rhat: float, gamma: float,
                   side: str, window: tuple) -> float:
    """Fraction of grid points in the window satisfying the envelope.

    side "upper": L <= 2^gamma * d^gamma;  "lower": L >= 2^(-gamma/2) *
    d^gamma, with d the distance to rhat.  Zero bins count against the
    lower envelope and trivially satisfy the upper one.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    d_min, d_max = window
    if not 0.0 < d_min < d_max:
        raise ValueError("window must satisfy 0 < d_min < d_max")
    if d_min < 2.0 * profile.h * (1.0 - 1e-12):
        raise ValueError("window start below resolution floor 2h")
    d = rhat - profile.bin_centers
    sel = (d >= d_min) & (d <= d_max)
    if not sel.any():
        raise RegularityError("empty envelope window")
    dd = d[sel]
    vv = profile.values[sel]
    if side == "upper":
        ok = vv <= 2.0 ** gamma * dd ** gamma
    else:
        ok = vv >= 2.0 ** (-0.5 * gamma) * dd ** gamma
    return float(ok.mean())


@dataclass
class LevelsetResult:
    n: int
    rn: float
    inf_value: float
    thresholds: dict          # beta -> 2^(-n*beta)
    passed: dict              # beta -> inf_value > threshold


def levelset_infimum(profile: LocalTimeProfile, ladder: ExitLadder,
                     n: int, betas=(1.6, 2.0)) -> LevelsetResult:
    """Infimum of the profile strictly inside (0, R_n), where R_n is the
    first ladder level with exit mass <= 2^-n."""
    rn = level_hitting(ladder, n)
    if not math.isfinite(rn):
        raise RegularityError(f"R_{n} unresolved on this ladder ({rn})")
    c = profile.bin_centers
    sel = (c > 0) & (c < rn)
    if not sel.any():
        raise RegularityError(f"no bins strictly inside (0, {rn:g})")
    inf_v = float(profile.values[sel].min())
    thr = {b: 2.0 ** (-n * b) for b in betas}
    return LevelsetResult(n=n, rn=rn, inf_value=inf_v, thresholds=thr,
                          passed={b: inf_v > t for b, t in thr.items()})


def derivative_boundary_decay(profile: LocalTimeProfile, rhat: float,
                              window: tuple) -> ExponentFit:
    """Log-log slope of |dL/dx| against distance to the boundary
    (cubic local time predicts slope 2)."""
    from .localtime import derivative_profile

    d_min, d_max = window
    if d_min < 2.0 * profile.h * (1 - 1e-12):
        raise ValueError("window below resolution: need d_min >= 2h")
    deriv = derivative_profile(profile)
    dprof = LocalTimeProfile(grid_lo=profile.grid_lo, h=profile.h,
                             values=np.abs(deriv),
                             counts=profile.counts, t=profile.t,
                             N=profile.N, dt=profile.dt,
                             seed=profile.seed, replicate=profile.replicate)
    return fit_exponent(dprof, rhat, window)


def save_fit_csv(fits: list[ExponentFit], path) -> None:
    with open(path, "w") as f:
        f.write("slope,stderr,window_lo,window_hi,points_used,excluded_zeros\n")
        for e in fits:
            f.write(f"{e.slope:.17g},{e.stderr:.17g},{e.window[0]:.17g},"
                    f"{e.window[1]:.17g},{e.npoints},{e.excluded_zeros}\n")


def save_oscillation_csv(table: OscillationTable, path) -> None:
    with open(path, "w") as f:
        f.write(f"# rhat={table.rhat:.17g} xi_hat={table.xi_hat:.17g}\n")
        f.write("scale,osc\n")
        for n, o in zip(table.scales, table.osc):
            f.write(f"{n},{o:.17g}\n")
