"""Direct simulator and exact laws for the exit-mass process.

The exit mass Y_r, viewed as a function of the level r, is a continuous
state branching process with mechanism psi(u) = sqrt(2/3) * u^(3/2).
The mechanism follows from the exact Laplace transform

    E exp(-lam * Y_r) = exp(-6 y0 (r + sqrt(6/lam))^(-2)),

whose exponent u_r(lam) = 6 (r + sqrt(6/lam))^(-2) satisfies
d/dr u = -12 (r + sqrt(6/lam))^(-3) = -sqrt(2/3) u^(3/2) with u_0 = lam;
that is the CSBP evolution equation d/dr u = -psi(u).  (The symbolic
check lives in the test suite.)

Simulation goes through the Lamperti time change: Y is driven by a
spectrally positive 3/2-stable Levy process Z with E exp(-lam Z_tau) =
exp(tau * psi(lam)), run at speed Y:  Y_{r+dr} = max(0, Y_r +
increment(Y_r * dr)), absorbed at the first nonpositive value.
Increments are sampled by the one-sided Chambers-Mallows-Stuck
transformation; the scale conversion sigma(tau) = (tau/sqrt(3))^(2/3)
is derived in the README and guarded by a Laplace-transform unit test.

This module is the cross-check partner of the particle-ladder exit
masses: the two simulators share no mechanism code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as _integrate

from .rng import DOMAIN_CSBP, numpy_generator

ALPHA = 1.5
PSI_CONST = math.sqrt(2.0 / 3.0)

# CMS angle shift and scale for skew +1: B = arctan(tan(pi*alpha/2))/alpha,
# S = (1 + tan^2(pi*alpha/2))^(1/(2*alpha))
_CMS_B = math.atan(math.tan(math.pi * ALPHA / 2.0)) / ALPHA   # = -pi/6
_CMS_S = 2.0 ** (1.0 / 3.0)


def psi(u):
    """Branching mechanism psi(u) = sqrt(2/3) u^(3/2)."""
    return PSI_CONST * np.asarray(u, dtype=float) ** 1.5


def stable_scale(tau):
    """sigma with E exp(-lam * sigma * S) = exp(tau * psi(lam)) for the
    standardized CMS variate S: sigma = (tau * psi_c / sqrt(2))^(2/3),
    and psi_c/sqrt(2) = 1/sqrt(3)."""
    return (np.asarray(tau, dtype=float) / math.sqrt(3.0)) ** (2.0 / 3.0)


def _standard_increments(gen: np.random.Generator, n: int) -> np.ndarray:
    # one-sided CMS: U uniform(-pi/2, pi/2), W ~ Exp(1)
    u = gen.uniform(-math.pi / 2.0, math.pi / 2.0, size=n)
    w = gen.exponential(1.0, size=n)
    au = ALPHA * (u + _CMS_B)
    x = (_CMS_S * np.sin(au) / np.cos(u) ** (1.0 / ALPHA)
         * (np.cos(u - au) / w) ** ((1.0 - ALPHA) / ALPHA))
    return x


def stable_increments(tau, gen: np.random.Generator) -> np.ndarray:
    """Increments of the driving Levy process over durations tau
    (elementwise): E exp(-lam * inc) = exp(tau * psi(lam))."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("durations must be nonnegative")
    return stable_scale(tau) * _standard_increments(gen, tau.size).reshape(tau.shape)


def stable_increment(dt: float, gen: np.random.Generator) -> float:
    """One increment over duration dt > 0.

    Spectral positivity gives a super-exponential left tail: by Chernoff
    on the known Laplace transform, the standardized variate satisfies
    P(S < -x) <= exp(-2 x^3 / 27), so over n samples the minimum stays
    above -sigma(dt) * (13.5 * log(n/eps))^(1/3) except with
    probability eps (see negative_tail_bound).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    return float(stable_increments(np.array([dt]), gen)[0])


def negative_tail_bound(dt: float, n: int, eps: float = 1e-4) -> float:
    """Lower bound holding for the min of n increments w.p. >= 1 - eps."""
    x = (13.5 * math.log(max(n, 2) / eps)) ** (1.0 / 3.0)
    return -float(stable_scale(dt)) * x


@dataclass
class CsbpPath:
    """One Euler path of the exit-mass CSBP in the level variable r."""

    r: np.ndarray
    y: np.ndarray
    absorbed: bool
    absorption_r: float     # inf when never absorbed

    @property
    def final(self) -> float:
        return float(self.y[-1])


def simulate_csbp(y0: float, horizon: float, dr: float | None = None, *,
                  seed: int = 0, replicate: int = 0) -> CsbpPath:
    """Euler-Lamperti path Y_{r+dr} = max(0, Y_r + inc(Y_r * dr)),
    absorbed permanently at the first nonpositive value."""
    if y0 < 0:
        raise ValueError("y0 must be nonnegative")
    if dr is None:
        dr = 1e-3 * horizon
    nsteps = max(1, int(math.ceil(horizon / dr - 1e-9)))
    gen = numpy_generator(seed, DOMAIN_CSBP, block=replicate)
    r = dr * np.arange(nsteps + 1)
    y = np.empty(nsteps + 1)
    y[0] = y0
    cur = y0
    absorbed = cur == 0.0
    absorption_r = 0.0 if absorbed else math.inf
    for k in range(nsteps):
        if cur > 0.0:
            cur = cur + float(stable_increments(np.array([cur * dr]), gen)[0])
            if cur <= 0.0:
                cur = 0.0
                absorbed = True
                absorption_r = r[k + 1]
        y[k + 1] = cur
    return CsbpPath(r=r, y=y, absorbed=absorbed, absorption_r=absorption_r)


def csbp_ensemble(y0: float, record_levels, n_paths: int, *,
                  dr: float | None = None, seed: int = 0,
                  chunk: int = 8192, first_path: int = 0) -> np.ndarray:
    """Y at each record level for n_paths independent Euler paths.

    Paths are simulated in seed-indexed chunks of fixed size, so the
    output is identical however the chunks are scheduled; first_path
    (a multiple of chunk) lets callers compute a slice of a larger
    ensemble.  Absorbed paths stay at zero; per-step increments are
    drawn for every path in the chunk (dead paths get scale 0) to keep
    the draw count fixed.
    """
    if first_path % chunk:
        raise ValueError("first_path must be a multiple of chunk")
    levels = np.asarray(record_levels, dtype=float)
    horizon = float(levels.max())
    if dr is None:
        dr = 1e-3 * horizon
    nsteps = max(1, int(math.ceil(horizon / dr - 1e-9)))
    record_steps = np.array([int(round(r / dr)) for r in levels])
    if np.any(np.abs(record_steps * dr - levels) > 1e-9 * np.maximum(1.0, levels)):
        raise ValueError("record levels must sit on the dr grid")
    out = np.empty((n_paths, levels.size))
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        b = hi - lo
        gen = numpy_generator(seed, DOMAIN_CSBP, block=(first_path + lo) // chunk)
        y = np.full(b, float(y0))
        for k in range(1, nsteps + 1):
            tau = y * dr            # zero for absorbed paths: zero increment
            y = y + stable_scale(tau) * _standard_increments(gen, b)
            np.maximum(y, 0.0, out=y)
            sel = record_steps == k
            if sel.any():
                out[lo:hi, sel] = y[:, None]
        sel = record_steps == 0
        if sel.any():
            out[lo:hi, sel] = y0
    return out


def laplace_exact(y0: float, r: float, lam: float) -> float:
    """Closed-form E exp(-lam Y_r) = exp(-6 y0 (r + sqrt(6/lam))^(-2)).

    lam = inf gives the extinction probability exp(-6 y0 r^(-2)); r = 0
    returns exp(-lam y0) (the boundary datum u_0 = lam).
    """
    if y0 < 0 or r < 0 or lam < 0:
        raise ValueError("y0, r, lam must be nonnegative")
    if y0 == 0:
        return 1.0
    if math.isinf(lam):
        if r == 0:
            return 0.0
        return math.exp(-6.0 * y0 / (r * r))
    if lam == 0:
        return 1.0
    shift = r + math.sqrt(6.0 / lam)
    return math.exp(-6.0 * y0 / (shift * shift))


@dataclass
class PdeSolution:
    """Shooting solution of U'' = U^2 with U(r) = lam."""

    x: np.ndarray
    u: np.ndarray
    lam: float
    r: float
    residual: float         # |U(r) - lam| achieved by the shot

    def closed_form(self) -> np.ndarray:
        c = self.r + math.sqrt(6.0 / self.lam)
        return 6.0 / (c - self.x) ** 2

    @property
    def sup_error(self) -> float:
        return float(np.max(np.abs(self.u - self.closed_form())))


def solve_exit_pde(lam: float, r: float, x_min: float = 0.0,
                   tol: float = 1e-9, npoints: int = 2001) -> PdeSolution:
    """Solve U'' = U^2 on (x_min, r), U(r) = lam, by shooting on
    U'(x_min) with bisection.

    The left datum is U(x_min) = 6 (r - x_min + sqrt(6/lam))^(-2), the
    exact value of the solution bounded on (-inf, r); only the slope is
    treated as unknown.  The shot is monotone in the slope (the
    difference of two solutions obeys a linear ODE with potential
    U1 + U2 >= 0), so bisection converges once a bracket is found.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not x_min < r:
        raise ValueError("x_min must lie left of r")
    c = math.sqrt(6.0 / lam)
    u_left = 6.0 / (r - x_min + c) ** 2
    s_true = 12.0 / (r - x_min + c) ** 3      # slope of the closed form
    cap = 10.0 * lam

    def shoot(slope, dense=False):
        hit = {"val": None}

        def rhs(x, z):
            return [z[1], z[0] * z[0]]

        def blow(x, z):
            return z[0] - cap
        blow.terminal = True
        blow.direction = 1
        xs = np.linspace(x_min, r, npoints) if dense else None
        sol = _integrate.solve_ivp(rhs, (x_min, r), [u_left, slope],
                                   rtol=1e-12, atol=1e-14, t_eval=xs,
                                   events=blow, method="RK45", max_step=(r - x_min) / 16)
        if sol.t[-1] < r - 1e-12:
            return cap, sol         # blew up before the boundary
        return sol.y[0][-1], sol

    lo, hi = 0.5 * s_true, 2.0 * s_true
    flo, _ = shoot(lo)
    fhi, _ = shoot(hi)
    tries = 0
    while flo > lam:
        hi, fhi = lo, flo
        lo *= 0.5
        flo, _ = shoot(lo)
        tries += 1
        if tries > 60:
            raise RuntimeError(f"no lower shooting bracket: slope {lo:g} -> {flo:g}")
    tries = 0
    while fhi < lam:
        lo, flo = hi, fhi
        hi *= 2.0
        fhi, _ = shoot(hi)
        tries += 1
        if tries > 60:
            raise RuntimeError(f"no upper shooting bracket: slope {hi:g} -> {fhi:g}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fmid, _ = shoot(mid)
        if fmid < lam:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(abs(s_true), 1e-12):
            break
    slope = 0.5 * (lo + hi)
    fval, sol = shoot(slope, dense=True)
    return PdeSolution(x=sol.t, u=sol.y[0], lam=lam, r=r,
                       residual=abs(fval - lam))
