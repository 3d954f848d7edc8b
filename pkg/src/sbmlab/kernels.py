"""Numba kernels for the branching particle system.

One inlined step routine is shared by every mode (free, absorbed, batched
single-ancestor), so there is a single source of truth for the dynamics:
Gaussian displacement, optional freeze at a level with a Brownian-bridge
crossing correction, then critical binary branching with per-step
probability p_b = 1 - exp(-N dt).

All randomness comes from per-replicate Philox4x32-10 streams (see rng.py);
normals use a 128-layer ziggurat.  Occupation is accumulated as integer
step-visit counts so occupation identities hold exactly.

Status codes returned by the run kernels:
  0 = ran to completion (extinct / settled), 1 = horizon reached with
  survivors, 2 = particle capacity exceeded, 3 = position left the grid,
  4 = stopped early at first freeze (when requested).
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint32, uint64, int64

from .rng import ZIG_KN, ZIG_FN, ZIG_WN, ZIG_R

STATUS_DONE = 0
STATUS_HORIZON = 1
STATUS_CAPACITY = 2
STATUS_GRID = 3
STATUS_FROZE = 4

_M0 = uint64(0xD2511F53)
_M1 = uint64(0xCD9E8D57)
_W0 = uint64(0x9E3779B9)
_W1 = uint64(0xBB67AE85)
_U53 = 1.0 / 9007199254740992.0


@njit(inline="always", cache=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * uint64(c0)
        p1 = _M1 * uint64(c2)
        h0 = uint32(p0 >> uint64(32))
        l0 = uint32(p0)
        h1 = uint32(p1 >> uint64(32))
        l1 = uint32(p1)
        n0 = uint32(h1 ^ uint32(c1) ^ uint32(k0))
        n2 = uint32(h0 ^ uint32(c3) ^ uint32(k1))
        c0, c1, c2, c3 = n0, l1, n2, l0
        k0 = uint32(uint64(k0) + _W0)
        k1 = uint32(uint64(k1) + _W1)
    return c0, c1, c2, c3


@njit(inline="always", cache=True)
def _next_u64(st):
    # st layout: [c0,c1,c2,c3,k0,k1,buffer,unused,flags]; flags bit0 = buffer valid
    if st[8] & uint64(1):
        st[8] &= uint64(0xFFFFFFFFFFFFFFFE)
        return st[6]
    r0, r1, r2, r3 = _philox_block(
        uint32(st[0]), uint32(st[1]), uint32(st[2]), uint32(st[3]),
        uint32(st[4]), uint32(st[5]),
    )
    st[0] += uint64(1)
    if st[0] == uint64(0):
        st[1] += uint64(1)
    st[6] = (uint64(r2) << uint64(32)) | uint64(r3)
    st[8] |= uint64(1)
    return (uint64(r0) << uint64(32)) | uint64(r1)


@njit(inline="always", cache=True)
def _unif(st):
    return (_next_u64(st) >> uint64(11)) * _U53


@njit(inline="always", cache=True)
def _normal(st):
    while True:
        u = _next_u64(st)
        hz = int64(u & uint64(0xFFFFFFFF)) - int64(2147483648)
        iz = hz & int64(127)
        ahz = hz if hz >= 0 else -hz
        if ahz < ZIG_KN[iz]:
            return hz * ZIG_WN[iz]
        if iz == 0:
            # base strip: exponential tail beyond ZIG_R
            while True:
                x = -np.log(_unif(st)) / ZIG_R
                y = -np.log(_unif(st))
                if y + y > x * x:
                    return ZIG_R + x if hz > 0 else -(ZIG_R + x)
        else:
            x = hz * ZIG_WN[iz]
            if ZIG_FN[iz] + _unif(st) * (ZIG_FN[iz - 1] - ZIG_FN[iz]) < np.exp(-0.5 * x * x):
                return x


@njit(inline="always", cache=True)
def _advance(src, n, dst, cap, st, sqrt_dt, p_half, p_branch,
             absorbed, level, two_over_dt,
             occ, grid_lo, inv_h, nbins, count_occ):
    """One step for n alive particles in src; survivors written to dst.

    Returns (new_count, frozen_this_step, died_this_step, fault) with
    fault 0 ok, 2 capacity, 3 grid.  Draw order per particle:
    displacement, bridge uniform (absorbed, if not already crossed),
    branch uniform.
    """
    m = 0
    frozen = 0
    died = 0
    for i in range(n):
        a = src[i]
        b = a + sqrt_dt * _normal(st)
        if absorbed:
            if b >= level:
                frozen += 1
                continue
            # both endpoints below the level: bridge may still have crossed
            pcross = np.exp(-two_over_dt * (level - a) * (level - b))
            if _unif(st) < pcross:
                frozen += 1
                continue
        u = _unif(st)
        if u < p_branch:
            if u < p_half:
                died += 1
                continue          # 0 offspring
            k = 2                 # 2 offspring, both at the parent position
        else:
            k = 1
        if m + k > cap:
            return m, frozen, died, 2
        if count_occ:
            # b < grid_lo must fault; bare int64() would truncate toward 0
            if b < grid_lo:
                return m, frozen, died, 3
            ib = int64((b - grid_lo) * inv_h)
            if ib >= nbins:
                return m, frozen, died, 3
            occ[ib] += k
        for _ in range(k):
            dst[m] = b
            m += 1
    return m, frozen, died, 0


@njit(cache=True)
def free_run(st, n0, x0, sqrt_dt, p_half, p_branch, nsteps,
             grid_lo, inv_h, nbins, occ,
             snap_stride, snap_counts, snap_totals,
             ckpt_steps, ckpt_occ,
             pos_a, pos_b, final_counts, out):
    """Free-mode replicate: run to extinction or nsteps.

    occ accumulates post-branch step-visit counts for every step.
    If snap_stride > 0, per-bin counts are also recorded every
    snap_stride-th step into snap_counts/snap_totals.  ckpt_steps
    (increasing step indices) receive copies of occ as of that step,
    so profiles at intermediate horizons come from one run.
    out: [status, steps_done, extinct_step, final_alive, max_alive, n_snaps]
    """
    n = n0
    for i in range(n):
        pos_a[i] = x0
    use_a = True
    max_alive = n
    extinct_step = int64(-1)
    status = STATUS_HORIZON
    steps = int64(0)
    n_snaps = int64(0)
    n_ckpt = len(ckpt_steps)
    j = 0
    for k in range(nsteps):
        src = pos_a if use_a else pos_b
        dst = pos_b if use_a else pos_a
        n, _, _, fault = _advance(src, n, dst, len(dst), st, sqrt_dt, p_half,
                                  p_branch, False, 0.0, 0.0,
                                  occ, grid_lo, inv_h, nbins, True)
        use_a = not use_a
        steps = k + 1
        if fault != 0:
            status = fault
            break
        if n > max_alive:
            max_alive = n
        if snap_stride > 0 and (k + 1) % snap_stride == 0:
            for i in range(n):
                ib = int64((dst[i] - grid_lo) * inv_h)
                snap_counts[n_snaps, ib] += 1
            snap_totals[n_snaps] = n
            n_snaps += 1
        while j < n_ckpt and ckpt_steps[j] == k + 1:
            for b in range(nbins):
                ckpt_occ[j, b] = occ[b]
            j += 1
        if n == 0:
            extinct_step = k + 1
            status = STATUS_DONE
            break
    if status == STATUS_HORIZON or status == STATUS_DONE:
        # occupation is flat after extinction: late checkpoints see final occ
        while j < n_ckpt:
            for b in range(nbins):
                ckpt_occ[j, b] = occ[b]
            j += 1
        cur = pos_b if use_a else pos_a
        for i in range(n):
            ib = int64((cur[i] - grid_lo) * inv_h)
            if ib < 0 or ib >= nbins:
                status = STATUS_GRID
                break
            final_counts[ib] += 1
    out[0] = status
    out[1] = steps
    out[2] = extinct_step
    out[3] = n
    out[4] = max_alive
    out[5] = n_snaps


@njit(cache=True)
def absorbed_run(st, n0, x0, sqrt_dt, p_half, p_branch, nsteps,
                 level, two_over_dt, stop_at_first_freeze,
                 grid_lo, inv_h, nbins, occ, count_occ,
                 pos_a, pos_b, out):
    """Absorbed-mode replicate: run until all particles are frozen or dead.

    Frozen mass sits at `level`; occupation (when requested) counts alive
    particles only, so stage occupations of a ladder sum to the free-run
    occupation of the composed realisation.
    out: [status, steps_done, settle_step, final_alive, max_alive, frozen]
    """
    n = n0
    for i in range(n):
        pos_a[i] = x0
    use_a = True
    max_alive = n
    frozen = int64(0)
    settle_step = int64(-1)
    status = STATUS_HORIZON
    steps = int64(0)
    for k in range(nsteps):
        src = pos_a if use_a else pos_b
        dst = pos_b if use_a else pos_a
        n, fz, _, fault = _advance(src, n, dst, len(dst), st, sqrt_dt, p_half,
                                   p_branch, True, level, two_over_dt,
                                   occ, grid_lo, inv_h, nbins, count_occ)
        use_a = not use_a
        frozen += fz
        steps = k + 1
        if fault != 0:
            status = fault
            break
        if n > max_alive:
            max_alive = n
        if stop_at_first_freeze and frozen > 0:
            status = STATUS_FROZE
            break
        if n == 0:
            settle_step = k + 1
            status = STATUS_DONE
            break
    out[0] = status
    out[1] = steps
    out[2] = settle_step
    out[3] = n
    out[4] = max_alive
    out[5] = frozen


@njit(cache=True)
def ancestor_batch(states, nsys, sqrt_dt, p_half, p_branch, nsteps,
                   level, two_over_dt,
                   pos_a, sys_a, pos_b, sys_b, cap,
                   success, extinct_step):
    """Batch of independent single-ancestor systems absorbed at `level`.

    Each system s starts as one particle at 0 and consumes only its own
    stream states[s], so results are independent of how systems are
    batched.  A system stops at its first freeze (success[s] = 1) or at
    extinction; extinct_step[s] = -1 while alive at the horizon.
    Returns overall fault (0 ok, 2 capacity).
    """
    n = nsys
    for s in range(nsys):
        pos_a[s] = 0.0
        sys_a[s] = s
        success[s] = 0
        extinct_step[s] = int64(-1)
    # per-system live particle counts
    live = np.zeros(nsys, dtype=np.int64)
    for s in range(nsys):
        live[s] = 1
    use_a = True
    for k in range(nsteps):
        if n == 0:
            break
        src = pos_a if use_a else pos_b
        ssrc = sys_a if use_a else sys_b
        dst = pos_b if use_a else pos_a
        sdst = sys_b if use_a else sys_a
        m = 0
        for i in range(n):
            s = ssrc[i]
            if success[s] == 1 or extinct_step[s] >= 0:
                continue
            st = states[s]
            a = src[i]
            b = a + sqrt_dt * _normal(st)
            fz = False
            if b >= level:
                fz = True
            else:
                pcross = np.exp(-two_over_dt * (level - a) * (level - b))
                if _unif(st) < pcross:
                    fz = True
            if fz:
                success[s] = 1
                live[s] = 0
                continue
            u = _unif(st)
            if u < p_branch:
                if u < p_half:
                    live[s] -= 1
                    if live[s] == 0:
                        extinct_step[s] = k + 1
                    continue
                kk = 2
                live[s] += 1
            else:
                kk = 1
            if m + kk > cap:
                return 2
            for _ in range(kk):
                dst[m] = b
                sdst[m] = s
                m += 1
        n = m
        use_a = not use_a
    return 0


@njit(cache=True)
def step_once(positions, n, st, sqrt_dt, p_half, p_branch,
              absorbed, level, two_over_dt, dst):
    """Single engine step on an explicit alive set (engine.step wrapper).

    Returns (new_count, frozen_this_step, died_this_step, fault)."""
    occ = np.zeros(1, dtype=np.int64)
    return _advance(positions, n, dst, len(dst), st, sqrt_dt, p_half,
                    p_branch, absorbed, level, two_over_dt,
                    occ, 0.0, 1.0, 1, False)


@njit(cache=True)
def normals(st, n):
    """n ziggurat normals from a kernel stream (for distribution tests)."""
    out = np.empty(n)
    for i in range(n):
        out[i] = _normal(st)
    return out


@njit(cache=True)
def uniforms(st, n):
    """n 53-bit uniforms from a kernel stream (for stream tests)."""
    out = np.empty(n)
    for i in range(n):
        out[i] = _unif(st)
    return out


@njit(cache=True)
def raw_u64(st, n):
    """Raw 64-bit words, exposing buffering order for bit-exact tests."""
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = _next_u64(st)
    return out
