"""Counter-based random number streams.

Every replicate draws from its own Philox stream identified by
(master seed, replicate index, domain tag), so results never depend on
scheduling or worker count.  Two stream families are used:

* Philox4x32-10 states consumed by the numba kernels (see kernels.py);
  the reference implementation here is pure numpy and is tested
  bit-for-bit against the kernel implementation.
* numpy's own Philox (4x64) bit generator for vectorised numpy sampling
  (total-mass chains, stable increments), keyed by (seed, domain).
"""

from __future__ import annotations

import numpy as np

# Domain tags keep streams disjoint when one replicate index is reused
# across pipeline stages.
DOMAIN_FREE = 1
DOMAIN_ABSORBED = 2
DOMAIN_LADDER = 3
DOMAIN_ANCESTOR = 4
DOMAIN_CHAIN = 5
DOMAIN_CSBP = 6

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint64(0x9E3779B9)
PHILOX_W1 = np.uint64(0xBB67AE85)

# State vector layout used by the kernels (all uint64):
# [c0, c1, c2, c3, k0, k1, buffered_u64, spare_normal_bits, flags]
# flags bit0: buffered u64 valid; bit1: spare normal valid.
STATE_SIZE = 9
_IDX_BUF = 6
_IDX_SPARE = 7
_IDX_FLAGS = 8


def make_state(seed: int, replicate: int, domain: int) -> np.ndarray:
    """Kernel RNG state for one replicate stream.

    Counter words c2/c3 carry the replicate index and domain tag, c0/c1
    count draws, and the key carries the master seed; distinct
    (seed, replicate, domain) triples index disjoint counter blocks.
    """
    st = np.zeros(STATE_SIZE, dtype=np.uint64)
    st[2] = np.uint64(replicate & 0xFFFFFFFF)
    st[3] = np.uint64(((replicate >> 32) & 0xFFFFFFFF) | ((domain & 0xFFFF) << 32))
    st[4] = np.uint64(seed & 0xFFFFFFFF)
    st[5] = np.uint64((seed >> 32) & 0xFFFFFFFF)
    return st


def philox4x32_reference(counter, key, rounds: int = 10):
    """Pure-numpy Philox4x32 block function (reference for kernel tests).

    counter: array-like of 4 uint32 words, key: 2 uint32 words.
    Returns 4 uint32 output words.
    """
    mask = np.uint64(0xFFFFFFFF)
    c = [np.uint64(int(w) & 0xFFFFFFFF) for w in counter]
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for _ in range(rounds):
        p0 = (PHILOX_M0 * c[0]) & np.uint64(0xFFFFFFFFFFFFFFFF)
        p1 = (PHILOX_M1 * c[2]) & np.uint64(0xFFFFFFFFFFFFFFFF)
        hi0, lo0 = p0 >> np.uint64(32), p0 & mask
        hi1, lo1 = p1 >> np.uint64(32), p1 & mask
        c = [
            (hi1 ^ c[1] ^ k0) & mask,
            lo1,
            (hi0 ^ c[3] ^ k1) & mask,
            lo0,
        ]
        k0 = (k0 + PHILOX_W0) & mask
        k1 = (k1 + PHILOX_W1) & mask
    return np.array(c, dtype=np.uint64)


def numpy_generator(seed: int, domain: int, block: int = 0) -> np.random.Generator:
    """Vectorised generator for numpy-side sampling, keyed like the kernel
    streams: one generator per (seed, domain, block)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, (domain << 20) | block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Ziggurat tables for the kernel normal sampler (Marsaglia-Tsang, 128 layers).
# ---------------------------------------------------------------------------

ZIG_R = 3.442619855899


def _build_ziggurat():
    m1 = 2147483648.0
    dn = ZIG_R
    tn = dn
    vn = 9.91256303526217e-3
    kn = np.zeros(128, dtype=np.int64)
    fn = np.zeros(128)
    wn = np.zeros(128)
    q = vn / np.exp(-0.5 * dn * dn)
    kn[0] = int((dn / q) * m1)
    kn[1] = 0
    wn[0] = q / m1
    wn[127] = dn / m1
    fn[0] = 1.0
    fn[127] = np.exp(-0.5 * dn * dn)
    for i in range(126, 0, -1):
        dn = np.sqrt(-2.0 * np.log(vn / dn + np.exp(-0.5 * dn * dn)))
        kn[i + 1] = int((dn / tn) * m1)
        tn = dn
        fn[i] = np.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, fn, wn


ZIG_KN, ZIG_FN, ZIG_WN = _build_ziggurat()
