"""Philox4x32-10 counter-based generator and Gaussian draws keyed by counters.

Every draw is a pure function of (key, counter), so noise for a given
(seed, member, step, wavevector) can be regenerated anywhere without
carrying generator state around.
"""
import numpy as np
from numba import njit

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
_S5 = np.uint64(5)
_S6 = np.uint64(6)

# Domain tags occupy the top byte of counter word 0.
DOMAIN_PDE_NOISE = 0
DOMAIN_INITIAL = 1
DOMAIN_SHELL = 2
DOMAIN_GENERIC = 3


@njit(cache=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT
        lo0 = p0 & _MASK
        hi1 = p1 >> _SHIFT
        lo1 = p1 & _MASK
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
    return c0, c1, c2, c3


@njit(cache=True)
def _philox_array(counters, key0, key1, out):
    n = counters.shape[0]
    for i in range(n):
        a, b, c, d = _philox_block(
            np.uint64(counters[i, 0]), np.uint64(counters[i, 1]),
            np.uint64(counters[i, 2]), np.uint64(counters[i, 3]),
            np.uint64(key0), np.uint64(key1),
        )
        out[i, 0] = a
        out[i, 1] = b
        out[i, 2] = c
        out[i, 3] = d


def philox4x32(counters, key):
    """Apply Philox4x32-10 to an ``(n, 4)`` array of 32-bit counter words.

    ``key`` is a pair of 32-bit words. Returns an ``(n, 4)`` uint64 array of
    32-bit output words.
    """
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    if counters.ndim != 2 or counters.shape[1] != 4:
        raise ValueError("counters must have shape (n, 4)")
    out = np.empty_like(counters)
    _philox_array(counters, np.uint64(key[0]) & _MASK, np.uint64(key[1]) & _MASK, out)
    return out


@njit(cache=True)
def _complex_normals(c1, c2, c3, c0_base, n_complex, key0, key1, out):
    # One Philox block -> two 53-bit uniforms -> one complex normal, E|z|^2 = 1.
    n = c1.shape[0]
    two_pi = 2.0 * np.pi
    for i in range(n):
        for b in range(n_complex):
            w0, w1, w2, w3 = _philox_block(
                np.uint64(c0_base) + np.uint64(b), np.uint64(c1[i]), np.uint64(c2[i]),
                np.uint64(c3[i]), np.uint64(key0), np.uint64(key1),
            )
            u1 = ((w0 >> _S5) * 67108864.0 + (w1 >> _S6)) * (1.0 / 9007199254740992.0)
            u2 = ((w2 >> _S5) * 67108864.0 + (w3 >> _S6)) * (1.0 / 9007199254740992.0)
            rad = np.sqrt(-np.log(1.0 - u1))
            ang = two_pi * u2
            out[i, b] = complex(rad * np.cos(ang), rad * np.sin(ang))


def split_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def complex_normals(seed, domain, index, step, member, n_complex):
    """Unit complex Gaussians keyed by ``(seed; domain, index, step, member)``.

    ``index``, ``step`` and ``member`` broadcast against each other; the
    result has shape ``broadcast_shape + (n_complex,)``. Real and imaginary
    parts are independent N(0, 1/2).
    """
    if not 0 <= n_complex < 2**24:
        raise ValueError("n_complex out of range")
    index, step, member = np.broadcast_arrays(
        np.asarray(index, dtype=np.int64),
        np.asarray(step, dtype=np.int64),
        np.asarray(member, dtype=np.int64),
    )
    shape = index.shape
    k0, k1 = split_seed(seed)
    c1 = np.ascontiguousarray(index.ravel() & 0xFFFFFFFF, dtype=np.uint64)
    c2 = np.ascontiguousarray(step.ravel() & 0xFFFFFFFF, dtype=np.uint64)
    c3 = np.ascontiguousarray(member.ravel() & 0xFFFFFFFF, dtype=np.uint64)
    out = np.empty((c1.shape[0], n_complex), dtype=np.complex128)
    _complex_normals(c1, c2, c3, np.uint64(int(domain) << 24), n_complex, np.uint64(k0), np.uint64(k1), out)
    return out.reshape(shape + (n_complex,))
