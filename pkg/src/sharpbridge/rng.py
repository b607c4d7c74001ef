"""Counter-based random numbers for reproducible parallel simulation.

Implements the Philox-4x64 block cipher (10 rounds, the same constants
and round function as numpy's Philox bit generator) directly on numpy
uint64 arrays, so that the normal draw consumed by path p at step
group g is a pure function of (seed, p, g). There is no mutable
generator state: any partition of the paths across workers, and any
execution order, reproduces bit-identical streams.

Mapping: key = (seed, stream tag), counter = (p, g, tag2, 0). Each
block yields four uint64 words, turned into doubles in (0, 1) and then
into normals through the inverse standard-normal CDF.

The block function is tested against numpy's Philox implementation
(numpy emits the block for counter + 1, a convention quirk of its
buffering, which the test accounts for).
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
PHILOX_M1 = np.uint64(0xCA5A826395121157)
WEYL_0 = np.uint64(0x9E3779B97F4A7C15)
WEYL_1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_ROUNDS = 10

# second key word: fixed tag so streams from this package never collide
# with a plain (seed, 0) keyed Philox stream
KEY_TAG = np.uint64(0x5368727042726467)  # "ShrpBrdg"


def _mulhilo(a: np.uint64, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """128-bit product of a scalar constant with a uint64 array,
    returned as (high, low) 64-bit words. All arithmetic wraps mod 2^64."""
    lo = a * b
    a_lo = a & _MASK32
    a_hi = a >> _SHIFT32
    b_lo = b & _MASK32
    b_hi = b >> _SHIFT32
    t = a_hi * b_lo + ((a_lo * b_lo) >> _SHIFT32)
    hi = a_hi * b_hi + (t >> _SHIFT32) + ((a_lo * b_hi + (t & _MASK32)) >> _SHIFT32)
    return hi, lo


def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox-4x64-10 block function, elementwise over counter arrays.

    Returns the four output words; inputs may be arrays or scalars of
    dtype uint64.
    """
    c0 = np.asarray(c0, dtype=np.uint64)
    c1 = np.asarray(c1, dtype=np.uint64)
    c2 = np.asarray(c2, dtype=np.uint64)
    c3 = np.asarray(c3, dtype=np.uint64)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    with np.errstate(over="ignore"):
        for r in range(_ROUNDS):
            if r > 0:
                k0 = k0 + WEYL_0
                k1 = k1 + WEYL_1
            hi0, lo0 = _mulhilo(PHILOX_M0, c0)
            hi1, lo1 = _mulhilo(PHILOX_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _to_open_unit(x: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles strictly inside (0, 1)."""
    return ((x >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0 ** -52


def _uniform_block_numpy(seed: int, path_ids: np.ndarray, group: int,
                         stream: int) -> np.ndarray:
    p = np.asarray(path_ids, dtype=np.uint64)
    g = np.uint64(group)
    tag = np.uint64(stream)
    c0, c1, c2, c3 = philox4x64(p, np.full_like(p, g), np.full_like(p, tag),
                                np.zeros_like(p), np.uint64(seed), KEY_TAG)
    out = np.empty((p.size, 4))
    out[:, 0] = _to_open_unit(c0)
    out[:, 1] = _to_open_unit(c1)
    out[:, 2] = _to_open_unit(c2)
    out[:, 3] = _to_open_unit(c3)
    return out


try:  # optional hot path; bit-identical to the numpy fallback
    import numba as _nb

    @_nb.njit(cache=True, nogil=True)
    def _uniform_block_jit(seed, path_ids, group, stream, out):  # pragma: no cover
        m0 = np.uint64(0xD2E7470EE14C6C93)
        m1 = np.uint64(0xCA5A826395121157)
        w0 = np.uint64(0x9E3779B97F4A7C15)
        w1 = np.uint64(0xBB67AE8584CAA73B)
        mask = np.uint64(0xFFFFFFFF)
        sh = np.uint64(32)
        key_tag = np.uint64(0x5368727042726467)
        scale = 2.0 ** -52
        twelve = np.uint64(12)
        half = 0.5
        for i in range(path_ids.size):
            c0 = path_ids[i]
            c1 = group
            c2 = stream
            c3 = np.uint64(0)
            k0 = seed
            k1 = key_tag
            for r in range(10):
                if r > 0:
                    k0 = k0 + w0
                    k1 = k1 + w1
                lo0 = m0 * c0
                a_lo = m0 & mask
                a_hi = m0 >> sh
                b_lo = c0 & mask
                b_hi = c0 >> sh
                t = a_hi * b_lo + ((a_lo * b_lo) >> sh)
                hi0 = a_hi * b_hi + (t >> sh) + ((a_lo * b_hi + (t & mask)) >> sh)
                lo1 = m1 * c2
                a_lo = m1 & mask
                a_hi = m1 >> sh
                b_lo = c2 & mask
                b_hi = c2 >> sh
                t = a_hi * b_lo + ((a_lo * b_lo) >> sh)
                hi1 = a_hi * b_hi + (t >> sh) + ((a_lo * b_hi + (t & mask)) >> sh)
                n0 = hi1 ^ c1 ^ k0
                n2 = hi0 ^ c3 ^ k1
                c0, c1, c2, c3 = n0, lo1, n2, lo0
            out[i, 0] = (np.float64(c0 >> twelve) + half) * scale
            out[i, 1] = (np.float64(c1 >> twelve) + half) * scale
            out[i, 2] = (np.float64(c2 >> twelve) + half) * scale
            out[i, 3] = (np.float64(c3 >> twelve) + half) * scale

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def uniform_block(seed: int, path_ids: np.ndarray, group: int,
                  stream: int = 0) -> np.ndarray:
    """Four uniforms in (0, 1) per path for one counter group.

    Returns shape (len(path_ids), 4). path p, group g always yields
    the same numbers for a fixed (seed, stream); the compiled and the
    plain numpy implementations produce identical bits.
    """
    if _HAVE_NUMBA:
        p = np.ascontiguousarray(path_ids, dtype=np.uint64)
        out = np.empty((p.size, 4))
        _uniform_block_jit(np.uint64(seed), p, np.uint64(group),
                           np.uint64(stream), out)
        return out
    return _uniform_block_numpy(seed, path_ids, group, stream)


def normal_block(seed: int, path_ids: np.ndarray, group: int,
                 stream: int = 0) -> np.ndarray:
    """Four standard normals per path for one counter group."""
    return ndtri(uniform_block(seed, path_ids, group, stream))


class PathNormals:
    """Sequential per-step access to the normals of a block of paths.

    Serves shape (n_paths, width) slices for step = 0, 1, 2, ... by
    slicing consecutive groups of four words, so consecutive steps of
    width < 4 share counter blocks without waste. Steps must be
    requested in increasing order.
    """

    def __init__(self, seed: int, path_ids: np.ndarray, width: int,
                 stream: int = 0):
        if width < 1:
            raise ValueError("width must be at least 1")
        self.seed = int(seed)
        self.path_ids = np.asarray(path_ids, dtype=np.uint64)
        self.width = int(width)
        self.stream = int(stream)
        self._group = -1
        self._buf: np.ndarray | None = None

    def take(self, step: int) -> np.ndarray:
        start = step * self.width
        stop = start + self.width
        g_first = start // 4
        g_last = (stop - 1) // 4
        cols = []
        for g in range(g_first, g_last + 1):
            if g != self._group:
                self._buf = normal_block(self.seed, self.path_ids, g,
                                         self.stream)
                self._group = g
            lo = max(start - 4 * g, 0)
            hi = min(stop - 4 * g, 4)
            cols.append(self._buf[:, lo:hi])
        return cols[0] if len(cols) == 1 else np.concatenate(cols, axis=1)
