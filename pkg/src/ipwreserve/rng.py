"""Counter-based random numbers (Philox4x64-10), vectorized over counters.

Every draw is a pure function of ``(key, stream, index)``, so a claim's
random numbers do not depend on how many claims precede it or on the order
in which claims are generated.  The block function is bit-compatible with
:class:`numpy.random.Philox`, which the test suite uses as a reference.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_ROUNDS = 10


def _mulhilo(a: np.uint64, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # 64x64 -> 128 bit product from 32-bit limbs; uint64 wraps silently
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    lo = a * b
    return hi, lo


def philox4x64(counter: np.ndarray, key: tuple[int, int]) -> np.ndarray:
    """Apply the Philox4x64-10 bijection to each row of ``counter``.

    Parameters
    ----------
    counter : array of uint64, shape (n, 4)
    key : pair of 64-bit integers

    Returns
    -------
    array of uint64, shape (n, 4)
    """
    c = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = (c[:, k].copy() for k in range(4))
    k0 = np.uint64(key[0] & 0xFFFFFFFFFFFFFFFF)
    k1 = np.uint64(key[1] & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for r in range(_ROUNDS):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=1)


class CounterRNG:
    """Uniform draws addressed by ``(stream, index)`` under a fixed seed.

    Counter layout per 4-word block: ``[index // 4, stream, 0, 0]``; the
    draw is word ``index % 4`` of that block.  Streams are arbitrary
    non-negative integers (the simulator uses ``claim_number * 16 + purpose``).
    """

    def __init__(self, seed: int):
        seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.seed = seed
        self._key = (seed, 0x5EED_C1A1_A5E5_0001)

    def raw(self, stream, index) -> np.ndarray:
        stream, index = np.broadcast_arrays(
            np.asarray(stream, dtype=np.uint64), np.asarray(index, dtype=np.uint64)
        )
        shape = stream.shape
        stream = stream.ravel()
        index = index.ravel()
        ctr = np.zeros((stream.size, 4), dtype=np.uint64)
        ctr[:, 0] = index >> np.uint64(2)
        ctr[:, 1] = stream
        block = philox4x64(ctr, self._key)
        word = (index & np.uint64(3)).astype(np.intp)
        return block[np.arange(stream.size), word].reshape(shape)

    def uniform(self, stream, index) -> np.ndarray:
        """Doubles in the open interval (0, 1)."""
        bits = self.raw(stream, index) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
