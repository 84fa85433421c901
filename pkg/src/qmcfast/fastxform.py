"""Orthonormal fast transforms that diagonalize structured Gram matrices.

All transforms act on the last axis, which must have length ``2^m``; leading
axes are treated as a batch.

``fftbr``  : y -> F (P y) / sqrt(n), the DFT of the bit-reversed input.
``ifftbr`` : its inverse.
``fwht``   : the Walsh-Hadamard transform with 1/sqrt(2) per butterfly stage.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import fft as sfft

__all__ = ["fwht", "fftbr", "ifftbr", "bit_reversal_permutation", "log2_exact"]


def log2_exact(n: int) -> int:
    """Return ``m`` with ``n == 2**m``; raise ``ValueError`` otherwise."""
    n = int(n)
    if n < 1 or n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    return n.bit_length() - 1


@lru_cache(maxsize=64)
def _bitrev(m: int) -> np.ndarray:
    n = 1 << m
    i = np.arange(n, dtype=np.int64)
    r = np.zeros(n, dtype=np.int64)
    for k in range(m):
        r |= ((i >> k) & 1) << (m - 1 - k)
    r.setflags(write=False)
    return r


def bit_reversal_permutation(n: int) -> np.ndarray:
    """Index array ``R`` with ``R[i]`` the ``m``-bit reversal of ``i``."""
    return _bitrev(log2_exact(n))


def fftbr(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    n = y.shape[-1]
    r = bit_reversal_permutation(n)
    return sfft.fft(y[..., r], axis=-1, norm="ortho", overwrite_x=True)


def ifftbr(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    n = y.shape[-1]
    r = bit_reversal_permutation(n)
    out = np.empty(y.shape, dtype=np.complex128)
    out[..., r] = sfft.ifft(y, axis=-1, norm="ortho")
    return out


@lru_cache(maxsize=8)
def _hadamard(k: int) -> np.ndarray:
    H = np.ones((1, 1))
    for _ in range(k):
        H = np.block([[H, H], [H, -H]])
    H.setflags(write=False)
    return H


# butterfly stages fused per pass; 4 stages (a 16x16 Hadamard matmul) cut memory traffic 4x
_FUSED = 4
# low stages run block by block so each block stays in cache
_BLOCK_BITS = 13


def _stages(z: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Butterfly stages ``start .. stop-1`` along the last axis of a 2-d array."""
    n = z.shape[-1]
    h, done = 1 << start, start
    while done < stop:
        k = min(_FUSED, stop - done)
        b = 1 << k
        v = z.reshape(z.shape[0], n // (b * h), b, h)
        # stages h .. h*b-1 act on the axis of length b
        z = (v[..., 0] @ _hadamard(k) if h == 1 else np.matmul(_hadamard(k), v)).reshape(z.shape)
        h *= b
        done += k
    return z


def fwht(y: np.ndarray) -> np.ndarray:
    z = np.array(y, dtype=np.float64, copy=True)
    n = z.shape[-1]
    m = log2_exact(n)
    batch = z.shape[:-1]
    z = z.reshape(-1, n)
    if m > _BLOCK_BITS:
        blocks = z.reshape(-1, 1 << _BLOCK_BITS)
        for i in range(blocks.shape[0]):
            blocks[i] = _stages(blocks[i : i + 1], 0, _BLOCK_BITS)[0]
        z = _stages(z, _BLOCK_BITS, m)
    else:
        z = _stages(z, 0, m)
    return (z * 2.0 ** (-m / 2)).reshape(batch + (n,))
