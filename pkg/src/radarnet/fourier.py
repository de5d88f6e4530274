"""Radix-2 FFT used for the per-ramp spectral analysis.

The transform is the plain unnormalized DFT, X[k] = sum_n x[n] e^(-2*pi*i*k*n/N),
implemented as an iterative decimation-in-time butterfly with vectorized stages
so whole stacks of ramp windows transform in one call.
"""

from __future__ import annotations

import numpy as np

_REV_CACHE: dict[int, np.ndarray] = {}
_TWIDDLE_CACHE: dict[int, np.ndarray] = {}


def _bit_reversal_indices(n: int) -> np.ndarray:
    perm = _REV_CACHE.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n, dtype=np.int64)
        perm = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            perm |= ((idx >> b) & 1) << (bits - 1 - b)
        _REV_CACHE[n] = perm
    return perm


def _twiddles(m: int) -> np.ndarray:
    w = _TWIDDLE_CACHE.get(m)
    if w is None:
        w = np.exp(-2j * np.pi * np.arange(m // 2) / m)
        _TWIDDLE_CACHE[m] = w
    return w


def fft(x: np.ndarray) -> np.ndarray:
    """Complex DFT along the last axis; the length must be a power of two."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"FFT length must be a power of two, got {n}")
    y = x[..., _bit_reversal_indices(n)].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        w = _twiddles(m)
        v = y.reshape(y.shape[:-1] + (n // m, m))
        t = v[..., half:] * w
        e = v[..., :half].copy()
        v[..., :half] = e + t
        v[..., half:] = e - t
        m *= 2
    return y
