"""Daubechies-4 wavelet denoising with the universal soft threshold.

The transform is the periodized orthogonal DWT (analysis rows form an
orthonormal basis, so synthesis is the exact transpose).  Inputs whose
length is not a multiple of 2^levels are symmetric-padded on the right
before the transform and trimmed afterwards, preserving length.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# 8-tap Daubechies scaling coefficients (sum = sqrt(2)).
_DB4 = np.array([
    0.230377813308855230,
    0.714846570552541500,
    0.630880767929590400,
    -0.027983769416983850,
    -0.187034811718881140,
    0.030841381835986965,
    0.032883011666982945,
    -0.010597401784997278,
])

_DEC_LO = _DB4[::-1].copy()
_DEC_HI = np.array([(-1) ** n for n in range(len(_DB4))]) * _DB4
_FILTER_LEN = len(_DB4)


@lru_cache(maxsize=32)
def _window_indices(n: int) -> np.ndarray:
    return (np.arange(0, n, 2)[:, None] + np.arange(_FILTER_LEN)[None, :]) % n


def _analysis_step(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    windows = x[_window_indices(len(x))]
    return windows @ _DEC_LO, windows @ _DEC_HI


def _synthesis_step(approx: np.ndarray, detail: np.ndarray) -> np.ndarray:
    n = 2 * len(approx)
    idx = _window_indices(n)
    out = np.zeros(n)
    np.add.at(out, idx.ravel(),
              (approx[:, None] * _DEC_LO + detail[:, None] * _DEC_HI).ravel())
    return out


def dwt(x: np.ndarray, levels: int) -> list[np.ndarray]:
    """Multi-level periodized DWT. Returns [approx_L, detail_L, ..., detail_1].

    len(x) must be divisible by 2^levels and each level must keep at least
    as many samples as the filter length.
    """
    x = np.asarray(x, dtype=float)
    if len(x) % (1 << levels) != 0:
        raise ValueError(f"length {len(x)} not divisible by 2^{levels}")
    details = []
    approx = x
    for _ in range(levels):
        if len(approx) < _FILTER_LEN:
            raise ValueError("signal too short for the requested decomposition depth")
        approx, detail = _analysis_step(approx)
        details.append(detail)
    return [approx] + details[::-1]


def idwt(coeffs: list[np.ndarray]) -> np.ndarray:
    """Inverse of :func:`dwt`."""
    approx = coeffs[0]
    for detail in coeffs[1:]:
        approx = _synthesis_step(approx, detail)
    return approx


def soft_threshold(values: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def max_levels(n: int) -> int:
    """Deepest decomposition keeping every analysis step >= the filter length."""
    levels = 0
    while n >= _FILTER_LEN and n % 2 == 0:
        levels += 1
        n //= 2
    return max(levels, 1)


def denoise(x: np.ndarray, levels: int = 3) -> np.ndarray:
    """Soft-threshold denoising: sigma from the finest detail band via
    median(|d1|)/0.6745, threshold sigma*sqrt(2*ln N).

    Depth is capped so each level keeps at least one filter length of
    samples; short inputs therefore decompose fewer than `levels` times.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    block = 1 << levels
    if n < block:
        raise ValueError(f"need at least 2^{levels}={block} samples, got {n}")
    padded_len = ((n + block - 1) // block) * block
    if padded_len > n:
        xp = np.pad(x, (0, padded_len - n), mode="symmetric")
    else:
        xp = x
    levels = min(levels, max_levels(len(xp)))
    coeffs = dwt(xp, levels)
    d1 = coeffs[-1]
    sigma = float(np.median(np.abs(d1))) / 0.6745
    threshold = sigma * np.sqrt(2.0 * np.log(n))
    thresholded = [coeffs[0]] + [soft_threshold(d, threshold) for d in coeffs[1:]]
    return idwt(thresholded)[:n]
