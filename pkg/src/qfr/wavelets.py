"""Hard-threshold wavelet denoising of basis functions."""
from __future__ import annotations

import math
import warnings

import numpy as np
import pywt

WAVELET = "db4"
# Gaussian consistency constant for the median absolute deviation
MAD_SCALE = 0.6745


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def noise_scale(detail: np.ndarray) -> float:
    """Robust noise level from finest-scale detail coefficients."""
    detail = np.asarray(detail, dtype=float)
    if detail.size == 0:
        return 0.0
    return float(np.median(np.abs(detail - np.median(detail))) / MAD_SCALE)


def _denoise_dyadic(x: np.ndarray, wavelet: str):
    L = x.size
    level = pywt.dwt_max_level(L, pywt.Wavelet(wavelet).dec_len)
    coeffs = pywt.wavedec(x, wavelet, mode="periodization", level=level)
    sigma = noise_scale(coeffs[-1])
    thr = sigma * math.sqrt(2.0 * math.log(L))
    if thr > 0:
        coeffs = [coeffs[0]] + [pywt.threshold(c, thr, mode="hard") for c in coeffs[1:]]
    out = pywt.waverec(coeffs, wavelet, mode="periodization")
    return out[:L], sigma, thr


def wavelet_denoise(psi: np.ndarray, wavelet: str = WAVELET, return_info: bool = False):
    """Periodized orthonormal DWT, hard threshold sigma*sqrt(2 log L) on every detail level, inverse DWT.

    The noise level sigma is the MAD of the finest detail coefficients over
    0.6745.  Inputs whose length is not a power of two are linearly
    resampled to the nearest power of two, denoised, and resampled back.
    """
    psi = np.asarray(psi, dtype=float)
    L = psi.size
    if _is_power_of_two(L):
        out, sigma, thr = _denoise_dyadic(psi, wavelet)
    else:
        L2 = 1 << max(1, round(math.log2(max(L, 2))))
        warnings.warn(f"signal length {L} is not a power of two; resampling to {L2}", RuntimeWarning)
        t = np.linspace(0.0, 1.0, L)
        t2 = np.linspace(0.0, 1.0, L2)
        out2, sigma, thr = _denoise_dyadic(np.interp(t2, t, psi), wavelet)
        out = np.interp(t, t2, out2)
    if return_info:
        return out, {"sigma": sigma, "threshold": thr}
    return out
