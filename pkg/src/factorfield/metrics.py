"""Image quality metrics: PSNR and luma SSIM."""

from __future__ import annotations

import numpy as np

PSNR_CAP = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03
_LUMA = np.array([0.299, 0.587, 0.114])


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) over all pixels/channels in [0,1]; capped at 99 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def _gaussian_kernel(n: int, sigma: float) -> np.ndarray:
    x = np.arange(n) - (n - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _window_moments(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 'valid' convolution with the 1D kernel along both axes."""
    n = kernel.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, n, axis=0)
    img = np.tensordot(win, kernel, axes=([2], [0]))
    win = np.lib.stride_tricks.sliding_window_view(img, n, axis=1)
    return np.tensordot(win, kernel, axes=([2], [0]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM on luma, 11x11 Gaussian window (sigma 1.5), range 1."""
    a, b = _check_pair(a, b)
    if a.ndim == 3:
        a = a @ _LUMA
        b = b @ _LUMA
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW}")
    kern = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = _K1**2
    c2 = _K2**2
    mu_a = _window_moments(a, kern)
    mu_b = _window_moments(b, kern)
    var_a = _window_moments(a * a, kern) - mu_a**2
    var_b = _window_moments(b * b, kern) - mu_b**2
    cov = _window_moments(a * b, kern) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
