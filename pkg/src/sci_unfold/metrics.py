"""Image-quality metrics on frames normalised to ``[0, peak]``."""
from __future__ import annotations

import numpy as np
from scipy import signal

PSNR_CAP = 100.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``, capped at 100 dB once ``MSE < peak^2 * 1e-10``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < peak * peak * 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0):
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"ssim expects 2-D frames, got shape {a.shape}")
    if min(a.shape) < window:
        raise ValueError(f"frame {a.shape} smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def filt(img):
        return signal.correlate(img, w, mode="valid", method="direct")

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0, sigma: float = 1.5) -> float:
    """Mean structural similarity over all fully-contained Gaussian windows."""
    return float(np.mean(ssim_map(a, b, window, sigma, k1, k2, peak)))


def frame_scores(x_hat, x, peak: float = 1.0):
    """Per-frame PSNR and SSIM lists for two (B, H, W) blocks."""
    x_hat, x = _pair(x_hat, x)
    return ([psnr(p, q, peak) for p, q in zip(x_hat, x)],
            [ssim(p, q, peak=peak) for p, q in zip(x_hat, x)])
