"""Image-quality metrics: PSNR and single-scale SSIM.

Both operate on float images in [0, 1].  SSIM follows the common
convention: luminance grayscale, 11x11 Gaussian window with std 1.5,
stabilizers C1 = 0.01^2 and C2 = 0.03^2.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

PSNR_CAP_DB = 99.0
_LUMA = np.array([0.299, 0.587, 0.114])


class MetricError(ValueError):
    """Mismatched shapes or images too small for the SSIM window."""


def psnr(a, b):
    """Peak signal-to-noise ratio in dB, capped at 99 for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"psnr: image shapes differ ({a.shape} vs {b.shape})")
    mse = np.mean((a - b) ** 2)
    if mse <= 0.0:
        return PSNR_CAP_DB
    return float(min(-10.0 * np.log10(mse), PSNR_CAP_DB))


def _to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ _LUMA
    return img


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean local structural similarity over a Gaussian-windowed grayscale pair."""
    ga, gb = _to_gray(a), _to_gray(b)
    if ga.shape != gb.shape:
        raise MetricError(f"ssim: image shapes differ ({ga.shape} vs {gb.shape})")
    if min(ga.shape) < window:
        raise MetricError(
            f"ssim: images of shape {ga.shape} are smaller than the {window}x{window} window"
        )
    c1, c2 = k1 * k1, k2 * k2
    trunc = ((window - 1) // 2) / sigma

    def blur(x):
        return ndimage.gaussian_filter(x, sigma=sigma, truncate=trunc, mode="reflect")

    mu_a, mu_b = blur(ga), blur(gb)
    var_a = blur(ga * ga) - mu_a * mu_a
    var_b = blur(gb * gb) - mu_b * mu_b
    cov = blur(ga * gb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
