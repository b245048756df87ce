import math

import numpy as np
from pydantic import BaseModel, Field
from scipy.ndimage import gaussian_filter

PSNR_CAP_DB = 100.0
_MSE_FLOOR = 1e-10

# SSIM constants for a dynamic range of 1.0
_SSIM_SIGMA = 1.5
_SSIM_TRUNCATE = 3.5  # 11×11 window
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


class ImageSizeMismatchError(ValueError):
    """Two images that must be compared or combined have different shapes."""
    pass


class MetricReport(BaseModel):
    mse: float = Field(ge=0.0)
    psnr: float
    ssim: float = Field(ge=-1.0, le=1.0)

    def to_dict(self) -> dict:
        return self.model_dump()


def _prepare(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ImageSizeMismatchError(f"Image shapes differ: {a.shape} vs {b.shape}")
    return np.clip(a, 0.0, 1.0), np.clip(b, 0.0, 1.0)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _prepare(a, b)
    return float(np.mean(np.square(a - b)))


def psnr_from_mse(value: float) -> float:
    if value < _MSE_FLOOR:
        return PSNR_CAP_DB
    return min(-10.0 * math.log10(value), PSNR_CAP_DB)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    return psnr_from_mse(mse(a, b))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over channels with a Gaussian window (σ = 1.5, 11×11)."""
    a, b = _prepare(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    sigma = (_SSIM_SIGMA, _SSIM_SIGMA, 0.0)

    def blur(x):
        return gaussian_filter(x, sigma=sigma, truncate=_SSIM_TRUNCATE, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    )

    # Drop the border where the window leaves the image.
    pad = int(_SSIM_TRUNCATE * _SSIM_SIGMA + 0.5)
    if ssim_map.shape[0] > 2 * pad and ssim_map.shape[1] > 2 * pad:
        ssim_map = ssim_map[pad:-pad, pad:-pad]
    return float(np.clip(np.mean(ssim_map), -1.0, 1.0))


def evaluate(a: np.ndarray, b: np.ndarray) -> MetricReport:
    value = mse(a, b)
    return MetricReport(mse=value, psnr=psnr_from_mse(value), ssim=ssim(a, b))


def abs_diff_heatmap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel absolute difference, maximised over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ImageSizeMismatchError(f"Image shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    return diff.max(axis=-1) if diff.ndim == 3 else diff
