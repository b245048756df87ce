"""
Real spherical harmonics up to degree 3, in the coefficient order used by
splat PLY files. Works on numpy arrays and on torch tensors so the backward
pass can differentiate colours through the view direction.
"""

import numpy as np
import torch

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3
NUM_SH_COEFFS = (MAX_SH_DEGREE + 1) ** 2


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis_color(sh_coeffs, view_dir, degree: int):
    """
    Evaluate Σ Y_lm(view_dir)·coeff_lm without the +0.5 offset.

    Args:
        sh_coeffs: (..., 16, 3) coefficients; only the first (degree+1)² are read
        view_dir: (..., 3) unit directions
        degree: 0..3
    """
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_SH_DEGREE}], got {degree}")

    result = SH_C0 * sh_coeffs[..., 0, :]
    if degree < 1:
        return result

    x = view_dir[..., 0:1]
    y = view_dir[..., 1:2]
    z = view_dir[..., 2:3]
    result = (
        result
        - SH_C1 * y * sh_coeffs[..., 1, :]
        + SH_C1 * z * sh_coeffs[..., 2, :]
        - SH_C1 * x * sh_coeffs[..., 3, :]
    )
    if degree < 2:
        return result

    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    result = (
        result
        + SH_C2[0] * xy * sh_coeffs[..., 4, :]
        + SH_C2[1] * yz * sh_coeffs[..., 5, :]
        + SH_C2[2] * (2.0 * zz - xx - yy) * sh_coeffs[..., 6, :]
        + SH_C2[3] * xz * sh_coeffs[..., 7, :]
        + SH_C2[4] * (xx - yy) * sh_coeffs[..., 8, :]
    )
    if degree < 3:
        return result

    return (
        result
        + SH_C3[0] * y * (3.0 * xx - yy) * sh_coeffs[..., 9, :]
        + SH_C3[1] * xy * z * sh_coeffs[..., 10, :]
        + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh_coeffs[..., 11, :]
        + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh_coeffs[..., 12, :]
        + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh_coeffs[..., 13, :]
        + SH_C3[5] * z * (xx - yy) * sh_coeffs[..., 14, :]
        + SH_C3[6] * x * (xx - 3.0 * yy) * sh_coeffs[..., 15, :]
    )


def eval_sh(sh_coeffs, view_dir, degree: int):
    """RGB = basis sum + 0.5, clamped below at 0. No upper clamp."""
    rgb = sh_basis_color(sh_coeffs, view_dir, degree) + 0.5
    if isinstance(rgb, torch.Tensor):
        return torch.clamp(rgb, min=0.0)
    return np.maximum(rgb, 0.0)


def rgb_to_sh_dc(rgb):
    """DC coefficient that evaluates to `rgb` at any direction (before clamping)."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0
