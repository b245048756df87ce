"""
EWA projection of 3D Gaussians to screen-space splats.

All geometry is written once in torch (float64) so the backward pass can
differentiate the same code that the renderers run under `no_grad`.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from src.raster.binning import obb_overlaps_rect
from src.raster.freeflight import calibrate_sigma_t
from src.scene.camera import Camera
from src.scene.gaussian import Gaussian3D, Scene, covariance_from, inverse_covariance_from
from src.scene.sh import eval_sh

logger = logging.getLogger(__name__)

EPSILON_O = 1.0 / 255.0
ALPHA_MAX = 0.99999
LOW_PASS_DILATION = 0.3
MAX_CONDITION_NUMBER = 1e8
PLANE_PARALLEL_TOLERANCE = 1e-8


def cutoff_radius(opacity) -> np.ndarray:
    """t_O = sqrt(2 ln(α/ε_O)), the Mahalanobis radius where the response drops to ε_O."""
    return np.sqrt(2.0 * np.log(np.asarray(opacity, dtype=np.float64) / EPSILON_O))


def project_tensors(
    positions: torch.Tensor,
    log_scales: torch.Tensor,
    rotations: torch.Tensor,
    opacity_logits: torch.Tensor,
    sh_coeffs: torch.Tensor,
    sh_degree: int,
    cam: Camera,
) -> Dict[str, torch.Tensor]:
    """Differentiable per-Gaussian screen-space quantities (no culling)."""
    dtype = positions.dtype
    w = torch.as_tensor(cam.rotation, dtype=dtype)
    center = torch.as_tensor(cam.camera_center, dtype=dtype)
    p = positions @ w.T + torch.as_tensor(cam.translation, dtype=dtype)
    x, y, z = p.unbind(-1)

    mean2d = torch.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], dim=-1)

    zeros = torch.zeros_like(z)
    jac = torch.stack(
        [
            torch.stack([cam.fx / z, zeros, -cam.fx * x / z**2], dim=-1),
            torch.stack([zeros, cam.fy / z, -cam.fy * y / z**2], dim=-1),
        ],
        dim=-2,
    )
    t = jac @ w
    cov3d = covariance_from(log_scales, rotations)
    cov2d = t @ cov3d @ t.transpose(-1, -2) + LOW_PASS_DILATION * torch.eye(2, dtype=dtype)
    a, b, c = cov2d[..., 0, 0], cov2d[..., 0, 1], cov2d[..., 1, 1]
    det = a * c - b * b
    inv_cov2d = torch.stack([torch.stack([c, -b], -1), torch.stack([-b, a], -1)], -2) / det[..., None, None]

    to_gaussian = positions - center
    view_dir = to_gaussian / torch.linalg.norm(to_gaussian, dim=-1, keepdim=True)
    color = eval_sh(sh_coeffs, view_dir, sh_degree)

    # Max-density plane nᵀ(x − μ) = 0 with n = Σ⁻¹(μ − o), in camera coordinates.
    inv_cov3d = inverse_covariance_from(log_scales, rotations)
    normal = (inv_cov3d @ to_gaussian[..., None])[..., 0] @ w.T
    numer = (normal * p).sum(-1)
    parallel = numer.abs() < PLANE_PARALLEL_TOLERANCE * torch.linalg.norm(normal, dim=-1) * torch.linalg.norm(p, dim=-1)
    safe = torch.where(parallel, torch.ones_like(numer), numer)
    gx = torch.where(parallel, zeros, -(z**2) * normal[..., 0] / (cam.fx * safe))
    gy = torch.where(parallel, zeros, -(z**2) * normal[..., 1] / (cam.fy * safe))

    return {
        "mean2d": mean2d,
        "cov2d": cov2d,
        "inv_cov2d": inv_cov2d,
        "color": color,
        "depth": z,
        "plane": torch.stack([z, gx, gy], dim=-1),
        "opacity": torch.sigmoid(opacity_logits),
        "inv_cov3d": inv_cov3d,
    }


def scene_tensors(scene: Scene, requires_grad: bool = False) -> Dict[str, torch.Tensor]:
    return {
        name: torch.tensor(value, dtype=torch.float64, requires_grad=requires_grad)
        for name, value in scene.params().items()
    }


@dataclass(frozen=True)
class ProjectedSplat:
    gaussian_id: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    inv_cov2d: np.ndarray
    view_color: np.ndarray
    mean_depth: float
    plane: np.ndarray  # (z0, gx, gy)
    bbox: np.ndarray  # (4, 2)
    eigenvalues: np.ndarray  # λ1 ≥ λ2
    eigenvectors: np.ndarray  # columns v1, v2
    opacity: float
    world_mean: np.ndarray
    inv_cov3d: np.ndarray
    sigma_t: float

    def depth_at(self, px: float, py: float) -> float:
        return float(plane_depth(self.plane, self.mean2d, px, py))


@dataclass(frozen=True)
class ProjectedSplats:
    """Structure-of-arrays view of the splats that survived culling."""

    index: np.ndarray  # row in the scene arrays
    ids: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    inv_cov2d: np.ndarray
    view_color: np.ndarray
    mean_depth: np.ndarray
    plane: np.ndarray
    bbox: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    opacity: np.ndarray
    world_mean: np.ndarray
    inv_cov3d: np.ndarray
    sigma_t: np.ndarray

    def __len__(self) -> int:
        return int(self.index.shape[0])

    def __getitem__(self, i: int) -> ProjectedSplat:
        return ProjectedSplat(
            gaussian_id=int(self.ids[i]),
            mean2d=self.mean2d[i],
            cov2d=self.cov2d[i],
            inv_cov2d=self.inv_cov2d[i],
            view_color=self.view_color[i],
            mean_depth=float(self.mean_depth[i]),
            plane=self.plane[i],
            bbox=self.bbox[i],
            eigenvalues=self.eigenvalues[i],
            eigenvectors=self.eigenvectors[i],
            opacity=float(self.opacity[i]),
            world_mean=self.world_mean[i],
            inv_cov3d=self.inv_cov3d[i],
            sigma_t=float(self.sigma_t[i]),
        )


def _eigen(cov2d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and matching eigenvector columns."""
    vals, vecs = np.linalg.eigh(cov2d)
    return vals[..., ::-1], vecs[..., ::-1]


def _obb_corners(mean2d, eigenvalues, eigenvectors, opacity) -> np.ndarray:
    t_o = cutoff_radius(opacity)
    half = t_o[..., None] * np.sqrt(eigenvalues)  # (…, 2)
    e1 = eigenvectors[..., :, 0] * half[..., 0:1]
    e2 = eigenvectors[..., :, 1] * half[..., 1:2]
    return np.stack([mean2d - e1 - e2, mean2d + e1 - e2, mean2d + e1 + e2, mean2d - e1 + e2], axis=-2)


def oriented_bbox(cov2d, mean2d, alpha: float) -> Optional[np.ndarray]:
    """
    Corners mean2d ± Δ1·v1 ± Δ2·v2 with Δi = t_O·sqrt(λi); None when α ≤ ε_O.
    """
    if alpha <= EPSILON_O:
        return None
    vals, vecs = _eigen(np.asarray(cov2d, dtype=np.float64))
    return _obb_corners(np.asarray(mean2d, dtype=np.float64), vals, vecs, alpha)


def classic_radius_bbox(cov2d, mean2d, alpha: float) -> Optional[np.ndarray]:
    """Axis-aligned square of half-width t_O·sqrt(λ1), for comparison with the oriented box."""
    if alpha <= EPSILON_O:
        return None
    vals, _ = _eigen(np.asarray(cov2d, dtype=np.float64))
    r = float(cutoff_radius(alpha)) * math.sqrt(vals[0])
    m = np.asarray(mean2d, dtype=np.float64)
    return np.array([m + [-r, -r], m + [r, -r], m + [r, r], m + [-r, r]])


def box_area(corners: np.ndarray) -> float:
    e1 = corners[1] - corners[0]
    e2 = corners[3] - corners[0]
    return float(abs(e1[0] * e2[1] - e1[1] * e2[0]))


def project_scene(scene: Scene, cam: Camera) -> ProjectedSplats:
    """Project every Gaussian and drop the culled ones."""
    with torch.no_grad():
        tensors = project_tensors(**scene_tensors(scene), sh_degree=scene.sh_degree, cam=cam)
        out = {k: v.numpy() for k, v in tensors.items()}

    n = len(scene)
    depth = out["depth"]
    opacity = out["opacity"]
    valid = (depth >= cam.near) & (depth <= cam.far) & (opacity > EPSILON_O)
    valid &= np.all(np.isfinite(out["cov2d"].reshape(n, 4)), axis=1) & np.all(np.isfinite(out["mean2d"]), axis=1)

    eigenvalues = np.zeros((n, 2))
    eigenvectors = np.tile(np.eye(2), (n, 1, 1))
    if np.any(valid):
        eigenvalues[valid], eigenvectors[valid] = _eigen(out["cov2d"][valid])
    with np.errstate(divide="ignore", invalid="ignore"):
        condition = eigenvalues[:, 0] / eigenvalues[:, 1]
    valid &= (eigenvalues[:, 1] > 0) & (condition <= MAX_CONDITION_NUMBER)

    bbox = np.zeros((n, 4, 2))
    if np.any(valid):
        bbox[valid] = _obb_corners(out["mean2d"][valid], eigenvalues[valid], eigenvectors[valid], opacity[valid])
        valid[valid] &= obb_overlaps_rect(bbox[valid], np.zeros(2), np.array([cam.width, cam.height], dtype=np.float64))

    keep = np.flatnonzero(valid)
    inv_cov3d = out["inv_cov3d"][keep]
    sigma_t = calibrate_sigma_t(
        cam.camera_center, scene.positions[keep], inv_cov3d, np.minimum(opacity[keep], ALPHA_MAX)
    ) if keep.size else np.zeros(0)

    logger.debug(f"Projected {n} Gaussians, {keep.size} survive culling")
    return ProjectedSplats(
        index=keep,
        ids=scene.ids[keep],
        mean2d=out["mean2d"][keep],
        cov2d=out["cov2d"][keep],
        inv_cov2d=out["inv_cov2d"][keep],
        view_color=out["color"][keep],
        mean_depth=depth[keep],
        plane=out["plane"][keep],
        bbox=bbox[keep],
        eigenvalues=eigenvalues[keep],
        eigenvectors=eigenvectors[keep],
        opacity=opacity[keep],
        world_mean=scene.positions[keep],
        inv_cov3d=inv_cov3d,
        sigma_t=sigma_t,
    )


def project_gaussian(g: Gaussian3D, cam: Camera, sh_degree: int = 3) -> Optional[ProjectedSplat]:
    """Project a single Gaussian; None when it is culled."""
    splats = project_scene(Scene.from_gaussians([g], sh_degree=sh_degree), cam)
    return splats[0] if len(splats) else None


def compute_plane_depth(g: Gaussian3D, cam: Camera) -> Tuple[float, float, float]:
    scene = Scene.from_gaussians([g])
    with torch.no_grad():
        plane = project_tensors(**scene_tensors(scene), sh_degree=scene.sh_degree, cam=cam)["plane"]
    z0, gx, gy = plane[0].tolist()
    return z0, gx, gy


def plane_depth(plane, mean2d, px, py):
    """depth(px, py) = z0 + gx·(px − mx) + gy·(py − my); broadcasts over leading axes."""
    return (
        plane[..., 0]
        + plane[..., 1] * (px - mean2d[..., 0])
        + plane[..., 2] * (py - mean2d[..., 1])
    )


def gaussian_alpha(mean2d, inv_cov2d, opacity, px, py):
    """
    Per-pixel opacity α = min(0.99999, o·exp(−½ΔᵀΣ₂⁻¹Δ)), zero below ε_O.

    Works on numpy arrays and torch tensors with broadcasting leading axes.
    """
    dx = px - mean2d[..., 0]
    dy = py - mean2d[..., 1]
    power = -0.5 * (inv_cov2d[..., 0, 0] * dx * dx + 2.0 * inv_cov2d[..., 0, 1] * dx * dy + inv_cov2d[..., 1, 1] * dy * dy)
    if isinstance(power, torch.Tensor):
        alpha = opacity * torch.exp(torch.clamp(power, max=0.0))
        return torch.where(alpha >= EPSILON_O, torch.clamp(alpha, max=ALPHA_MAX), torch.zeros_like(alpha))
    alpha = opacity * np.exp(np.minimum(power, 0.0))
    return np.where(alpha >= EPSILON_O, np.minimum(alpha, ALPHA_MAX), 0.0)


def splat_alpha(splats: ProjectedSplats, idx: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """(P, K) opacity matrix of splats `idx` at pixel coordinates (P,)."""
    return gaussian_alpha(
        splats.mean2d[idx][None],
        splats.inv_cov2d[idx][None],
        splats.opacity[idx][None],
        np.asarray(px, dtype=np.float64)[:, None],
        np.asarray(py, dtype=np.float64)[:, None],
    )
