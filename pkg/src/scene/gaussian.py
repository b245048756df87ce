"""Gaussian primitives, parameter activations and covariance construction."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch
from scipy.special import expit

from src.scene.sh import MAX_SH_DEGREE, NUM_SH_COEFFS, rgb_to_sh_dc

logger = logging.getLogger(__name__)

PARAM_NAMES = ("positions", "log_scales", "rotations", "opacity_logits", "sh_coeffs")
# Largest log ratio between the longest and shortest axis of one Gaussian
MAX_LOG_ANISOTROPY = 12.0


def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def activate_opacity(opacity_logit):
    if _is_torch(opacity_logit):
        return torch.sigmoid(opacity_logit)
    return expit(opacity_logit)


def activate_scale(log_scale):
    if _is_torch(log_scale):
        return torch.exp(log_scale)
    return np.exp(log_scale)


def normalize_quaternion(q):
    if _is_torch(q):
        return q / torch.linalg.norm(q, dim=-1, keepdim=True)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternion_to_rotation(q):
    """Quaternion (w, x, y, z), assumed normalized, to a (..., 3, 3) rotation matrix."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    if _is_torch(q):
        return torch.stack([torch.stack(r, dim=-1) for r in rows], dim=-2)
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _transpose(m):
    return m.transpose(-1, -2) if _is_torch(m) else np.swapaxes(m, -1, -2)


def _limit_anisotropy(log_scale):
    """Raise each axis to within MAX_LOG_ANISOTROPY of the largest one."""
    if _is_torch(log_scale):
        floor = log_scale.max(dim=-1, keepdim=True).values - MAX_LOG_ANISOTROPY
        return torch.maximum(log_scale, floor)
    floor = np.max(log_scale, axis=-1, keepdims=True) - MAX_LOG_ANISOTROPY
    return np.maximum(log_scale, floor)


def covariance_from(log_scale, rotation):
    """
    Σ = R·S·Sᵀ·Rᵀ with S = diag(exp(log_scale)); rotation is normalized here.
    Axis ratios are capped at exp(MAX_LOG_ANISOTROPY) so Σ stays numerically
    positive definite.
    """
    rot = quaternion_to_rotation(normalize_quaternion(rotation))
    m = rot * activate_scale(_limit_anisotropy(log_scale))[..., None, :]
    return m @ _transpose(m)


def inverse_covariance_from(log_scale, rotation):
    """Σ⁻¹ built from the factors, which stays accurate for very thin Gaussians."""
    rot = quaternion_to_rotation(normalize_quaternion(rotation))
    m = rot * activate_scale(-_limit_anisotropy(log_scale))[..., None, :]
    return m @ _transpose(m)


@dataclass(frozen=True)
class Gaussian3D:
    """One primitive in its stored (pre-activation) parameterisation."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((NUM_SH_COEFFS, 3)))

    @property
    def opacity(self) -> float:
        return float(activate_opacity(self.opacity_logit))

    @property
    def scale(self) -> np.ndarray:
        return activate_scale(np.asarray(self.log_scale, dtype=np.float64))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from(
            np.asarray(self.log_scale, dtype=np.float64), np.asarray(self.rotation, dtype=np.float64)
        )

    @classmethod
    def create(
        cls,
        position: Sequence[float],
        scale: Sequence[float] = (1.0, 1.0, 1.0),
        rotation: Sequence[float] = (1.0, 0.0, 0.0, 0.0),
        opacity: float = 0.5,
        color: Sequence[float] = (0.5, 0.5, 0.5),
    ) -> "Gaussian3D":
        """Build a view-independent Gaussian from activated quantities."""
        if not 0.0 < opacity < 1.0:
            raise ValueError(f"opacity must lie in (0, 1), got {opacity}")
        sh = np.zeros((NUM_SH_COEFFS, 3))
        sh[0] = rgb_to_sh_dc(color)
        return cls(
            position=np.asarray(position, dtype=np.float64),
            log_scale=np.log(np.asarray(scale, dtype=np.float64)),
            rotation=np.asarray(rotation, dtype=np.float64),
            opacity_logit=float(np.log(opacity / (1.0 - opacity))),
            sh_coeffs=sh,
        )


@dataclass(frozen=True)
class Scene:
    """
    A collection of Gaussians stored as stacked parameter arrays.

    `ids` is a stable identifier per primitive. Random decisions are keyed on
    it, so reordering the rows never changes a render.
    """

    positions: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) w, x, y, z
    opacity_logits: np.ndarray  # (N,)
    sh_coeffs: np.ndarray  # (N, 16, 3)
    ids: np.ndarray  # (N,) int64
    sh_degree: int = MAX_SH_DEGREE
    # Optional per-row normals carried from PLY files; never used for rendering
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.positions.shape[0]
        if self.normals is not None and self.normals.shape != (n, 3):
            raise ValueError(f"Scene.normals has shape {self.normals.shape}, expected {(n, 3)}")
        expected = {
            "positions": (n, 3),
            "log_scales": (n, 3),
            "rotations": (n, 4),
            "opacity_logits": (n,),
            "sh_coeffs": (n, NUM_SH_COEFFS, 3),
            "ids": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"Scene.{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not 0 <= self.sh_degree <= MAX_SH_DEGREE:
            raise ValueError(f"sh_degree must be in [0, {MAX_SH_DEGREE}], got {self.sh_degree}")
        if len(np.unique(self.ids)) != n:
            raise ValueError("Scene ids must be unique")

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @classmethod
    def empty(cls, sh_degree: int = MAX_SH_DEGREE) -> "Scene":
        return cls(
            positions=np.zeros((0, 3)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros((0,)),
            sh_coeffs=np.zeros((0, NUM_SH_COEFFS, 3)),
            ids=np.zeros((0,), dtype=np.int64),
            sh_degree=sh_degree,
        )

    @classmethod
    def from_gaussians(
        cls,
        gaussians: Iterable[Gaussian3D],
        sh_degree: int = MAX_SH_DEGREE,
        ids: Optional[Sequence[int]] = None,
    ) -> "Scene":
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(sh_degree)
        return cls(
            positions=np.stack([np.asarray(g.position, dtype=np.float64) for g in gaussians]),
            log_scales=np.stack([np.asarray(g.log_scale, dtype=np.float64) for g in gaussians]),
            rotations=np.stack([np.asarray(g.rotation, dtype=np.float64) for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians], dtype=np.float64),
            sh_coeffs=np.stack([np.asarray(g.sh_coeffs, dtype=np.float64) for g in gaussians]),
            ids=np.arange(len(gaussians), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64),
            sh_degree=sh_degree,
        )

    @property
    def gaussians(self) -> List[Gaussian3D]:
        return [
            Gaussian3D(
                position=self.positions[i],
                log_scale=self.log_scales[i],
                rotation=self.rotations[i],
                opacity_logit=float(self.opacity_logits[i]),
                sh_coeffs=self.sh_coeffs[i],
            )
            for i in range(len(self))
        ]

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, **updates: np.ndarray) -> "Scene":
        """Return a new scene with some parameter arrays replaced; ids are kept."""
        unknown = set(updates) - set(PARAM_NAMES)
        if unknown:
            raise KeyError(f"Unknown scene parameters: {sorted(unknown)}")
        values = {**self.params(), **{k: np.asarray(v, dtype=np.float64) for k, v in updates.items()}}
        return Scene(**values, ids=self.ids, sh_degree=self.sh_degree, normals=self.normals)

    def with_offset(self, name: str, row: int, index: tuple, delta: float) -> "Scene":
        """Copy of the scene with one parameter entry shifted by `delta`."""
        array = getattr(self, name).copy()
        array[(row, *index)] += delta
        return self.with_params(**{name: array})

    def permute(self, order: Sequence[int]) -> "Scene":
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(len(self))):
            raise ValueError("permute expects a permutation of the scene rows")
        values = {name: getattr(self, name)[order] for name in PARAM_NAMES}
        normals = None if self.normals is None else self.normals[order]
        return Scene(**values, ids=self.ids[order], sh_degree=self.sh_degree, normals=normals)

    def concat(self, other: "Scene") -> "Scene":
        """Append another scene; its ids are shifted past this scene's largest id."""
        offset = int(self.ids.max()) + 1 if len(self) else 0
        values = {name: np.concatenate([getattr(self, name), getattr(other, name)]) for name in PARAM_NAMES}
        ids = np.concatenate([self.ids, other.ids + offset])
        normals = None
        if self.normals is not None or other.normals is not None:
            normals = np.concatenate([s.normals if s.normals is not None else np.zeros((len(s), 3)) for s in (self, other)])
        return Scene(**values, ids=ids, sh_degree=max(self.sh_degree, other.sh_degree), normals=normals)

    def opacities(self) -> np.ndarray:
        return activate_opacity(self.opacity_logits)

    def scales(self) -> np.ndarray:
        return activate_scale(self.log_scales)

    def covariances(self) -> np.ndarray:
        return covariance_from(self.log_scales, self.rotations)

    def bounding_diagonal(self) -> float:
        """Diagonal of the axis-aligned box holding every mean padded by 3σ."""
        if len(self) == 0:
            return 0.0
        pad = 3.0 * self.scales().max(axis=1, keepdims=True)
        extent = (self.positions + pad).max(axis=0) - (self.positions - pad).min(axis=0)
        return float(np.linalg.norm(extent))
