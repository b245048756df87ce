from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation


class InvalidCameraError(ValueError):
    """Camera intrinsics or pose violate the pinhole model's requirements."""
    pass


ORTHONORMAL_TOLERANCE = 1e-4


@dataclass(frozen=True)
class Camera:
    """
    Pinhole camera. Camera frame: x right, y down, z forward.

    `rotation`/`translation` map world points into the camera frame,
    p_cam = R·p_world + t. Pixel (i, j) has its centre at (i + 0.5, j + 0.5).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    near: float = 0.01
    far: float = 100.0
    id: int = 0
    image_path: Optional[Path] = None

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

        if self.width < 1 or self.height < 1:
            raise InvalidCameraError(f"Image size must be positive, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidCameraError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not 0 < self.near < self.far:
            raise InvalidCameraError(f"Clip range must satisfy 0 < near < far, got {self.near}, {self.far}")
        if not is_rotation(rotation):
            raise InvalidCameraError("world_to_camera rotation must be orthonormal with determinant +1")

    @property
    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """World points (..., 3) to pixel coordinates (..., 2) and camera-z (...)."""
        p = self.world_to_camera(points)
        z = p[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.fx * p[..., 0] / z + self.cx, self.fy * p[..., 1] / z + self.cy], axis=-1)
        return uv, z

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """(H, W) grids of pixel-centre coordinates."""
        xs = np.arange(self.width, dtype=np.float64) + 0.5
        ys = np.arange(self.height, dtype=np.float64) + 0.5
        return np.meshgrid(xs, ys)

    def camera_rays(self, px, py) -> np.ndarray:
        """Camera-frame directions with unit z for pixel coordinates (px, py)."""
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        return np.stack([(px - self.cx) / self.fx, (py - self.cy) / self.fy, np.ones_like(px)], axis=-1)

    def pixel_rays(self, px, py) -> np.ndarray:
        """World-space unit directions through pixel coordinates (px, py)."""
        d = self.camera_rays(px, py) @ self.rotation
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def rotated(self, axis: Sequence[float], angle: float) -> "Camera":
        """Rotate the camera about its own centre; `axis` is given in the camera frame."""
        axis = np.asarray(axis, dtype=np.float64)
        delta = Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()
        center = self.camera_center
        rotation = delta.T @ self.rotation
        return replace(self, rotation=rotation, translation=-rotation @ center)

    def translated(self, offset: Sequence[float]) -> "Camera":
        """Move the camera centre by a world-space offset."""
        center = self.camera_center + np.asarray(offset, dtype=np.float64)
        return replace(self, translation=-self.rotation @ center)

    def resized(self, width: int, height: int) -> "Camera":
        sx = width / self.width
        sy = height / self.height
        return replace(
            self, width=width, height=height,
            fx=self.fx * sx, fy=self.fy * sy, cx=self.cx * sx, cy=self.cy * sy,
        )

    @classmethod
    def look_at(
        cls,
        eye: Sequence[float],
        target: Sequence[float],
        width: int,
        height: int,
        focal: float,
        up: Sequence[float] = (0.0, -1.0, 0.0),
        **kwargs,
    ) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise InvalidCameraError("look_at up vector is parallel to the viewing direction")
        right /= norm
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        return cls(
            width=width, height=height, fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
            rotation=rotation, translation=-rotation @ eye, **kwargs,
        )


def is_rotation(matrix: np.ndarray, tol: float = ORTHONORMAL_TOLERANCE) -> bool:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
        return False
    return bool(np.allclose(matrix @ matrix.T, np.eye(3), atol=tol) and abs(np.linalg.det(matrix) - 1.0) < tol)
