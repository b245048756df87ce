"""Deterministic synthetic scenes used by the check workflows, the bench and the tests."""

import math
from typing import Tuple

import numpy as np

from src.scene.camera import Camera
from src.scene.gaussian import Gaussian3D, Scene
from src.scene.sh import NUM_SH_COEFFS, num_coeffs


def default_camera(width: int = 32, height: int = 32, focal: float | None = None, **kwargs) -> Camera:
    """Camera at the origin looking down +z; focal defaults to the image width (≈53° field of view)."""
    focal = float(width) if focal is None else focal
    return Camera(
        width=width, height=height, fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
        rotation=np.eye(3), translation=np.zeros(3), **kwargs,
    )


def _random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q * np.sign(q[:, :1] + 1e-12)


def random_scene(
    n: int,
    seed: int = 0,
    depth_range: Tuple[float, float] = (3.0, 6.0),
    scale_range: Tuple[float, float] = (0.15, 0.5),
    opacity_range: Tuple[float, float] = (0.3, 0.9),
    sh_degree: int = 0,
    spread: float = 0.35,
) -> Scene:
    """
    `n` random Gaussians inside the view frustum of `default_camera`.
    Lateral positions are within ±spread·depth of the optical axis.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(*depth_range, size=n)
    xy = rng.uniform(-spread, spread, size=(n, 2)) * z[:, None]
    log_scales = np.log(rng.uniform(*scale_range, size=(n, 3)))
    opacity = rng.uniform(*opacity_range, size=n)
    sh = np.zeros((n, NUM_SH_COEFFS, 3))
    sh[:, 0, :] = (rng.uniform(0.1, 0.9, size=(n, 3)) - 0.5) / 0.28209479177387814
    k = num_coeffs(sh_degree)
    if k > 1:
        sh[:, 1:k, :] = rng.normal(scale=0.1, size=(n, k - 1, 3))
    return Scene(
        positions=np.column_stack([xy, z]),
        log_scales=log_scales,
        rotations=_random_quaternions(rng, n),
        opacity_logits=np.log(opacity / (1.0 - opacity)),
        sh_coeffs=sh,
        ids=np.arange(n, dtype=np.int64),
        sh_degree=sh_degree,
    )


def popping_scene() -> Tuple[Scene, Camera]:
    """
    Two Gaussians whose mean depths coincide while their surfaces do not.

    A wide flat red Gaussian is tilted so its surface follows z ≈ 5 + 0.8x;
    a small blue one sits at (−2, 0, 5), behind that surface. Sorting by mean
    depth flips their order under a tiny yaw; sorting by plane depth keeps the
    flat Gaussian in front.
    """
    angle = -math.atan(0.8)
    tilt = (math.cos(angle / 2.0), 0.0, math.sin(angle / 2.0), 0.0)
    flat = Gaussian3D.create((0.0, 0.0, 5.0), scale=(3.0, 3.0, 0.05), rotation=tilt, opacity=0.6, color=(0.9, 0.1, 0.1))
    blob = Gaussian3D.create((-2.0, 0.0, 5.0), scale=(0.3, 0.3, 0.3), opacity=0.9, color=(0.1, 0.1, 0.9))
    return Scene.from_gaussians([flat, blob], sh_degree=0), default_camera(64, 64, focal=64.0)


def smooth_scene(n: int = 4, seed: int = 0) -> Scene:
    """
    Broad Gaussians for gradient checks on a 16×16 `default_camera`: every
    splat's opacity cutoff lies outside the image, so small parameter
    offsets never switch a pixel on or off.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(4.0, 4.6, size=n)
    xy = rng.uniform(-0.5, 0.5, size=(n, 2))
    scales = rng.uniform(1.6, 2.0, size=(n, 3))
    opacity = rng.uniform(0.3, 0.8, size=n)
    gaussians = [
        Gaussian3D.create(
            (xy[i, 0], xy[i, 1], z[i]),
            scale=tuple(scales[i]),
            rotation=tuple(_random_quaternions(rng, 1)[0]),
            opacity=float(opacity[i]),
            color=tuple(rng.uniform(0.1, 0.9, size=3)),
        )
        for i in range(n)
    ]
    return Scene.from_gaussians(gaussians, sh_degree=0)


def single_gaussian_scene(opacity: float = 0.6, color=(0.8, 0.3, 0.2), depth: float = 4.0) -> Scene:
    return Scene.from_gaussians(
        [Gaussian3D.create((0.0, 0.0, depth), scale=(0.5, 0.5, 0.5), opacity=opacity, color=color)], sh_degree=0
    )


def planar_scene(grid: int = 9, depth: float = 4.0, half_extent: float = 2.2, seed: int = 0) -> Scene:
    """A fronto-parallel carpet of flat, nearly opaque Gaussians filling the default view."""
    rng = np.random.default_rng(seed)
    coords = np.linspace(-half_extent, half_extent, grid)
    spacing = coords[1] - coords[0] if grid > 1 else half_extent
    gaussians = [
        Gaussian3D.create(
            (x, y, depth),
            scale=(0.6 * spacing, 0.6 * spacing, 0.02),
            opacity=0.95,
            color=tuple(rng.uniform(0.15, 0.85, size=3)),
        )
        for y in coords
        for x in coords
    ]
    return Scene.from_gaussians(gaussians, sh_degree=0)


def coplanar_scene(grid: int = 6, depth: float = 4.0, half_extent: float = 2.2, seed: int = 0) -> Scene:
    """
    Translucent coloured Gaussians over a near-opaque backdrop, every mean on
    the plane z = depth. Mean-depth hits land on one surface whichever splat
    wins, so a static camera sees colour noise but no occlusion change.
    """
    rng = np.random.default_rng(seed)
    coords = np.linspace(-half_extent, half_extent, grid)
    spacing = coords[1] - coords[0] if grid > 1 else half_extent
    layer = [
        Gaussian3D.create(
            (x, y, depth),
            scale=(0.8 * spacing, 0.8 * spacing, 0.02),
            opacity=0.5,
            color=tuple(rng.uniform(0.1, 0.9, size=3)),
        )
        for y in coords
        for x in coords
    ]
    # several backdrops so a pixel practically never misses every splat
    backdrop = [
        Gaussian3D.create((0.0, 0.0, depth), scale=(20.0, 20.0, 0.02), opacity=0.995, color=tuple(rng.uniform(0.1, 0.9, size=3)))
        for _ in range(4)
    ]
    return Scene.from_gaussians(layer + backdrop, sh_degree=0)


def dense_scene(n: int = 64, seed: int = 0) -> Scene:
    """Large translucent Gaussians stacked in depth; every pixel is covered by all of them."""
    rng = np.random.default_rng(seed)
    gaussians = [
        Gaussian3D.create(
            (rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), z),
            scale=(2.0 * z, 2.0 * z, 0.1),
            opacity=0.3,
            color=tuple(rng.uniform(0.1, 0.9, size=3)),
        )
        for z in np.linspace(2.0, 8.0, n)
    ]
    return Scene.from_gaussians(gaussians, sh_degree=0)


def orbit_path(cam: Camera, frames: int, step: float, axis=(0.0, 1.0, 0.0)) -> list:
    """Cameras rotated by `step` radians per frame about a camera-frame axis through the camera centre."""
    return [cam.rotated(axis, i * step) if i else cam for i in range(frames)]
