"""
Gradient verification: analytic sorted gradients against finite differences,
averaged path-replay gradients against the analytic ones, a closed-form
single-Gaussian case, the correlated-seed bias and gradient images.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.config.render_config import DepthMode, LossKind, RenderConfig
from src.raster.backward import (
    GradientBuffer,
    finite_difference_gradient,
    gradient_image,
    path_replay_backward,
    sorted_backward,
)
from src.raster.forward import prepare_frame, render_sorted_ab
from src.raster.projection import splat_alpha
from src.raster.rng import derive_seed
from src.checks.scenes import default_camera, single_gaussian_scene, smooth_scene
from src.scene.camera import Camera
from src.scene.gaussian import Scene
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)

# (parameter, index within the row) checked per Gaussian
FD_ENTRIES: Tuple[Tuple[str, tuple], ...] = (
    ("opacity_logits", ()),
    ("sh_coeffs", (0, 0)),
    ("positions", (0,)),
)
STOCHASTIC_TOLERANCES = {"opacity_logits": 0.02, "sh_dc": 0.02, "positions": 0.05}
STANDARD_ERRORS = 4.0


class GradcheckOptions(BaseModel):
    size: int = Field(default=16, ge=1)
    n_gaussians: int = Field(default=4, ge=1)
    scene_seed: int = 0
    pass_seed: int = Field(default=0, ge=0)
    fd_step: float = Field(default=1e-3, gt=0.0)
    fd_tolerance: float = Field(default=1e-2, gt=0.0)
    stochastic_runs: int = Field(default=16, ge=1)
    stochastic_spp: int = Field(default=512, ge=1)
    tolerance_scale: float = Field(default=1.0, gt=0.0, description="Multiplies the stochastic tolerances")
    single_runs: int = Field(default=200, ge=2)
    single_spp: int = Field(default=2, ge=1)
    image_spp: int = Field(default=256, ge=1)
    min_image_ncc: float = Field(default=0.9, ge=-1.0, le=1.0)
    threads: int = Field(default=1, ge=1)


class GradcheckEntry(BaseModel):
    suite: str
    parameter: str
    estimate: float
    reference: float
    error: float
    tolerance: float
    passed: bool


class GradcheckReport(BaseModel):
    entries: List[GradcheckEntry] = Field(default_factory=list)
    image_ncc: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> List[GradcheckEntry]:
        return [e for e in self.entries if not e.passed]


def relative_error(estimate: float, reference: float, floor: float = 1e-12) -> float:
    return abs(estimate - reference) / max(abs(reference), floor)


def normalized_cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel() - np.mean(a)
    b = np.asarray(b, dtype=np.float64).ravel() - np.mean(b)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


def _check_cfg(spp: int, seed: int, threads: int) -> RenderConfig:
    return RenderConfig(spp=spp, depth_mode=DepthMode.MEAN, pass_seed=seed, early_stop_transmittance=0.0,
                        threads=threads)


def gradcheck_setup(options: GradcheckOptions) -> Tuple[Scene, Camera, np.ndarray]:
    """Smooth scene, camera and an L2 target rendered from a shifted copy of the scene."""
    scene = smooth_scene(options.n_gaussians, options.scene_seed)
    cam = default_camera(options.size, options.size)
    shifted = scene.with_params(
        positions=scene.positions + np.array([0.15, -0.1, 0.0]),
        opacity_logits=scene.opacity_logits + 0.3,
        sh_coeffs=scene.sh_coeffs * 0.8,
    )
    target = render_sorted_ab(shifted, cam, _check_cfg(1, 0, options.threads))
    return scene, cam, target


def finite_difference_suite(
    scene: Scene, cam: Camera, cfg: RenderConfig, target: np.ndarray, step: float, tolerance: float
) -> List[GradcheckEntry]:
    analytic = sorted_backward(scene, cam, cfg, target, loss=LossKind.L2)
    grads = analytic.by_param()
    entries = []
    for row in range(len(scene)):
        for name, index in FD_ENTRIES:
            fd = finite_difference_gradient(scene, cam, cfg, target, LossKind.L2, name, row, index, step)
            value = float(grads[name][(row, *index)])
            error = relative_error(value, fd, floor=1e-6)
            entries.append(GradcheckEntry(
                suite="finite_difference", parameter=f"{name}[{row}{''.join(f',{i}' for i in index)}]",
                estimate=value, reference=fd, error=error, tolerance=tolerance, passed=error <= tolerance,
            ))
    return entries


def _group_vectors(grads: GradientBuffer) -> Dict[str, np.ndarray]:
    return {
        "opacity_logits": grads.d_opacity_logit.ravel(),
        "sh_dc": grads.d_sh[:, 0, :].ravel(),
        "positions": grads.d_position.ravel(),
    }


def averaged_path_replay(
    scene: Scene, cam: Camera, cfg: RenderConfig, target: np.ndarray, runs: int,
    loss: LossKind = LossKind.L2, decorrelate: bool = True,
) -> List[GradientBuffer]:
    ctx = prepare_frame(scene, cam, cfg.tile_size)
    return [
        path_replay_backward(scene, cam, cfg.with_seed(derive_seed(cfg.pass_seed, r)), target, loss, decorrelate, ctx)
        for r in range(runs)
    ]


def stochastic_suite(
    scene: Scene, cam: Camera, cfg: RenderConfig, target: np.ndarray, runs: int, tolerance_scale: float = 1.0
) -> List[GradcheckEntry]:
    """Mean of `runs` decorrelated path-replay gradients against the analytic sorted gradient, per group."""
    reference = _group_vectors(sorted_backward(scene, cam, cfg, target, loss=LossKind.L2))
    samples = averaged_path_replay(scene, cam, cfg, target, runs)
    entries = []
    for group, ref in reference.items():
        mean = np.mean([_group_vectors(g)[group] for g in samples], axis=0)
        norm = float(np.linalg.norm(ref))
        error = float(np.linalg.norm(mean - ref)) / max(norm, 1e-12)
        tolerance = STOCHASTIC_TOLERANCES[group] * tolerance_scale
        entries.append(GradcheckEntry(
            suite="stochastic", parameter=group, estimate=float(np.linalg.norm(mean)), reference=norm,
            error=error, tolerance=tolerance, passed=error <= tolerance,
        ))
    return entries


def single_gaussian_expectation(
    scene: Scene, cam: Camera, cfg: RenderConfig, target: np.ndarray, correlated: bool = False
) -> float:
    """
    Expected ∂L/∂(opacity logit) of the path-replay estimator for one Gaussian
    over a one-pixel image with the L2 loss. The correlated variant adds the
    covariance between ∂L/∂C and ∂C/∂α within one pass of cfg.spp samples.
    """
    ctx = prepare_frame(scene, cam, cfg.tile_size)
    splats = ctx.splats
    alpha = float(splat_alpha(splats, np.array([0]), np.array([0.5]), np.array([0.5]))[0, 0])
    c = splats.view_color[0]
    bg = np.asarray(cfg.background, dtype=np.float64)
    opacity = float(splats.opacity[0])
    n_entries = target.size

    color = alpha * c + (1.0 - alpha) * bg
    d_alpha = np.sum(2.0 * (color - target.reshape(3)) / n_entries * (c - bg))
    if correlated:
        covariance = (c - bg) * ((1.0 - alpha) * c + alpha * bg)
        d_alpha += np.sum(2.0 / n_entries * covariance) / cfg.spp
    return float(d_alpha * alpha * (1.0 - opacity))


def _mean_and_error(values: List[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def single_gaussian_suite(runs: int, spp: int, seed: int = 0) -> List[GradcheckEntry]:
    """Closed-form expectation of the decorrelated and the correlated estimator, each within 4 standard errors."""
    scene = single_gaussian_scene(opacity=0.6, color=(0.8, 0.3, 0.2))
    cam = default_camera(1, 1, focal=1.0)
    cfg = RenderConfig(spp=spp, pass_seed=seed, background=(0.1, 0.2, 0.6), threads=1)
    target = np.full((1, 1, 3), 0.3)

    entries = []
    for correlated in (False, True):
        grads = averaged_path_replay(scene, cam, cfg, target, runs, decorrelate=not correlated)
        mean, stderr = _mean_and_error([float(g.d_opacity_logit[0]) for g in grads])
        expected = single_gaussian_expectation(scene, cam, cfg, target, correlated)
        error = abs(mean - expected)
        tolerance = STANDARD_ERRORS * stderr + 1e-12
        entries.append(GradcheckEntry(
            suite="single_gaussian", parameter="correlated" if correlated else "decorrelated",
            estimate=mean, reference=expected, error=error, tolerance=tolerance, passed=error <= tolerance,
        ))
    return entries


def gradient_images(scene: Scene, cam: Camera, cfg: RenderConfig, axis: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """(stochastic, sorted) maps of ∂C/∂position[axis]."""
    return (
        gradient_image(scene, cam, cfg, axis=axis, estimator="stochastic"),
        gradient_image(scene, cam, cfg, axis=axis, estimator="sorted"),
    )


@log_method_io
def run_gradcheck(options: GradcheckOptions) -> Tuple[GradcheckReport, Dict[str, np.ndarray]]:
    scene, cam, target = gradcheck_setup(options)
    report = GradcheckReport()

    fd_cfg = _check_cfg(1, options.pass_seed, options.threads)
    report.entries += finite_difference_suite(scene, cam, fd_cfg, target, options.fd_step, options.fd_tolerance)

    stochastic_cfg = _check_cfg(options.stochastic_spp, options.pass_seed, options.threads)
    report.entries += stochastic_suite(
        scene, cam, stochastic_cfg, target, options.stochastic_runs, options.tolerance_scale
    )
    report.entries += single_gaussian_suite(options.single_runs, options.single_spp, options.pass_seed)

    image_cfg = _check_cfg(options.image_spp, options.pass_seed, options.threads)
    stochastic_image, sorted_image = gradient_images(scene, cam, image_cfg)
    report.image_ncc = normalized_cross_correlation(stochastic_image, sorted_image)
    report.entries.append(GradcheckEntry(
        suite="gradient_image", parameter="ncc", estimate=report.image_ncc, reference=1.0,
        error=1.0 - report.image_ncc, tolerance=1.0 - options.min_image_ncc,
        passed=report.image_ncc >= options.min_image_ncc,
    ))

    for entry in report.failures():
        logger.warning(f"Gradient check failed: {entry.suite} {entry.parameter} error {entry.error:.3g} > {entry.tolerance:.3g}")
    logger.info(f"Gradient check: {len(report.entries) - len(report.failures())}/{len(report.entries)} passed")
    return report, {"gradient_stochastic": stochastic_image, "gradient_sorted": sorted_image}
