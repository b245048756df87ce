import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.config.render_config import DepthMode, RenderConfig
from src.metrics.image_metrics import abs_diff_heatmap
from src.raster.forward import render_sorted_ab, render_stochastic
from src.checks.scenes import popping_scene
from src.scene.camera import Camera
from src.scene.gaussian import Scene
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)

YAW_AXIS = (0.0, 1.0, 0.0)


class PopcheckOptions(BaseModel):
    max_angle: float = Field(default=2e-3, gt=0.0, description="Yaw sweep is [−max_angle, max_angle]")
    step: float = Field(default=2e-4, gt=0.0)
    max_ratio: float = Field(default=0.1, gt=0.0, description="PLANE discontinuity must stay below this fraction of MEAN's")
    spp: Optional[int] = Field(default=None, ge=1, description="None renders the converged expectation")
    threads: int = Field(default=1, ge=1)


class ModeDiscontinuity(BaseModel):
    depth_mode: str
    max_jump: float
    worst_angle: float


class PopcheckReport(BaseModel):
    modes: List[ModeDiscontinuity]
    ratio: float
    max_ratio: float

    @property
    def passed(self) -> bool:
        return self.ratio <= self.max_ratio

    def jump(self, mode: DepthMode) -> float:
        return next(m.max_jump for m in self.modes if m.depth_mode == mode.value)


def sweep_angles(max_angle: float, step: float) -> np.ndarray:
    count = int(round(2.0 * max_angle / step))
    return np.linspace(-max_angle, max_angle, count + 1)


def render_expected(scene: Scene, cam: Camera, cfg: RenderConfig, spp: Optional[int] = None) -> np.ndarray:
    """Converged image: the sorted expectation, or a stochastic estimate when `spp` is given."""
    if spp is None:
        return render_sorted_ab(scene, cam, cfg.model_copy(update={"early_stop_transmittance": 0.0}))
    return render_stochastic(scene, cam, cfg.model_copy(update={"spp": spp}))


def frame_differences(
    scene: Scene, cam: Camera, cfg: RenderConfig, angles: Sequence[float], spp: Optional[int] = None
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Max per-pixel change between consecutive frames of a yaw sweep, and the heatmaps."""
    frames = [render_expected(scene, cam.rotated(YAW_AXIS, a) if a else cam, cfg, spp) for a in angles]
    heatmaps = [abs_diff_heatmap(b, a) for a, b in zip(frames[:-1], frames[1:])]
    return np.array([float(h.max()) for h in heatmaps]), heatmaps


@log_method_io
def run_popcheck(
    options: PopcheckOptions,
    scene: Optional[Scene] = None,
    cam: Optional[Camera] = None,
    cfg: Optional[RenderConfig] = None,
) -> Tuple[PopcheckReport, Dict[str, np.ndarray]]:
    """
    Sweep the camera yaw through the order flip of the popping scene in MEAN
    and PLANE modes and compare their largest frame-to-frame jump.
    """
    if scene is None or cam is None:
        scene, cam = popping_scene()
    cfg = cfg or RenderConfig(threads=options.threads)
    angles = sweep_angles(options.max_angle, options.step)

    modes = []
    heatmaps: Dict[str, np.ndarray] = {}
    for mode in (DepthMode.MEAN, DepthMode.PLANE):
        jumps, maps = frame_differences(scene, cam, cfg.model_copy(update={"depth_mode": mode}), angles, options.spp)
        worst = int(np.argmax(jumps)) if jumps.size else 0
        modes.append(ModeDiscontinuity(
            depth_mode=mode.value,
            max_jump=float(jumps[worst]) if jumps.size else 0.0,
            worst_angle=float(angles[worst + 1]) if jumps.size else 0.0,
        ))
        if maps:
            heatmaps[f"heatmap_{mode.value}"] = maps[worst]
        logger.info(f"Popcheck {mode.value}: max jump {modes[-1].max_jump:.4g} at yaw {modes[-1].worst_angle:.2e}")

    mean_jump, plane_jump = modes[0].max_jump, modes[1].max_jump
    ratio = plane_jump / mean_jump if mean_jump > 0 else (0.0 if plane_jump == 0 else float("inf"))
    return PopcheckReport(modes=modes, ratio=ratio, max_ratio=options.max_ratio), heatmaps
