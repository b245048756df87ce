import logging
from typing import List, Optional, Sequence

from pydantic import BaseModel

from src.config.render_config import RenderConfig, TaaConfig
from src.scene.camera import Camera
from src.scene.gaussian import Scene
from src.taa.accumulator import TaaSequence, run_taa_sequence
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)

# Accumulated MSE must be within this factor of raw MSE / frames on a static path
STATIC_RATIO_SLACK = 1.3
WARMUP_FRAMES = 5


class TaaReport(BaseModel):
    frames: int
    tau: float
    static: bool
    raw_mse: List[float]
    taa_mse: List[float]
    ratio: float

    @property
    def passed(self) -> bool:
        if self.static:
            return self.frames / STATIC_RATIO_SLACK <= self.ratio <= self.frames * STATIC_RATIO_SLACK
        tail = range(WARMUP_FRAMES, self.frames)
        return all(self.taa_mse[i] < self.raw_mse[i] for i in tail)


def is_static(cameras: Sequence[Camera]) -> bool:
    first = cameras[0]
    return all(
        (c.width, c.height, c.fx, c.fy, c.cx, c.cy) == (first.width, first.height, first.fx, first.fy, first.cx, first.cy)
        and (c.rotation == first.rotation).all()
        and (c.translation == first.translation).all()
        for c in cameras[1:]
    )


@log_method_io
def run_taa_check(
    scene: Scene,
    cameras: Sequence[Camera],
    cfg: RenderConfig,
    taa_cfg: TaaConfig,
) -> tuple[TaaReport, TaaSequence]:
    """
    Accumulate a camera path and judge it. τ defaults to a fraction of the
    scene diagonal on every path, so a static path only reaches the expected
    noise reduction where each pixel keeps hitting the same surface.
    """
    static = is_static(cameras)
    sequence = run_taa_sequence(scene, cameras, cfg, taa_cfg)
    report = TaaReport(
        frames=len(cameras),
        tau=sequence.tau,
        static=static,
        raw_mse=sequence.raw_mse,
        taa_mse=sequence.taa_mse,
        ratio=sequence.mse_ratio(),
    )
    logger.info(f"TAA check ({'static' if static else 'moving'} path): ratio {report.ratio:.2f}, passed {report.passed}")
    return report, sequence


def static_path(cam: Camera, frames: int) -> List[Camera]:
    return [cam] * frames


def path_or_static(cameras: Optional[Sequence[Camera]], cam: Camera, frames: int) -> List[Camera]:
    return list(cameras) if cameras else static_path(cam, frames)
