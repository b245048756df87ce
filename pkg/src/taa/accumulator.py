"""
Temporal accumulation of stochastic frames.

Each pixel keeps a running mean of colour and world-space hit position plus a
sample count. A new frame forward-warps the stored positions into its view;
where the warped position and the new hit agree within τ the running mean
absorbs the new sample, otherwise the pixel restarts from the new frame.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.config.render_config import RenderConfig, TaaConfig
from src.metrics.image_metrics import ImageSizeMismatchError, mse
from src.raster.forward import render_stochastic, stochastic_pass
from src.raster.rng import decorrelated_seed, derive_seed
from src.scene.camera import Camera
from src.scene.gaussian import Scene

logger = logging.getLogger(__name__)

DEFAULT_TAU_FRACTION = 0.005


@dataclass(frozen=True)
class TaaState:
    accum_color: np.ndarray  # (H, W, 3) running mean
    accum_count: np.ndarray  # (H, W) int
    world_pos: np.ndarray  # (H, W, 3)
    tau: float

    @classmethod
    def initial(cls, height: int, width: int, tau: float) -> "TaaState":
        if tau < 0:
            raise ValueError(f"tau must be non-negative, got {tau}")
        return cls(
            accum_color=np.zeros((height, width, 3)),
            accum_count=np.zeros((height, width), dtype=np.int64),
            world_pos=np.zeros((height, width, 3)),
            tau=float(tau),
        )

    @property
    def shape(self):
        return self.accum_count.shape


@dataclass(frozen=True)
class Reprojection:
    color: np.ndarray
    positions: np.ndarray
    count: np.ndarray
    valid: np.ndarray  # (H, W) bool


def reproject(state: TaaState, cam: Camera) -> Reprojection:
    """
    Splat every accumulated pixel to the nearest pixel of `cam`. When several
    land on one pixel the one nearest the camera wins; pixels receiving
    nothing are invalid.
    """
    h, w = state.shape
    if (cam.height, cam.width) != (h, w):
        raise ImageSizeMismatchError(f"TAA state is {w}x{h}, camera is {cam.width}x{cam.height}")
    color = np.zeros_like(state.accum_color)
    positions = np.zeros_like(state.world_pos)
    count = np.zeros_like(state.accum_count)
    valid = np.zeros((h, w), dtype=bool)

    src_y, src_x = np.nonzero(state.accum_count > 0)
    if src_y.size == 0:
        return Reprojection(color, positions, count, valid)
    points = state.world_pos[src_y, src_x]
    uv, z = cam.project(points)
    with np.errstate(invalid="ignore"):
        tx = np.floor(uv[:, 0])
        ty = np.floor(uv[:, 1])
        keep = (z > cam.near) & np.isfinite(tx) & np.isfinite(ty) & (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    if not keep.any():
        return Reprojection(color, positions, count, valid)

    src_y, src_x, z = src_y[keep], src_x[keep], z[keep]
    target = ty[keep].astype(np.int64) * w + tx[keep].astype(np.int64)
    # 深度测试：每个目标像素保留最近的点
    order = np.lexsort((z, target))
    target = target[order]
    first = np.ones(target.size, dtype=bool)
    first[1:] = target[1:] != target[:-1]
    winners = order[first]
    dst_y, dst_x = np.divmod(target[first], w)

    color[dst_y, dst_x] = state.accum_color[src_y[winners], src_x[winners]]
    positions[dst_y, dst_x] = state.world_pos[src_y[winners], src_x[winners]]
    count[dst_y, dst_x] = state.accum_count[src_y[winners], src_x[winners]]
    valid[dst_y, dst_x] = True
    return Reprojection(color, positions, count, valid)


def taa_accumulate(state: TaaState, new_frame: np.ndarray, new_positions: np.ndarray, new_cam: Camera) -> TaaState:
    """Blend `new_frame` into the warped history; returns a new state."""
    h, w = state.shape
    if new_frame.shape != (h, w, 3) or new_positions.shape != (h, w, 3):
        raise ImageSizeMismatchError(
            f"TAA state is {w}x{h}, got frame {new_frame.shape} and positions {new_positions.shape}"
        )
    warped = reproject(state, new_cam)
    distance = np.linalg.norm(warped.positions - new_positions, axis=-1)
    match = warped.valid & (distance < state.tau)

    history = np.where(match, warped.count, 0)
    n = history[..., None].astype(np.float64)
    weight_old = n / (n + 1.0)
    weight_new = 1.0 / (n + 1.0)
    return TaaState(
        accum_color=weight_old * warped.color + weight_new * new_frame,
        accum_count=history + 1,
        world_pos=weight_old * warped.positions + weight_new * new_positions,
        tau=state.tau,
    )


def default_tau(scene: Scene) -> float:
    return DEFAULT_TAU_FRACTION * scene.bounding_diagonal()


@dataclass
class TaaSequence:
    tau: float
    raw_frames: List[np.ndarray] = field(default_factory=list)
    taa_frames: List[np.ndarray] = field(default_factory=list)
    raw_mse: List[float] = field(default_factory=list)
    taa_mse: List[float] = field(default_factory=list)

    def mse_ratio(self) -> float:
        """No-TAA over TAA MSE on the last frame."""
        if not self.taa_mse or self.taa_mse[-1] == 0.0:
            return float("inf")
        return self.raw_mse[-1] / self.taa_mse[-1]


def _camera_key(cam: Camera) -> tuple:
    return (cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy, cam.rotation.tobytes(), cam.translation.tobytes())


def run_taa_sequence(
    scene: Scene,
    cameras: Sequence[Camera],
    cfg: RenderConfig,
    taa_cfg: TaaConfig,
    keep_frames: bool = True,
) -> TaaSequence:
    """
    Render a camera path at `taa_cfg.spp` with and without accumulation and
    score both against a `taa_cfg.reference_spp` render of each view.
    """
    if not cameras:
        raise ValueError("Camera path is empty")
    tau = taa_cfg.tau if taa_cfg.tau is not None else default_tau(scene)
    frame_cfg = cfg.model_copy(update={"spp": taa_cfg.spp})
    reference_cfg = cfg.model_copy(update={"spp": taa_cfg.reference_spp})
    reference_seed = decorrelated_seed(cfg.pass_seed)
    references: Dict[tuple, np.ndarray] = {}

    sequence = TaaSequence(tau=tau)
    state: Optional[TaaState] = None
    for i, cam in enumerate(cameras):
        key = _camera_key(cam)
        if key not in references:
            references[key] = render_stochastic(
                scene, cam, reference_cfg.with_seed(derive_seed(reference_seed, len(references)))
            )
        reference = references[key]

        frame = stochastic_pass(scene, cam, frame_cfg.with_seed(derive_seed(cfg.pass_seed, i)))
        if state is None or state.shape != cam.shape:
            state = TaaState.initial(cam.height, cam.width, tau)
        state = taa_accumulate(state, frame.image, frame.hit_position, cam)

        sequence.raw_mse.append(mse(frame.image, reference))
        sequence.taa_mse.append(mse(state.accum_color, reference))
        if keep_frames:
            sequence.raw_frames.append(frame.image)
            sequence.taa_frames.append(state.accum_color)
        logger.debug(f"TAA frame {i}: raw MSE {sequence.raw_mse[-1]:.3e}, TAA MSE {sequence.taa_mse[-1]:.3e}")
    logger.info(f"TAA sequence of {len(cameras)} frames, tau {tau:.4g}, final MSE ratio {sequence.mse_ratio():.2f}")
    return sequence
