"""
Fine-tuning of an existing scene against posed images with the stochastic
renderer's path-replay gradients. No densification or pruning.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from src.config.render_config import OptimConfig, RenderConfig
from src.io.cameras import load_cameras
from src.io.images import read_image
from src.optim.adam import SceneOptimizer
from src.raster.backward import path_replay_backward
from src.raster.rng import derive_seed
from src.scene.camera import Camera
from src.scene.gaussian import Scene
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)

CheckpointWriter = Callable[[Scene, int], None]


@dataclass(frozen=True)
class PosedImage:
    camera: Camera
    image: np.ndarray  # (H, W, 3) linear


@dataclass
class FinetuneHistory:
    losses: List[float] = field(default_factory=list)
    skipped_rows: List[int] = field(default_factory=list)

    def record(self, loss: float, skipped: int) -> None:
        self.losses.append(float(loss))
        self.skipped_rows.append(int(skipped))

    def smoothed(self, window: int = 50) -> np.ndarray:
        """Trailing moving average of the loss."""
        losses = np.asarray(self.losses, dtype=np.float64)
        if losses.size < window:
            return losses.copy()
        return np.convolve(losses, np.ones(window) / window, mode="valid")


@log_method_io
def load_dataset(cameras_path: str | Path) -> List[PosedImage]:
    """Posed images from a camera set file whose entries carry `image_path`."""
    dataset = []
    for cam in load_cameras(cameras_path):
        if cam.image_path is None:
            logger.warning(f"Camera {cam.id} has no image_path; skipped")
            continue
        image = read_image(cam.image_path)
        if image.shape[:2] != cam.shape:
            image_size = f"{image.shape[1]}x{image.shape[0]}"
            raise ValueError(f"Image {cam.image_path} is {image_size}, camera {cam.id} is {cam.width}x{cam.height}")
        dataset.append(PosedImage(camera=cam, image=image))
    return dataset


def finetune(
    scene: Scene,
    dataset: Sequence[PosedImage],
    cfg: OptimConfig,
    render_cfg: RenderConfig,
    checkpoint: Optional[CheckpointWriter] = None,
    history: Optional[FinetuneHistory] = None,
    show_progress: bool = False,
) -> Scene:
    """
    Round-robin over the views: path-replay gradients at `cfg.spp_train`
    samples per pixel, then one Adam step. The pass seed of iteration i is
    derived from `render_cfg.pass_seed` and i.
    """
    if not dataset:
        raise ValueError("finetune needs at least one posed image")
    if cfg.iterations == 0:
        return scene

    optimizer = SceneOptimizer.for_scene(scene, cfg)
    train_cfg = render_cfg.model_copy(update={"spp": cfg.spp_train})
    current = scene
    for iteration in tqdm(range(cfg.iterations), desc="finetune", disable=not show_progress):
        view = dataset[iteration % len(dataset)]
        step_cfg = train_cfg.with_seed(derive_seed(render_cfg.pass_seed, iteration))
        grads = path_replay_backward(current, view.camera, step_cfg, view.image, loss=cfg.loss)
        report = optimizer.step(grads.by_param())
        current = optimizer.apply_to(scene)

        if history is not None:
            history.record(grads.loss, report.total_skipped)
        if (iteration + 1) % cfg.log_every == 0 or iteration == 0:
            logger.info(f"Iteration {iteration + 1}/{cfg.iterations}: loss {grads.loss:.6f}")
        if checkpoint is not None and cfg.checkpoint_every and (iteration + 1) % cfg.checkpoint_every == 0:
            checkpoint(current, iteration + 1)
    return current
