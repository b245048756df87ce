import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from src.config.render_config import ImageFormat, RenderConfig, RendererKind
from src.io.images import ImageFormatError, read_image, write_image
from src.metrics.image_metrics import evaluate
from src.raster.forward import render_sorted_ab, render_stochastic
from src.scene.camera import Camera
from src.scene.gaussian import Scene
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)

SORTED_REFERENCE = "sorted"


def image_name(cam: Camera, image_format: ImageFormat) -> str:
    return f"cam_{cam.id:04d}.{image_format.value}"


def render_view(scene: Scene, cam: Camera, cfg: RenderConfig, renderer: RendererKind) -> np.ndarray:
    if renderer is RendererKind.SORTED:
        return render_sorted_ab(scene, cam, cfg)
    return render_stochastic(scene, cam, cfg)


def load_reference(reference: str, scene: Scene, cam: Camera, cfg: RenderConfig) -> np.ndarray:
    """`reference` is either "sorted" (render the sorted reference here) or a directory of cam_XXXX images."""
    if reference == SORTED_REFERENCE:
        return render_sorted_ab(scene, cam, cfg)
    directory = Path(reference)
    for image_format in (ImageFormat.PFM, ImageFormat.PNG8):
        candidate = directory / image_name(cam, image_format)
        if candidate.exists():
            return read_image(candidate)
    raise ImageFormatError(f"No reference image for camera {cam.id} in {directory}")


@log_method_io
def render_views(
    scene: Scene,
    cameras: Sequence[Camera],
    cfg: RenderConfig,
    renderer: RendererKind,
    out_dir: Path,
    image_format: ImageFormat = ImageFormat.PFM,
    reference: Optional[str] = None,
) -> List[dict]:
    """Render and write one image per camera; returns one report record per camera."""
    records = []
    for cam in cameras:
        image = render_view(scene, cam, cfg, renderer)
        path = write_image(image, Path(out_dir) / image_name(cam, image_format), image_format)
        record = {
            "camera": cam.id,
            "image": path.name,
            "renderer": renderer.value,
            "depth_mode": cfg.depth_mode.value,
            "spp": cfg.spp if renderer is RendererKind.STOCHASTIC else None,
            "seed": cfg.pass_seed,
            "mse": None,
            "psnr": None,
            "ssim": None,
        }
        if reference is not None:
            record.update(evaluate(image, load_reference(reference, scene, cam, cfg)).to_dict())
        records.append(record)
        logger.info(f"Rendered camera {cam.id} to {path}")
    return records
