import logging
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from src.config.render_config import ImageFormat
from src.io.ply import SplatIOError
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)


class ImageFormatError(SplatIOError):
    """Unsupported or malformed image file."""
    pass


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    linear = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * np.power(linear, 1.0 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    encoded = np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0)
    return np.where(encoded <= 0.04045, encoded / 12.92, np.power((encoded + 0.055) / 1.055, 2.4))


def signed_to_rgb(values: np.ndarray, scale: Optional[float] = None) -> np.ndarray:
    """Map a signed (H, W) field to red (positive) and blue (negative) on black."""
    values = np.asarray(values, dtype=np.float64)
    if scale is None:
        scale = float(np.max(np.abs(values))) if values.size else 0.0
    norm = values / scale if scale > 0 else np.zeros_like(values)
    norm = np.clip(norm, -1.0, 1.0)
    rgb = np.zeros(values.shape + (3,))
    rgb[..., 0] = np.maximum(norm, 0.0)
    rgb[..., 2] = np.maximum(-norm, 0.0)
    return rgb


def _write_pfm(image: np.ndarray, path: Path) -> None:
    color = image.ndim == 3
    if color and image.shape[2] != 3:
        raise ImageFormatError(f"PFM needs 1 or 3 channels, got {image.shape[2]}")
    height, width = image.shape[:2]
    # 负的 scale 表示小端字节序；行从下到上存储
    with open(path, "wb") as f:
        f.write(b"PF\n" if color else b"Pf\n")
        f.write(f"{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(image[::-1], dtype="<f4").tobytes())


def _read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ImageFormatError(f"Not a PFM file: {path}", 0)
        dims = f.readline().split()
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(f.readline().strip())
        except (IndexError, ValueError) as e:
            raise ImageFormatError(f"Malformed PFM header in {path}", f.tell()) from e
        offset = f.tell()
        payload = f.read()
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * channels * 4
    if len(payload) < expected:
        raise ImageFormatError(f"PFM payload needs {expected} bytes, found {len(payload)}", offset + len(payload))
    data = np.frombuffer(payload[:expected], dtype=dtype).astype(np.float64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape)[::-1].copy()


@log_method_io
def write_image(image: np.ndarray, path: str | Path, image_format: ImageFormat = ImageFormat.PNG8) -> Path:
    """PNG is 8-bit sRGB of the clamped linear image; PFM stores the linear floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (2, 3):
        raise ImageFormatError(f"Expected an (H, W) or (H, W, 3) image, got shape {image.shape}")
    if image_format is ImageFormat.PFM:
        _write_pfm(image, path)
    else:
        encoded = np.round(srgb_encode(image) * 255.0).astype(np.uint8)
        Image.fromarray(encoded).save(path, format="PNG")
    return path


@log_method_io
def read_image(path: str | Path) -> np.ndarray:
    """Linear float image from PNG (sRGB decoded) or PFM."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return _read_pfm(path)
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as e:
        raise ImageFormatError(f"Cannot read image {path}: {e}") from e
    return srgb_decode(data)
