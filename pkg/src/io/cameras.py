import json
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.io.ply import SplatIOError
from src.scene.camera import Camera, InvalidCameraError
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)


class CameraFileError(SplatIOError):
    """A camera set file could not be parsed; `line` is 1-based."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"{message} (line {line})" if line is not None else message)


class CameraRecord(BaseModel):
    """One entry of a camera set JSON array."""

    id: int = 0
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    rotation: List[float]
    translation: List[float]
    image_path: Optional[str] = None
    near: float = Field(default=0.01, gt=0)
    far: float = Field(default=100.0, gt=0)

    @field_validator("rotation")
    @classmethod
    def _nine_floats(cls, value):
        if len(value) != 9:
            raise ValueError(f"rotation needs 9 row-major floats, got {len(value)}")
        return value

    @field_validator("translation")
    @classmethod
    def _three_floats(cls, value):
        if len(value) != 3:
            raise ValueError(f"translation needs 3 floats, got {len(value)}")
        return value

    def to_camera(self, base_dir: Path) -> Camera:
        image_path = None
        if self.image_path:
            image_path = Path(self.image_path)
            if not image_path.is_absolute():
                image_path = base_dir / image_path
        return Camera(
            width=self.width, height=self.height,
            fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
            rotation=np.asarray(self.rotation, dtype=np.float64).reshape(3, 3),
            translation=np.asarray(self.translation, dtype=np.float64),
            near=self.near, far=self.far, id=self.id, image_path=image_path,
        )

    @classmethod
    def from_camera(cls, cam: Camera) -> "CameraRecord":
        return cls(
            id=cam.id, width=cam.width, height=cam.height,
            fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
            rotation=[float(v) for v in cam.rotation.reshape(-1)],
            translation=[float(v) for v in cam.translation],
            image_path=str(cam.image_path) if cam.image_path else None,
            near=cam.near, far=cam.far,
        )


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _split_records(text: str) -> List[tuple]:
    """Decode the top-level array element by element, keeping each element's start line."""
    decoder = json.JSONDecoder()
    pos = len(text) - len(text.lstrip())
    if pos >= len(text) or text[pos] != "[":
        raise CameraFileError("Camera file must contain a JSON array", _line_of(text, pos))
    pos += 1
    records = []

    def skip_space(at: int) -> int:
        while at < len(text) and text[at] in " \t\r\n":
            at += 1
        if at >= len(text):
            raise CameraFileError("Unterminated JSON array", _line_of(text, at))
        return at

    pos = skip_space(pos)
    if text[pos] == "]":
        return records
    while True:
        try:
            value, end = decoder.raw_decode(text, pos)
        except json.JSONDecodeError as e:
            raise CameraFileError(f"Invalid JSON: {e.msg}", e.lineno) from e
        records.append((value, _line_of(text, pos)))
        pos = skip_space(end)
        if text[pos] == "]":
            return records
        if text[pos] != ",":
            raise CameraFileError("Expected ',' or ']' after an array element", _line_of(text, pos))
        pos = skip_space(pos + 1)


@log_method_io
def load_cameras(path: str | Path) -> List[Camera]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    cameras = []
    for value, line in _split_records(text):
        try:
            record = CameraRecord.model_validate(value)
            cameras.append(record.to_camera(path.parent))
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(p) for p in first["loc"])
            raise CameraFileError(f"Invalid camera record: {where}: {first['msg']}", line) from e
        except InvalidCameraError as e:
            raise CameraFileError(f"Invalid camera: {e}", line) from e
    logger.info(f"Loaded {len(cameras)} cameras from {path}")
    return cameras


@log_method_io
def save_cameras(cameras: List[Camera], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [CameraRecord.from_camera(cam).model_dump() for cam in cameras]
    path.write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
