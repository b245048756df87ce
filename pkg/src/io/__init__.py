from src.io.cameras import CameraFileError, load_cameras, save_cameras
from src.io.images import ImageFormatError, read_image, signed_to_rgb, srgb_decode, srgb_encode, write_image
from src.io.ply import (
    MissingPropertyError,
    PlyFormatError,
    SplatIOError,
    TruncatedPayloadError,
    UnsupportedEncodingError,
    load_ply,
    save_ply,
)

__all__ = [
    "CameraFileError",
    "load_cameras",
    "save_cameras",
    "ImageFormatError",
    "read_image",
    "signed_to_rgb",
    "srgb_decode",
    "srgb_encode",
    "write_image",
    "MissingPropertyError",
    "PlyFormatError",
    "SplatIOError",
    "TruncatedPayloadError",
    "UnsupportedEncodingError",
    "load_ply",
    "save_ply",
]
