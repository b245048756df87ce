from src.scene.camera import Camera, InvalidCameraError
from src.scene.gaussian import (
    Gaussian3D,
    Scene,
    activate_opacity,
    activate_scale,
    covariance_from,
    normalize_quaternion,
    quaternion_to_rotation,
)
from src.scene.sh import eval_sh, rgb_to_sh_dc

__all__ = [
    "Camera",
    "InvalidCameraError",
    "Gaussian3D",
    "Scene",
    "activate_opacity",
    "activate_scale",
    "covariance_from",
    "normalize_quaternion",
    "quaternion_to_rotation",
    "eval_sh",
    "rgb_to_sh_dc",
]
