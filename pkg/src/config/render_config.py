import enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from src.config.env_config import DEFAULT_NUM_THREADS


class DepthMode(enum.Enum):
    """Depth semantics used to resolve the nearest accepted splat."""
    MEAN = "mean"
    PLANE = "plane"
    FREE_FLIGHT = "freeflight"


class LossKind(enum.Enum):
    L1 = "l1"
    L2 = "l2"


class RendererKind(enum.Enum):
    STOCHASTIC = "stochastic"
    SORTED = "sorted"


class ImageFormat(enum.Enum):
    PNG8 = "png"
    PFM = "pfm"


class RenderConfig(BaseModel):
    """Everything besides scene and camera that determines a rendered image."""

    spp: int = Field(default=1, ge=1, description="Monte Carlo samples per pixel")
    depth_mode: DepthMode = Field(default=DepthMode.MEAN)
    pass_seed: int = Field(default=0, ge=0, lt=2**64)
    background: Tuple[float, float, float] = Field(default=(0.0, 0.0, 0.0))
    tile_size: int = Field(default=16, ge=1)
    early_stop_transmittance: float = Field(
        default=1e-4, ge=0.0, lt=1.0, description="Sorted reference renderer only"
    )
    # Scheduling only; never changes the output.
    threads: int = Field(default=DEFAULT_NUM_THREADS, ge=1)

    @field_validator("background", mode="before")
    @classmethod
    def _expand_background(cls, value):
        if isinstance(value, (int, float)):
            return (float(value),) * 3
        if isinstance(value, str):
            parts = [p for p in value.replace(",", " ").split() if p]
            if len(parts) == 1:
                parts = parts * 3
            return tuple(float(p) for p in parts)
        return value

    @field_validator("background")
    @classmethod
    def _check_background(cls, value):
        if any(not 0.0 <= c <= 1.0 for c in value):
            raise ValueError(f"background must lie in [0,1]^3, got {value}")
        return value

    def with_seed(self, pass_seed: int) -> "RenderConfig":
        return self.model_copy(update={"pass_seed": pass_seed % 2**64})


class OptimConfig(BaseModel):
    """Adam fine-tuning hyperparameters; learning rates follow the usual 3DGS groups."""

    iterations: int = Field(default=1000, ge=0)
    spp_train: int = Field(default=128, ge=1)
    lr_position: float = Field(default=5e-5, ge=0.0)
    lr_opacity: float = Field(default=0.05, ge=0.0)
    lr_sh: float = Field(default=2.5e-3, ge=0.0)
    lr_scale: float = Field(default=5e-3, ge=0.0)
    lr_rotation: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, gt=0.0, lt=1.0)
    beta2: float = Field(default=0.999, gt=0.0, lt=1.0)
    eps: float = Field(default=1e-15, gt=0.0)
    loss: LossKind = Field(default=LossKind.L1)
    checkpoint_every: int = Field(default=0, ge=0, description="0 disables checkpoints")
    log_every: int = Field(default=50, ge=1)

    def learning_rates(self) -> dict:
        return {
            "positions": self.lr_position,
            "log_scales": self.lr_scale,
            "rotations": self.lr_rotation,
            "opacity_logits": self.lr_opacity,
            "sh_coeffs": self.lr_sh,
        }


class TaaConfig(BaseModel):
    tau: Optional[float] = Field(
        default=None, ge=0.0, description="World-space occlusion threshold; None = 0.5% of scene diagonal"
    )
    spp: int = Field(default=1, ge=1)
    reference_spp: int = Field(default=1024, ge=1)
    static_frames: int = Field(default=64, ge=1)


class BenchConfig(BaseModel):
    spp_list: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16])
    scales: List[float] = Field(default_factory=lambda: [1.0, 0.5, 0.25])
    tile_sizes: List[int] = Field(default_factory=lambda: [8, 16, 32])
    renderers: List[RendererKind] = Field(
        default_factory=lambda: [RendererKind.STOCHASTIC, RendererKind.SORTED]
    )
    runs: int = Field(default=10, ge=1)
    warmup: int = Field(default=1, ge=0)

    @model_validator(mode="after")
    def _check_lists(self):
        if not self.spp_list or any(s < 1 for s in self.spp_list):
            raise ValueError("spp_list must contain positive sample counts")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")
        if not self.tile_sizes or any(t < 1 for t in self.tile_sizes):
            raise ValueError("tile_sizes must be positive")
        return self
