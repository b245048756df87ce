from src.raster.backward import (
    GradientBuffer,
    ReplayMismatchError,
    finite_difference_gradient,
    gradient_image,
    loss_grad,
    loss_value,
    path_replay_backward,
    sorted_backward,
)
from src.raster.forward import (
    RenderError,
    RenderResult,
    UnsupportedDepthModeError,
    pmf_exact,
    render_sorted_ab,
    render_stochastic,
    stochastic_pass,
)
from src.raster.projection import project_scene

__all__ = [
    "GradientBuffer",
    "ReplayMismatchError",
    "finite_difference_gradient",
    "gradient_image",
    "loss_grad",
    "loss_value",
    "path_replay_backward",
    "sorted_backward",
    "RenderError",
    "RenderResult",
    "UnsupportedDepthModeError",
    "pmf_exact",
    "render_sorted_ab",
    "render_stochastic",
    "stochastic_pass",
    "project_scene",
]
