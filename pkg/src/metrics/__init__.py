from src.metrics.image_metrics import (
    ImageSizeMismatchError,
    MetricReport,
    abs_diff_heatmap,
    evaluate,
    mse,
    psnr,
    ssim,
)

__all__ = ["ImageSizeMismatchError", "MetricReport", "abs_diff_heatmap", "evaluate", "mse", "psnr", "ssim"]
