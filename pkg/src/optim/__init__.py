from src.optim.adam import AdamStepReport, SceneOptimizer, adam_step
from src.optim.finetune import FinetuneHistory, PosedImage, finetune, load_dataset

__all__ = [
    "AdamStepReport",
    "SceneOptimizer",
    "adam_step",
    "FinetuneHistory",
    "PosedImage",
    "finetune",
    "load_dataset",
]
