import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
import torch

from src.config.render_config import OptimConfig
from src.scene.gaussian import Scene

logger = logging.getLogger(__name__)


@dataclass
class AdamStepReport:
    """Rows left untouched because their gradient was not finite, per group."""

    skipped_rows: Dict[str, int] = field(default_factory=dict)

    @property
    def total_skipped(self) -> int:
        return sum(self.skipped_rows.values())


class SceneOptimizer:
    """
    torch Adam over named parameter groups, one per Gaussian attribute.

    Parameters and moment state of a row whose gradient contains a
    non-finite value are restored after the step, so that row is skipped.
    """

    def __init__(self, params: Mapping[str, np.ndarray], config: OptimConfig):
        lrs = config.learning_rates()
        unknown = set(params) - set(lrs)
        if unknown:
            raise KeyError(f"No learning rate for parameter groups: {sorted(unknown)}")
        self.tensors: Dict[str, torch.Tensor] = {
            name: torch.tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
            for name, value in params.items()
        }
        groups = [{"name": name, "params": [tensor], "lr": lrs[name]} for name, tensor in self.tensors.items()]
        self.optimizer = torch.optim.Adam(groups, lr=0.0, betas=(config.beta1, config.beta2), eps=config.eps)
        self.steps = 0

    @classmethod
    def for_scene(cls, scene: Scene, config: OptimConfig) -> "SceneOptimizer":
        return cls(scene.params(), config)

    def numpy_params(self) -> Dict[str, np.ndarray]:
        return {name: t.detach().numpy().copy() for name, t in self.tensors.items()}

    def apply_to(self, scene: Scene) -> Scene:
        return scene.with_params(**self.numpy_params())

    def step(self, grads: Mapping[str, np.ndarray]) -> AdamStepReport:
        report = AdamStepReport()
        restore = []
        for name, tensor in self.tensors.items():
            grad = np.asarray(grads.get(name, np.zeros(tuple(tensor.shape))), dtype=np.float64)
            if grad.shape != tuple(tensor.shape):
                raise ValueError(f"Gradient for {name} has shape {grad.shape}, expected {tuple(tensor.shape)}")
            finite = np.isfinite(grad)
            bad_rows = ~finite.reshape(grad.shape[0], int(np.prod(grad.shape[1:]))).all(axis=1) if grad.ndim else ~finite.reshape(1)
            report.skipped_rows[name] = int(bad_rows.sum())
            if bad_rows.any():
                grad = np.where(finite, grad, 0.0)
                rows = torch.as_tensor(np.flatnonzero(bad_rows))
                state = self.optimizer.state.get(tensor, {})
                saved = {key: state[key][rows].clone() for key in ("exp_avg", "exp_avg_sq") if key in state}
                restore.append((tensor, rows, tensor.detach()[rows].clone(), saved))
            tensor.grad = torch.as_tensor(grad)

        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        self.steps += 1

        with torch.no_grad():
            for tensor, rows, values, saved in restore:
                tensor[rows] = values
                state = self.optimizer.state[tensor]
                for key in ("exp_avg", "exp_avg_sq"):
                    state[key][rows] = saved.get(key, torch.zeros_like(values))
        if report.total_skipped:
            logger.warning(f"Adam step {self.steps}: skipped rows with non-finite gradients {report.skipped_rows}")
        return report


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: Optional[SceneOptimizer],
    config: OptimConfig,
) -> Tuple[Dict[str, np.ndarray], SceneOptimizer, AdamStepReport]:
    """One bias-corrected Adam update; `state` is created on the first call."""
    optimizer = state or SceneOptimizer(params, config)
    report = optimizer.step(grads)
    return optimizer.numpy_params(), optimizer, report
