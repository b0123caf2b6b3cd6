"""
Linear-beta diffusion schedule and forward noising
"""

from typing import List

import torch

from ..core.config import ScheduleConfig
from ..core.exceptions import ShapeError, ValidationError
from ..core.tensor import DTYPE


class DiffusionSchedule:
    """betas linear in [beta_start, beta_end] over ``steps``; alpha_bar is their cumulative (1 - beta) product"""

    def __init__(self, steps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02):
        if steps < 1:
            raise ValidationError("schedule needs at least one step", field="steps", value=steps)
        if not 0 < beta_start <= beta_end < 1:
            raise ValidationError("betas must satisfy 0 < beta_start <= beta_end < 1", field="betas",
                                  value=[beta_start, beta_end])
        self.steps = steps
        self.betas = torch.linspace(beta_start, beta_end, steps, dtype=DTYPE)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = torch.cumprod(self.alphas, dim=0)

    @classmethod
    def from_config(cls, config: ScheduleConfig) -> "DiffusionSchedule":
        return cls(config.steps, config.beta_start, config.beta_end)

    def check_step(self, t: int) -> int:
        if not 0 <= int(t) < self.steps:
            raise ValidationError(f"step {t} outside [0, {self.steps})", field="t", value=int(t))
        return int(t)

    def alpha_bar(self, t: int) -> torch.Tensor:
        return self.alpha_bars[self.check_step(t)]

    def sampling_steps(self, count: int) -> List[int]:
        """``count`` evenly spaced steps from T-1 down to 0 (distinct, descending)"""
        if not 1 <= count <= self.steps:
            raise ValidationError(f"sampling steps must lie in [1, {self.steps}]", field="steps", value=count)
        if count == 1:
            return [self.steps - 1]
        grid = torch.linspace(self.steps - 1, 0, count, dtype=DTYPE).round().long().tolist()
        return sorted(set(grid), reverse=True)


def forward_noising(x0: torch.Tensor, t: int, noise: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise"""
    if x0.shape != noise.shape:
        raise ShapeError("noise must match the image shape", shapes=[tuple(x0.shape), tuple(noise.shape)],
                         operation="forward_noising")
    alpha_bar = schedule.alpha_bar(t)
    return torch.sqrt(alpha_bar) * x0 + torch.sqrt(1.0 - alpha_bar) * noise
