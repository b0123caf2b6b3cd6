"""
Deterministic DDIM sampling (eta = 0)

The initial latent depends only on the seed, so two prompts sampled with the
same seed start from bit-identical noise.
"""

from typing import Optional, Sequence

import torch

from ..attention.capture import AttentionCapture
from ..baselines.dispatch import Personalization
from ..core.tensor import RandomSource
from .model import ToyDenoiser
from .prompt import PromptEmbedding
from .schedule import DiffusionSchedule

# Stream id under the sampling seed
_LATENT_STREAM = 0


def initial_latent(seed: int, image_size: int) -> torch.Tensor:
    return RandomSource(seed, (_LATENT_STREAM,)).normal(image_size, image_size, 3)


def sample(prompt: PromptEmbedding, subjects: Sequence[Personalization], steps: int, seed: int,
           schedule: DiffusionSchedule, model: ToyDenoiser,
           capture: Optional[AttentionCapture] = None) -> torch.Tensor:
    """
    Generate one image in model space ([-1, 1]).

    Each step predicts the noise, forms the clamped clean estimate and moves
    to the previous sampled step along the deterministic DDIM path; the last
    step returns the clean estimate itself.
    """
    timesteps = schedule.sampling_steps(steps)
    capture = capture if capture is not None else model.registered_capture
    x = initial_latent(seed, model.image_size)
    with torch.no_grad():
        for i, t in enumerate(timesteps):
            if capture is not None:
                capture.begin_step(i)
            eps = model(x, t, prompt, subjects, capture)
            alpha_bar = schedule.alpha_bars[t]
            x0_hat = ((x - torch.sqrt(1.0 - alpha_bar) * eps) / torch.sqrt(alpha_bar)).clamp(-1.0, 1.0)
            if i + 1 == len(timesteps):
                x = x0_hat
            else:
                alpha_bar_prev = schedule.alpha_bars[timesteps[i + 1]]
                x = torch.sqrt(alpha_bar_prev) * x0_hat + torch.sqrt(1.0 - alpha_bar_prev) * eps
    return x
