"""
Two-stage training

Stage A pretrains the bare text-conditioned host on the synthetic corpus with
no subjects bound. Stage B freezes the host and trains only the subject
adapter (Q-Former plus per-layer mechanism modules), with the subject word of
every prompt bound to the encoder tokens of the sample's reference image.
Both stages minimize the MSE between true and predicted noise, using SGD with
momentum and gradient-norm clipping.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch

from ..core.config import RunConfig
from ..core.exceptions import TrainingError, ValidationError
from ..core.logging import LoggerMixin, PerformanceLogger
from ..core.tensor import RandomSource
from ..data.dataset import SyntheticSample
from ..data.imageio import to_model_space
from .adapter import SubjectAdapter
from .model import ToyDenoiser
from .prompt import PromptEmbedding
from .schedule import DiffusionSchedule, forward_noising

# Stream ids under the training seed
_BATCH_STREAM = 0
_NOISE_STREAM = 1


@dataclass
class TrainingResult:
    stage: str
    losses: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def sample_loss(sample: SyntheticSample, model: ToyDenoiser, schedule: DiffusionSchedule, t: int,
                noise: torch.Tensor, adapter: Optional[SubjectAdapter] = None,
                alpha: Optional[float] = 2.0) -> torch.Tensor:
    """MSE between ``noise`` and the model's prediction for one triplet"""
    x0 = to_model_space(sample.target_image)
    x_t = forward_noising(x0, t, noise, schedule)
    prompt = PromptEmbedding(token_ids=sample.token_ids, subject_word_index=sample.subject_index)
    subjects = []
    if adapter is not None:
        tokens = adapter.encode([to_model_space(sample.input_image)], [f"sample-{sample.sample_id}"])
        subjects = [adapter.bind(prompt, tokens, lam=1.0, alpha=alpha)]
    predicted = model(x_t, t, prompt, subjects)
    return torch.mean((predicted - noise) ** 2)


def training_step(batch: Sequence[SyntheticSample], model: ToyDenoiser, optimizer: torch.optim.Optimizer,
                  schedule: DiffusionSchedule, rng: RandomSource, adapter: Optional[SubjectAdapter] = None,
                  alpha: Optional[float] = 2.0, grad_clip: float = 1.0, step: int = 0, stage: str = "A") -> float:
    """One optimizer update on the mean loss of ``batch``; returns that loss"""
    if not batch:
        raise ValidationError("training batch is empty", field="batch")
    optimizer.zero_grad(set_to_none=True)
    generator = rng.numpy
    losses = []
    for sample in batch:
        t = int(generator.integers(0, schedule.steps))
        noise = rng.normal(*sample.target_image.shape)
        losses.append(sample_loss(sample, model, schedule, t, noise, adapter=adapter, alpha=alpha))
    loss = torch.stack(losses).mean()
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingError(
            f"non-finite loss at step {step}",
            step=step,
            stage=stage,
            diagnostics={"loss": value, "sample_ids": [s.sample_id for s in batch]},
        )
    loss.backward()
    parameters = [p for group in optimizer.param_groups for p in group["params"]]
    grad_norm = float(torch.nn.utils.clip_grad_norm_(parameters, grad_clip))
    if not math.isfinite(grad_norm):
        raise TrainingError(f"non-finite gradient norm at step {step}", step=step, stage=stage,
                            diagnostics={"loss": value, "grad_norm": grad_norm})
    optimizer.step()
    return value


class Trainer(LoggerMixin):
    """Runs stage A (host) or stage B (adapter) for ``config.train.steps`` updates"""

    def __init__(self, config: RunConfig, model: ToyDenoiser, schedule: DiffusionSchedule,
                 adapter: Optional[SubjectAdapter] = None):
        self.config = config
        self.model = model
        self.schedule = schedule
        self.adapter = adapter
        self.stage = config.train.stage
        if self.stage == "B" and adapter is None:
            raise ValidationError("stage B trains a subject adapter; none was given", field="adapter")
        if self.stage == "A" and adapter is not None:
            raise ValidationError("stage A trains the bare host; no adapter is allowed", field="adapter")

    def parameters(self) -> List[torch.nn.Parameter]:
        if self.stage == "A":
            self.model.requires_grad_(True)
            return list(self.model.parameters())
        self.model.requires_grad_(False)
        return self.adapter.trainable_parameters()

    def fit(self, samples: Sequence[SyntheticSample]) -> TrainingResult:
        train = self.config.train
        if not samples:
            raise ValidationError("training needs at least one sample", field="samples")
        optimizer = torch.optim.SGD(self.parameters(), lr=train.learning_rate, momentum=train.momentum)
        root = RandomSource(train.seed)
        order_rng = root.child(_BATCH_STREAM)
        noise_rng = root.child(_NOISE_STREAM)
        alpha = self.config.personalization.alpha_value
        result = TrainingResult(stage=self.stage)

        order: List[int] = []
        with PerformanceLogger("training", self.logger, stage=self.stage, steps=train.steps):
            for step in range(train.steps):
                batch = []
                while len(batch) < train.batch_size:
                    if not order:
                        order = [int(i) for i in order_rng.permutation(len(samples))]
                    batch.append(samples[order.pop(0)])
                loss = training_step(batch, self.model, optimizer, self.schedule, noise_rng.child(step),
                                     adapter=self.adapter, alpha=alpha, grad_clip=train.grad_clip,
                                     step=step, stage=self.stage)
                result.losses.append(loss)
                if (step + 1) % train.log_every == 0 or step + 1 == train.steps:
                    window = result.losses[-train.log_every:]
                    self.logger.info("Training progress", stage=self.stage, step=step + 1,
                                     loss=loss, mean_loss=sum(window) / len(window))
        if self.stage == "B":
            self.model.requires_grad_(False)
        return result
