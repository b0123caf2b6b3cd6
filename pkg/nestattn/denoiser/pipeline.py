"""
Stage runners and reference binding shared by the CLI and the evaluators
"""

from typing import Optional, Sequence, Tuple

import torch

from ..core.config import RunConfig
from ..core.exceptions import ValidationError
from ..core.logging import get_logger
from ..data.dataset import SyntheticSample
from .adapter import PersonalizedSubject, knob_arguments
from .checkpoint import ModelBundle, build_adapter, build_host, check_host_compatible
from .prompt import PromptEmbedding
from .schedule import DiffusionSchedule
from .training import Trainer, TrainingResult

logger = get_logger(__name__)


def train_host(config: RunConfig, samples: Sequence[SyntheticSample]) -> Tuple[ModelBundle, TrainingResult]:
    """Stage A: a fresh host trained on ``samples``"""
    config = config.with_overrides(train={"stage": "A"})
    host = build_host(config)
    schedule = DiffusionSchedule.from_config(config.schedule)
    result = Trainer(config, host, schedule).fit(samples)
    host.requires_grad_(False)
    logger.info("Host trained", final_loss=result.final_loss, steps=len(result.losses))
    return ModelBundle(config=config, host=host, schedule=schedule), result


def train_adapter(config: RunConfig, host_bundle: ModelBundle, samples: Sequence[SyntheticSample],
                  host_path: str = "") -> Tuple[ModelBundle, TrainingResult]:
    """Stage B: a fresh adapter for ``config.personalization.mechanism`` on a frozen host"""
    config = config.with_overrides(train={"stage": "B"})
    check_host_compatible(host_bundle.config, config, host_path)
    host = host_bundle.host
    host.requires_grad_(False)
    adapter = build_adapter(config, host)
    result = Trainer(config, host, host_bundle.schedule, adapter).fit(samples)
    adapter.requires_grad_(False)
    logger.info("Adapter trained", mechanism=adapter.mechanism.value, final_loss=result.final_loss,
                num_queries=adapter.encoder.num_queries)
    return ModelBundle(config=config, host=host, schedule=host_bundle.schedule, adapter=adapter), result


def bind_reference(bundle: ModelBundle, prompt: PromptEmbedding, images: Sequence[torch.Tensor], value: float = 1.0,
                   subject_index: Optional[int] = None,
                   source_ids: Optional[Sequence[str]] = None) -> PersonalizedSubject:
    """
    Encode reference images (model space) and bind them to a prompt word.

    ``value`` is the mechanism's inference knob: the attention factor for the
    factor mechanisms, the branch scale for decoupled cross-attention, and
    ignored for the simple adapter.
    """
    if bundle.adapter is None:
        raise ValidationError("checkpoint has no subject adapter; train stage B first", field="checkpoint")
    adapter = bundle.adapter
    with torch.no_grad():
        tokens = adapter.encode(list(images), source_ids)
    return adapter.bind(prompt, tokens, alpha=bundle.config.personalization.alpha_value,
                        subject_index=subject_index, **knob_arguments(adapter.mechanism, value))
