"""
Held-out evaluation of trained checkpoints

Every point of a curve averages one generation per (prompt, seed) pair. Each
held-out prompt is paired with its own held-out identity, whose clean input
render is the reference image. Generations may run on a thread pool; results
come back in submission order and are averaged flat, so the means do not
depend on ``jobs``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from ..attention.capture import AttentionCapture
from ..core.config import RunConfig
from ..core.exceptions import InvariantError, ValidationError
from ..core.logging import get_logger
from ..core.models import IdentityParams, PromptAttributes
from ..core.utils import module_checksum
from ..data.dataset import held_out_prompts
from ..data.identity import make_identities
from ..data.imageio import to_model_space, to_pixels
from ..data.render import render_input
from ..data.vocab import prompt_text
from ..denoiser.checkpoint import ModelBundle
from ..denoiser.pipeline import bind_reference
from ..denoiser.prompt import PromptEmbedding
from ..denoiser.sampling import sample
from .scores import identity_score, prompt_score

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_jobs(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> List[R]:
    """Map ``fn`` over ``items``, in order, on up to ``jobs`` threads"""
    if jobs < 1:
        raise ValidationError("jobs must be at least 1", field="jobs", value=jobs)
    if jobs == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class EvaluationJob:
    prompt_index: int
    seed: int
    attributes: PromptAttributes
    identity: IdentityParams


@dataclass
class EvaluationSet:
    """Held-out prompts, their identities and the sampling seeds"""

    prompts: List[PromptAttributes]
    identities: List[IdentityParams]
    seeds: List[int]

    @classmethod
    def from_config(cls, config: RunConfig, prompts: Optional[int] = None,
                    seeds: Optional[Sequence[int]] = None) -> "EvaluationSet":
        count = prompts or config.eval.prompts
        attributes = held_out_prompts(min(count, config.data.held_out_prompts), config.data.seed)
        seeds = list(config.eval.seeds if seeds is None else seeds)
        if not seeds:
            raise ValidationError("evaluation needs at least one seed", field="seeds")
        return cls(prompts=attributes, identities=make_identities(len(attributes), config.eval.identities_seed),
                   seeds=seeds)

    @property
    def jobs(self) -> List[EvaluationJob]:
        return [
            EvaluationJob(prompt_index=i, seed=seed, attributes=attributes, identity=self.identities[i])
            for i, attributes in enumerate(self.prompts)
            for seed in self.seeds
        ]

    def __len__(self) -> int:
        return len(self.prompts) * len(self.seeds)


@dataclass(frozen=True)
class Generation:
    job: EvaluationJob
    pixels: np.ndarray
    identity_score: float
    prompt_score: float
    norm_ratio: Optional[float] = None
    raw_norm_ratio: Optional[float] = None


@dataclass(frozen=True)
class EvaluationPoint:
    """Flat means over every generation of one knob value"""

    value: float
    identity_score: float
    prompt_score: float
    sample_count: int
    norm_ratio: Optional[float] = None
    raw_norm_ratio: Optional[float] = None


def generate(bundle: ModelBundle, job: EvaluationJob, value: float = 1.0,
             capture: Optional[AttentionCapture] = None) -> np.ndarray:
    """uint8 render of one job; bare host when the bundle has no adapter"""
    config = bundle.config
    prompt = PromptEmbedding.from_text(prompt_text(job.attributes, config.personalization.subject_word),
                                       max_tokens=config.model.max_tokens)
    subjects = []
    if bundle.adapter is not None:
        reference = to_model_space(render_input(job.identity))
        subjects = [bind_reference(bundle, prompt, [reference], value=value,
                                   source_ids=[f"identity-{job.prompt_index}"])]
    image = sample(prompt, subjects, config.schedule.sample_steps, job.seed, bundle.schedule, bundle.host,
                   capture=capture)
    return to_pixels(image)


def run_generation(bundle: ModelBundle, job: EvaluationJob, value: float = 1.0,
                   record_norms: bool = False) -> Generation:
    capture = AttentionCapture() if record_norms else None
    pixels = generate(bundle, job, value, capture=capture)
    recorded = capture is not None and len(capture) > 0
    return Generation(
        job=job,
        pixels=pixels,
        identity_score=identity_score(pixels, job.identity),
        prompt_score=prompt_score(pixels, job.attributes),
        norm_ratio=capture.mean_norm_ratio() if recorded else None,
        raw_norm_ratio=capture.mean_raw_norm_ratio() if recorded else None,
    )


def _checksum(bundle: ModelBundle) -> str:
    parts = [module_checksum(bundle.host)]
    if bundle.adapter is not None:
        parts.append(module_checksum(bundle.adapter))
    return ":".join(parts)


def evaluate_point(bundle: ModelBundle, value: float, evaluation: EvaluationSet, jobs: int = 1,
                   record_norms: bool = False) -> EvaluationPoint:
    """
    Generate and score every (prompt, seed) job at one knob value.

    Raises InvariantError if any parameter changed during evaluation.
    """
    before = _checksum(bundle)
    generations = run_jobs(lambda job: run_generation(bundle, job, value, record_norms), evaluation.jobs, jobs)
    if _checksum(bundle) != before:
        raise InvariantError("evaluation modified checkpoint parameters", check="evaluation_read_only")
    ratios = [g.norm_ratio for g in generations if g.norm_ratio is not None]
    raw_ratios = [g.raw_norm_ratio for g in generations if g.raw_norm_ratio is not None]
    point = EvaluationPoint(
        value=float(value),
        identity_score=float(np.mean([g.identity_score for g in generations])),
        prompt_score=float(np.mean([g.prompt_score for g in generations])),
        sample_count=len(generations),
        norm_ratio=float(np.mean(ratios)) if ratios else None,
        raw_norm_ratio=float(np.mean(raw_ratios)) if raw_ratios else None,
    )
    logger.info("Evaluated point", mechanism=None if bundle.mechanism is None else bundle.mechanism.value,
                value=point.value, identity_score=point.identity_score, prompt_score=point.prompt_score,
                samples=point.sample_count)
    return point
