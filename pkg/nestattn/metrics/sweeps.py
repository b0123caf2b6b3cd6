"""
Lambda sweeps, mechanism comparison and ablations
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

from ..core.config import RunConfig, budget_signature
from ..core.exceptions import BudgetMismatchError, ValidationError
from ..core.logging import PerformanceLogger, get_logger
from ..core.models import MechanismKind, MetricRecord, TradeoffCurve
from ..data.dataset import SyntheticSample
from ..denoiser.checkpoint import ModelBundle
from ..denoiser.pipeline import train_adapter
from .evaluation import EvaluationPoint, EvaluationSet, evaluate_point

logger = get_logger(__name__)

# Published identity scores for the query-count grid; documentation only, the
# oracle metric here is not comparable
QUERY_COUNT_REFERENCE: Dict[int, float] = {16: 0.299, 64: 0.318, 256: 0.302, 1024: 0.363}

# Knob value recorded for the simple adapter's single point
SIMPLE_ADAPTER_LAMBDA = 1.0


def default_grid(mechanism: MechanismKind, config: RunConfig) -> List[float]:
    mechanism = MechanismKind(mechanism)
    if mechanism is MechanismKind.SIMPLE_ADAPTER:
        return [SIMPLE_ADAPTER_LAMBDA]
    if mechanism is MechanismKind.DECOUPLED_CA:
        return list(config.eval.decoupled_lambdas)
    return list(config.eval.lambdas)


def _check_grid(grid: Sequence[float]) -> List[float]:
    values = [float(v) for v in grid]
    if not values:
        raise ValidationError("lambda grid is empty", field="lambdas")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValidationError("lambda grid must be strictly increasing", field="lambdas", value=values)
    return values


def _require_adapter(bundle: ModelBundle, mechanism: MechanismKind) -> None:
    if bundle.adapter is None:
        raise ValidationError("checkpoint has no subject adapter; train stage B first", field="checkpoint")
    if bundle.mechanism is not mechanism:
        raise ValidationError(
            f"checkpoint holds a {bundle.mechanism.value} adapter, not {mechanism.value}",
            field="mechanism",
            value=bundle.mechanism.value,
        )


def _record(mechanism: MechanismKind, point: EvaluationPoint, evaluation: EvaluationSet) -> MetricRecord:
    return MetricRecord(
        mechanism=mechanism,
        lambda_=point.value,
        seed=evaluation.seeds[0],
        identity_score=point.identity_score,
        prompt_score=point.prompt_score,
        sample_count=point.sample_count,
    )


def sweep_lambda(bundle: ModelBundle, mechanism: MechanismKind, grid: Optional[Sequence[float]] = None,
                 evaluation: Optional[EvaluationSet] = None, jobs: int = 1) -> TradeoffCurve:
    """
    One record per grid value, each averaging every (prompt, seed) generation.

    The simple adapter has no knob, so its curve is a single point.
    """
    mechanism = MechanismKind(mechanism)
    _require_adapter(bundle, mechanism)
    evaluation = evaluation or EvaluationSet.from_config(bundle.config)
    if mechanism.has_lambda:
        values = _check_grid(default_grid(mechanism, bundle.config) if grid is None else grid)
    else:
        values = [SIMPLE_ADAPTER_LAMBDA]
    with PerformanceLogger("sweep_lambda", logger, mechanism=mechanism.value, points=len(values),
                           samples=len(evaluation)):
        records = [_record(mechanism, evaluate_point(bundle, v, evaluation, jobs), evaluation) for v in values]
    return TradeoffCurve(mechanism=mechanism, records=records)


def check_budgets(bundles: Mapping[MechanismKind, ModelBundle]) -> None:
    """All checkpoints must share the training-budget keys of the first one"""
    items = list(bundles.items())
    if not items:
        raise ValidationError("no checkpoints to compare", field="checkpoints")
    reference_mechanism, reference = items[0]
    expected = budget_signature(reference.config)
    for mechanism, bundle in items[1:]:
        signature = budget_signature(bundle.config)
        differing = sorted(k for k in expected if expected[k] != signature[k])
        if differing:
            raise BudgetMismatchError(
                f"{mechanism.value} was trained under a different budget than {reference_mechanism.value}: "
                + ", ".join(differing),
                mechanism=mechanism.value,
                keys=differing,
            )


def compare_mechanisms(bundles: Mapping[MechanismKind, ModelBundle],
                       grids: Optional[Mapping[MechanismKind, Sequence[float]]] = None,
                       evaluation: Optional[EvaluationSet] = None, jobs: int = 1) -> List[TradeoffCurve]:
    """One curve block per mechanism, in ``MechanismKind`` order"""
    check_budgets(bundles)
    grids = grids or {}
    curves = []
    for mechanism in MechanismKind:
        if mechanism not in bundles:
            continue
        bundle = bundles[mechanism]
        jobs_set = evaluation or EvaluationSet.from_config(bundle.config)
        curves.append(sweep_lambda(bundle, mechanism, grids.get(mechanism), jobs_set, jobs))
    return curves


@dataclass(frozen=True)
class QueryAblationRow:
    num_queries: int
    identity_score: float
    prompt_score: float
    sample_count: int
    config_digest: str

    @property
    def reference_identity_score(self) -> float:
        return QUERY_COUNT_REFERENCE.get(self.num_queries, float("nan"))

    def as_row(self) -> Dict[str, Union[int, float, str]]:
        return {
            "num_queries": self.num_queries,
            "identity_score": self.identity_score,
            "prompt_score": self.prompt_score,
            "sample_count": self.sample_count,
            "reference_identity_score": self.reference_identity_score,
            "config_digest": self.config_digest,
        }


@dataclass(frozen=True)
class AlphaAblationRow:
    alpha: str
    identity_score: float
    prompt_score: float
    sample_count: int
    norm_ratio: float
    raw_norm_ratio: float
    config_digest: str

    def as_row(self) -> Dict[str, Union[int, float, str]]:
        return {
            "alpha": self.alpha,
            "identity_score": self.identity_score,
            "prompt_score": self.prompt_score,
            "sample_count": self.sample_count,
            "norm_ratio": self.norm_ratio,
            "raw_norm_ratio": self.raw_norm_ratio,
            "config_digest": self.config_digest,
        }


def alpha_label(alpha: Union[float, str]) -> str:
    return "none" if alpha == "none" or alpha is None else repr(float(alpha))


def train_variants(config: RunConfig, host_bundle: ModelBundle, samples: Sequence[SyntheticSample],
                   overrides: Sequence[Dict[str, dict]], save_dir: Optional[Union[str, Path]] = None,
                   names: Optional[Sequence[str]] = None) -> List[ModelBundle]:
    """One nested adapter per override set, all on the same frozen host"""
    bundles = []
    for i, sections in enumerate(overrides):
        sections = {**sections, "personalization": {"mechanism": MechanismKind.NESTED.value,
                                                     **sections.get("personalization", {})}}
        bundle, _ = train_adapter(config.with_overrides(**sections), host_bundle, samples)
        if save_dir is not None:
            name = names[i] if names else f"variant-{i}"
            bundle.save(Path(save_dir) / f"{name}.ckpt")
        bundles.append(bundle)
    return bundles


def query_ablation_rows(bundles: Mapping[int, ModelBundle], lam: float, evaluation: Optional[EvaluationSet] = None,
                        jobs: int = 1) -> List[QueryAblationRow]:
    rows = []
    for num_queries in sorted(bundles):
        bundle = bundles[num_queries]
        _require_adapter(bundle, MechanismKind.NESTED)
        point = evaluate_point(bundle, lam, evaluation or EvaluationSet.from_config(bundle.config), jobs)
        rows.append(QueryAblationRow(num_queries=num_queries, identity_score=point.identity_score,
                                     prompt_score=point.prompt_score, sample_count=point.sample_count,
                                     config_digest=bundle.config.digest()))
    return rows


def ablate_queries(config: RunConfig, host_bundle: ModelBundle, samples: Sequence[SyntheticSample],
                   grid: Optional[Sequence[int]] = None, evaluation: Optional[EvaluationSet] = None, jobs: int = 1,
                   save_dir: Optional[Union[str, Path]] = None) -> List[QueryAblationRow]:
    """Train one nested adapter per query count M and score it at the ablation lambda"""
    grid = sorted(set(grid or config.eval.query_grid))
    with PerformanceLogger("ablate_queries", logger, grid=grid):
        bundles = train_variants(config, host_bundle, samples, [{"encoder": {"num_queries": m}} for m in grid],
                                 save_dir=save_dir, names=[f"queries-{m}" for m in grid])
        return query_ablation_rows(dict(zip(grid, bundles)), config.eval.ablation_lambda, evaluation, jobs)


def alpha_ablation_rows(bundles: Sequence[ModelBundle], lam: float, evaluation: Optional[EvaluationSet] = None,
                        jobs: int = 1) -> List[AlphaAblationRow]:
    """
    Scores plus the mean ||V_q[s*]|| / ||V[s*]|| read from attention captures,
    after (``norm_ratio``) and before (``raw_norm_ratio``) the norm rescale.
    """
    rows = []
    for bundle in bundles:
        _require_adapter(bundle, MechanismKind.NESTED)
        point = evaluate_point(bundle, lam, evaluation or EvaluationSet.from_config(bundle.config), jobs,
                               record_norms=True)
        rows.append(AlphaAblationRow(
            alpha=alpha_label(bundle.config.personalization.alpha),
            identity_score=point.identity_score,
            prompt_score=point.prompt_score,
            sample_count=point.sample_count,
            norm_ratio=float("nan") if point.norm_ratio is None else point.norm_ratio,
            raw_norm_ratio=float("nan") if point.raw_norm_ratio is None else point.raw_norm_ratio,
            config_digest=bundle.config.digest(),
        ))
    return rows


def ablate_alpha(config: RunConfig, host_bundle: ModelBundle, samples: Sequence[SyntheticSample],
                 grid: Optional[Sequence[Union[float, str]]] = None, evaluation: Optional[EvaluationSet] = None,
                 jobs: int = 1, save_dir: Optional[Union[str, Path]] = None) -> List[AlphaAblationRow]:
    """Train one nested adapter per alpha setting ("none" disables the norm regularization)"""
    grid = list(config.eval.alpha_grid if grid is None else grid)
    labels = [alpha_label(a) for a in grid]
    if len(set(labels)) != len(labels):
        raise ValidationError("alpha grid has duplicate settings", field="alpha_grid", value=labels)
    with PerformanceLogger("ablate_alpha", logger, grid=labels):
        bundles = train_variants(config, host_bundle, samples, [{"personalization": {"alpha": a}} for a in grid],
                                 save_dir=save_dir, names=[f"alpha-{label}" for label in labels])
        return alpha_ablation_rows(bundles, config.eval.ablation_lambda, evaluation, jobs)
