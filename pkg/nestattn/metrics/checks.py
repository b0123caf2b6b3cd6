"""
Run-time checks on evaluation outputs

Invariant checks must hold for any checkpoint; a failure aborts the command
with exit code 2. Direction checks compare trained models and depend on how
well training went, so they are logged and only fail the run under --strict.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import InvariantError
from ..core.logging import get_logger
from ..core.models import MechanismKind, TradeoffCurve

logger = get_logger(__name__)

INVARIANT = "invariant"
DIRECTION = "direction"

# One inversion up to this size is tolerated in a monotone trend
INVERSION_TOLERANCE = 0.01
ENDPOINT_MARGIN = 0.02
PROMPT_MATCH_TOLERANCE = 0.03
ALPHA_PROMPT_MARGIN = 0.05
TRACING_THRESHOLD = 0.8


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    kind: str = DIRECTION
    detail: str = ""


def _invariant(name: str, passed: bool, detail: str = "") -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), kind=INVARIANT, detail=detail)


def _direction(name: str, passed: bool, detail: str = "") -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), kind=DIRECTION, detail=detail)


def check_curve(curve: TradeoffCurve, expected_samples: Optional[int] = None) -> List[CheckResult]:
    """Structural checks every emitted curve must pass"""
    name = curve.mechanism.value
    lambdas = curve.lambdas
    results = [
        _invariant(f"{name}.lambda_increasing", all(b > a for a, b in zip(lambdas, lambdas[1:])), str(lambdas)),
        _invariant(f"{name}.scores_in_range", all(
            0.0 <= r.identity_score <= 1.0 and 0.0 <= r.prompt_score <= 1.0 for r in curve.records)),
    ]
    if expected_samples is not None:
        counts = sorted({r.sample_count for r in curve.records})
        results.append(_invariant(f"{name}.sample_count", counts == [expected_samples], str(counts)))
    if curve.mechanism is MechanismKind.SIMPLE_ADAPTER:
        results.append(_invariant(f"{name}.single_point", len(curve.records) == 1, f"{len(curve.records)} rows"))
    return results


def _monotone(values: Sequence[float], increasing: bool, tolerance: float = INVERSION_TOLERANCE) -> bool:
    steps = np.diff(np.asarray(values, dtype=np.float64))
    if not increasing:
        steps = -steps
    inversions = steps[steps < 0]
    return len(inversions) == 0 or (len(inversions) == 1 and -inversions[0] <= tolerance)


def check_tradeoff(curve: TradeoffCurve) -> List[CheckResult]:
    """Raising lambda trades prompt alignment for identity"""
    name = curve.mechanism.value
    if len(curve.records) < 2:
        return []
    identity = [r.identity_score for r in curve.records]
    prompt = [r.prompt_score for r in curve.records]
    first, last = curve.records[0], curve.records[-1]
    return [
        _direction(f"{name}.identity_nondecreasing", _monotone(identity, increasing=True),
                   " ".join(f"{v:.4f}" for v in identity)),
        _direction(f"{name}.prompt_nonincreasing", _monotone(prompt, increasing=False),
                   " ".join(f"{v:.4f}" for v in prompt)),
        _direction(
            f"{name}.endpoint_margin",
            last.identity_score - first.identity_score >= ENDPOINT_MARGIN
            and first.prompt_score - last.prompt_score >= ENDPOINT_MARGIN,
            f"identity {first.identity_score:.4f}->{last.identity_score:.4f}, "
            f"prompt {first.prompt_score:.4f}->{last.prompt_score:.4f}",
        ),
    ]


def check_mechanism_ordering(curves: Sequence[TradeoffCurve]) -> List[CheckResult]:
    """Nested identity beats global-V and multiple-tokens at matched prompt score"""
    by_kind: Dict[MechanismKind, TradeoffCurve] = {c.mechanism: c for c in curves}
    results: List[CheckResult] = []
    nested = by_kind.get(MechanismKind.NESTED)
    if nested is not None:
        for rival_kind in (MechanismKind.GLOBAL_V, MechanismKind.MULTIPLE_TOKENS):
            rival = by_kind.get(rival_kind)
            if rival is None:
                continue
            matched = 0
            passed = True
            for point in rival.records:
                candidates = [r.identity_score for r in nested.records
                              if abs(r.prompt_score - point.prompt_score) <= PROMPT_MATCH_TOLERANCE]
                if candidates:
                    matched += 1
                    passed = passed and max(candidates) >= point.identity_score
            results.append(_direction(f"nested_vs_{rival_kind.value}", passed, f"{matched} matched points"))
    simple = by_kind.get(MechanismKind.SIMPLE_ADAPTER)
    if simple is not None and simple.records:
        others = [r.prompt_score for c in curves if c.mechanism is not MechanismKind.SIMPLE_ADAPTER
                  for r in c.records]
        if others:
            score = simple.records[0].prompt_score
            results.append(_direction("simple_adapter_lowest_prompt", score <= min(others),
                                      f"{score:.4f} vs min {min(others):.4f}"))
    return results


def check_query_ablation(scores: Dict[int, float]) -> List[CheckResult]:
    """More learned queries should not lose identity (M=64 vs M=16)"""
    if 16 not in scores or 64 not in scores:
        return []
    return [_direction("queries_64_vs_16", scores[64] >= scores[16], f"{scores[16]:.4f} -> {scores[64]:.4f}")]


def check_alpha_ablation(rows: Dict[str, Dict[str, float]]) -> List[CheckResult]:
    """
    ``rows`` maps alpha labels to identity/prompt scores and norm ratios.

    A regularized run's value norms sit at exactly alpha times ||V[s*]||.
    Without regularization values grow and prompt alignment drops.
    """
    results: List[CheckResult] = []
    for label, row in rows.items():
        if label == "none" or np.isnan(row["norm_ratio"]):
            continue
        alpha = float(label)
        results.append(_invariant(f"alpha_{label}.norm_ratio", abs(row["norm_ratio"] - alpha) <= 1e-9 * max(alpha, 1),
                                  f"{row['norm_ratio']!r}"))
    reference = rows.get(repr(2.0))
    free = rows.get("none")
    if reference is not None and free is not None:
        results.append(_direction("alpha_none_norm_ratio", free["norm_ratio"] > reference["norm_ratio"],
                                  f"{free['norm_ratio']:.4f} vs {reference['norm_ratio']:.4f}"))
        results.append(_direction(
            "alpha_none_prompt_drop",
            reference["prompt_score"] - free["prompt_score"] >= ALPHA_PROMPT_MARGIN,
            f"{free['prompt_score']:.4f} vs {reference['prompt_score']:.4f}",
        ))
    return results


def check_tracing(hit_rate: float) -> List[CheckResult]:
    return [_direction("dominant_token_tracing", hit_rate >= TRACING_THRESHOLD, f"{hit_rate:.3f}")]


def enforce(results: Sequence[CheckResult], strict: bool = False) -> None:
    """
    Log every check; raise InvariantError on a failed invariant, or on a
    failed direction check when ``strict``.
    """
    failed = []
    for result in results:
        log = logger.info if result.passed else logger.warning
        log("Check", check=result.name, kind=result.kind, passed=result.passed, detail=result.detail)
        if not result.passed and (result.kind == INVARIANT or strict):
            failed.append(result)
    if failed:
        raise InvariantError(
            f"{len(failed)} check(s) failed: " + ", ".join(r.name for r in failed),
            check=failed[0].name,
            observed={r.name: r.detail for r in failed},
        )
