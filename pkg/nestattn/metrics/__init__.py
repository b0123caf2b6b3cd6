"""
Oracle scores, sweeps, ablations, tables and attention visualizations
"""

from .checks import (
    CheckResult,
    check_alpha_ablation,
    check_curve,
    check_mechanism_ordering,
    check_query_ablation,
    check_tracing,
    check_tradeoff,
    enforce,
)
from .evaluation import EvaluationJob, EvaluationPoint, EvaluationSet, evaluate_point, generate, run_jobs
from .records import (
    ALPHA_COLUMNS,
    QUERY_COLUMNS,
    curve_records,
    curves_from_records,
    emit_losses,
    emit_records,
    emit_table,
    parse_records,
    scatter_image,
    scatter_ppm,
)
from .scores import identity_score, prompt_score
from .sweeps import (
    QUERY_COUNT_REFERENCE,
    ablate_alpha,
    ablate_queries,
    alpha_ablation_rows,
    check_budgets,
    compare_mechanisms,
    default_grid,
    query_ablation_rows,
    sweep_lambda,
)
from .visualize import annotate_capture, render_capture, visualize_capture_dir

__all__ = [
    "CheckResult",
    "check_alpha_ablation",
    "check_curve",
    "check_mechanism_ordering",
    "check_query_ablation",
    "check_tracing",
    "check_tradeoff",
    "enforce",
    "EvaluationJob",
    "EvaluationPoint",
    "EvaluationSet",
    "evaluate_point",
    "generate",
    "run_jobs",
    "ALPHA_COLUMNS",
    "QUERY_COLUMNS",
    "curve_records",
    "curves_from_records",
    "emit_losses",
    "emit_records",
    "emit_table",
    "parse_records",
    "scatter_image",
    "scatter_ppm",
    "identity_score",
    "prompt_score",
    "QUERY_COUNT_REFERENCE",
    "ablate_alpha",
    "ablate_queries",
    "alpha_ablation_rows",
    "check_budgets",
    "compare_mechanisms",
    "default_grid",
    "query_ablation_rows",
    "sweep_lambda",
    "annotate_capture",
    "render_capture",
    "visualize_capture_dir",
]
