"""
CSV tables and scatter plots

Every table carries a ``config_digest`` column (SHA-256 of the canonical
config text) so a row can be traced back to the run that produced it.
Floats are written with shortest round-trip formatting and read back with
``float_precision="round_trip"``, so ``parse_records(emit_records(r)) == r``.

Schemas:

    records     mechanism, lambda, seed, identity_score, prompt_score,
                sample_count, config_digest
    losses      stage, step, loss, config_digest
    queries     num_queries, identity_score, prompt_score, sample_count,
                reference_identity_score, config_digest
    alpha       alpha, identity_score, prompt_score, sample_count,
                norm_ratio, raw_norm_ratio, config_digest
"""

from itertools import groupby
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.exceptions import FileError
from ..core.models import MechanismKind, MetricRecord, TradeoffCurve
from ..data.imageio import write_ppm

RECORD_COLUMNS = ["mechanism", "lambda", "seed", "identity_score", "prompt_score", "sample_count", "config_digest"]
LOSS_COLUMNS = ["stage", "step", "loss", "config_digest"]
QUERY_COLUMNS = ["num_queries", "identity_score", "prompt_score", "sample_count", "reference_identity_score",
                 "config_digest"]
ALPHA_COLUMNS = ["alpha", "identity_score", "prompt_score", "sample_count", "norm_ratio", "raw_norm_ratio",
                 "config_digest"]


def _write(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def read_table(path: Union[str, Path], columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileError(f"Table not found: {path}", file_path=str(path), operation="read")
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise FileError(f"Table {path} lacks columns {missing}", file_path=str(path), operation="read")
    return frame


def emit_records(records: Iterable[MetricRecord], path: Union[str, Path],
                 config_digest: Union[str, Sequence[str]]) -> Path:
    """``config_digest`` is one digest for every row, or one per row"""
    records = list(records)
    digests = [config_digest] * len(records) if isinstance(config_digest, str) else list(config_digest)
    if len(digests) != len(records):
        raise FileError("one config digest per record is required", operation="write")
    rows = [
        {
            "mechanism": r.mechanism.value,
            "lambda": r.lambda_,
            "seed": r.seed,
            "identity_score": r.identity_score,
            "prompt_score": r.prompt_score,
            "sample_count": r.sample_count,
            "config_digest": digest,
        }
        for r, digest in zip(records, digests)
    ]
    return _write(pd.DataFrame(rows, columns=RECORD_COLUMNS), path)


def parse_records(path: Union[str, Path]) -> Tuple[List[MetricRecord], List[str]]:
    """Records in file order plus the config digest of each row"""
    frame = read_table(path, RECORD_COLUMNS)
    records = [
        MetricRecord(
            mechanism=MechanismKind(row["mechanism"]),
            lambda_=float(row["lambda"]),
            seed=int(row["seed"]),
            identity_score=float(row["identity_score"]),
            prompt_score=float(row["prompt_score"]),
            sample_count=int(row["sample_count"]),
        )
        for row in frame.to_dict("records")
    ]
    return records, [str(d) for d in frame["config_digest"]]


def curve_records(curves: Iterable[TradeoffCurve]) -> List[MetricRecord]:
    return [record for curve in curves for record in curve.records]


def curves_from_records(records: Sequence[MetricRecord]) -> List[TradeoffCurve]:
    """Consecutive rows of one mechanism form one curve block"""
    return [
        TradeoffCurve(mechanism=mechanism, records=list(block))
        for mechanism, block in groupby(records, key=lambda r: r.mechanism)
    ]


def emit_losses(losses: Sequence[float], stage: str, path: Union[str, Path], config_digest: str) -> Path:
    frame = pd.DataFrame({
        "stage": [stage] * len(losses),
        "step": list(range(1, len(losses) + 1)),
        "loss": [float(v) for v in losses],
        "config_digest": [config_digest] * len(losses),
    }, columns=LOSS_COLUMNS)
    return _write(frame, path)


def emit_table(rows: Sequence[Mapping[str, object]], columns: Sequence[str], path: Union[str, Path],
               config_digest: str) -> Path:
    """Ablation tables; each row gets the digest of its own run config when it carries one"""
    frame = pd.DataFrame(
        [{**{"config_digest": config_digest}, **row} for row in rows],
        columns=list(columns),
    )
    return _write(frame, path)


# Scatter plot layout
PLOT_SIZE = 160
PLOT_MARGIN = 12
MARKER_RADIUS = 2
AXIS_COLOR = (0, 0, 0)
MECHANISM_COLORS: Dict[MechanismKind, Tuple[int, int, int]] = {
    MechanismKind.NESTED: (220, 30, 30),
    MechanismKind.DECOUPLED_CA: (30, 90, 220),
    MechanismKind.SIMPLE_ADAPTER: (120, 120, 120),
    MechanismKind.GLOBAL_V: (30, 160, 60),
    MechanismKind.MULTIPLE_TOKENS: (200, 140, 0),
}


def _to_canvas(prompt: float, identity: float) -> Tuple[int, int]:
    span = PLOT_SIZE - 2 * PLOT_MARGIN - 1
    col = PLOT_MARGIN + int(round(np.clip(prompt, 0.0, 1.0) * span))
    row = PLOT_SIZE - 1 - PLOT_MARGIN - int(round(np.clip(identity, 0.0, 1.0) * span))
    return row, col


def _draw_line(canvas: np.ndarray, start: Tuple[int, int], end: Tuple[int, int], color) -> None:
    count = max(abs(end[0] - start[0]), abs(end[1] - start[1])) + 1
    rows = np.rint(np.linspace(start[0], end[0], count)).astype(int)
    cols = np.rint(np.linspace(start[1], end[1], count)).astype(int)
    canvas[rows, cols] = color


def scatter_image(curves: Sequence[TradeoffCurve]) -> np.ndarray:
    """
    (PLOT_SIZE, PLOT_SIZE, 3) plot: prompt_score on x, identity_score on y,
    one color per mechanism, consecutive lambdas joined by a line.
    """
    canvas = np.full((PLOT_SIZE, PLOT_SIZE, 3), 255, dtype=np.uint8)
    origin = _to_canvas(0.0, 0.0)
    _draw_line(canvas, origin, _to_canvas(1.0, 0.0), AXIS_COLOR)
    _draw_line(canvas, origin, _to_canvas(0.0, 1.0), AXIS_COLOR)
    for curve in curves:
        color = MECHANISM_COLORS[curve.mechanism]
        points = [_to_canvas(r.prompt_score, r.identity_score) for r in curve.records]
        for start, end in zip(points, points[1:]):
            _draw_line(canvas, start, end, color)
        for row, col in points:
            canvas[max(row - MARKER_RADIUS, 0):row + MARKER_RADIUS + 1,
                   max(col - MARKER_RADIUS, 0):col + MARKER_RADIUS + 1] = color
    return canvas


def scatter_ppm(curves: Sequence[TradeoffCurve], path: Union[str, Path]) -> Path:
    return write_ppm(path, scatter_image(curves))
