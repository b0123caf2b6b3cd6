"""
Attention heatmaps from a capture directory

Writes, as PGM files renormalized to [0, 255]:

    attn_l<layer>_s<step>_t<token>.pgm           external attention to the subject token
    probe_l<layer>_s<step>_t<token>_q<query>.pgm  where a probed query's value comes from
                                                  in the reference image
    qformer_q<m>.pgm                              one map per learned query

and ``tracing.csv``, the dominant-token tracing report.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
import torch

from ..attention.capture import AttentionCapture
from ..core.exceptions import FileError
from ..core.logging import get_logger
from ..core.models import Position
from ..core.utils import ensure_directory
from ..data.imageio import heatmap, write_pgm
from ..data.render import INPUT_ATTRIBUTES, subject_mask
from ..denoiser.checkpoint import ModelBundle
from ..encoder.analysis import query_mask, trace_dominant_tokens

logger = get_logger(__name__)

# Names of the run-level arrays attached to a capture
QFORMER_MAPS = "qformer_maps"
REFERENCE_MASK = "reference_mask"
GENERATED_MASK = "generated_mask"
HOST_PATCH = "host_patch"
ENCODER_PATCH = "encoder_patch"
PROBE_COUNT = "probe_count"
DEFAULT_PROBES = 16

TRACING_REPORT = "tracing.csv"
TRACING_COLUMNS = ["layer_id", "step", "subject_index", "probes", "hit_rate"]


def annotate_capture(capture: AttentionCapture, bundle: ModelBundle, reference: torch.Tensor,
                     position: Position) -> None:
    """Attach what the tracing analysis needs: Q-Former maps, both subject masks and patch sizes"""
    if bundle.adapter is not None and bundle.adapter.encoder.qformer.blocks:
        with torch.no_grad():
            capture.attach(QFORMER_MAPS, bundle.adapter.encoder.attention_maps(reference))
        capture.attach(ENCODER_PATCH, np.array([bundle.config.encoder.patch_size]))
    capture.attach(REFERENCE_MASK, subject_mask(INPUT_ATTRIBUTES.position))
    capture.attach(GENERATED_MASK, subject_mask(position))
    capture.attach(HOST_PATCH, np.array([bundle.config.model.patch_size]))
    capture.attach(PROBE_COUNT, np.array([bundle.config.eval.probes]))


def select_probes(generated_mask: np.ndarray, host_patch: int, count: int) -> List[int]:
    """Up to ``count`` query indices spread evenly over the generated subject region"""
    inside = np.flatnonzero(query_mask(generated_mask, host_patch))
    if inside.size == 0:
        return []
    picks = np.unique(np.rint(np.linspace(0, inside.size - 1, min(count, inside.size))).astype(int))
    return [int(inside[i]) for i in picks]


def _square(values: np.ndarray) -> np.ndarray:
    side = int(round(values.size ** 0.5))
    if side * side != values.size:
        return values.reshape(1, -1)
    return values.reshape(side, side)


def _upsample(grid: np.ndarray, factor: int) -> np.ndarray:
    return np.kron(grid, np.ones((factor, factor)))


def probe_source_map(nested_row: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Reference-image map of one query: nested weights spread through each token's Q-Former map"""
    count = maps.shape[0]
    tokens = np.arange(nested_row.shape[0]) % count
    return np.tensordot(nested_row, maps[tokens], axes=1)


@dataclass
class VisualizationSummary:
    heatmaps: int
    probe_maps: int
    query_maps: int
    hit_rate: Optional[float]


def render_capture(capture: AttentionCapture, out_dir: Union[str, Path],
                   probes: Optional[int] = None) -> VisualizationSummary:
    """``probes`` defaults to the count stored with the capture"""
    if not capture.records:
        raise FileError("Capture has no attention records", operation="viz-attn")
    out_dir = ensure_directory(out_dir)
    extras = capture.extras
    maps = extras.get(QFORMER_MAPS)
    host_patch = int(extras[HOST_PATCH][0]) if HOST_PATCH in extras else 1
    encoder_patch = int(extras[ENCODER_PATCH][0]) if ENCODER_PATCH in extras else 1
    if probes is None:
        probes = int(extras[PROBE_COUNT][0]) if PROBE_COUNT in extras else DEFAULT_PROBES
    probe_ids = select_probes(extras[GENERATED_MASK], host_patch, probes) if GENERATED_MASK in extras else []

    heatmaps = probe_maps = 0
    for record in capture.records:
        column = record.external_weights[:, record.subject_index]
        write_pgm(out_dir / f"attn_{record.key}.pgm", heatmap(_square(column)))
        heatmaps += 1
        if record.nested_weights is None:
            continue
        for probe in probe_ids:
            row = record.nested_weights[probe]
            grid = _upsample(probe_source_map(row, maps), encoder_patch) if maps is not None else row.reshape(1, -1)
            write_pgm(out_dir / f"probe_{record.key}_q{probe:03d}.pgm", heatmap(grid))
            probe_maps += 1

    query_maps = 0
    if maps is not None:
        for m in range(maps.shape[0]):
            write_pgm(out_dir / f"qformer_q{m:04d}.pgm", heatmap(_upsample(maps[m], encoder_patch)))
            query_maps += 1

    hit_rate = None
    if maps is not None and probe_ids and REFERENCE_MASK in extras:
        last_step = max(r.step for r in capture.records)
        rows = [
            {
                "layer_id": r.layer_id,
                "step": r.step,
                "subject_index": r.subject_index,
                "probes": len(probe_ids),
                "hit_rate": trace_dominant_tokens(r.nested_weights, maps, extras[REFERENCE_MASK], probe_ids,
                                                  encoder_patch),
            }
            for r in capture.records
            if r.nested_weights is not None and r.step == last_step
        ]
        if rows:
            pd.DataFrame(rows, columns=TRACING_COLUMNS).to_csv(out_dir / TRACING_REPORT, index=False,
                                                               lineterminator="\n")
            hit_rate = float(np.mean([row["hit_rate"] for row in rows]))

    logger.info("Rendered attention maps", out=str(out_dir), heatmaps=heatmaps, probe_maps=probe_maps,
                query_maps=query_maps, hit_rate=hit_rate)
    return VisualizationSummary(heatmaps=heatmaps, probe_maps=probe_maps, query_maps=query_maps, hit_rate=hit_rate)


def visualize_capture_dir(capture_dir: Union[str, Path], out_dir: Union[str, Path],
                          probes: Optional[int] = None) -> VisualizationSummary:
    capture_dir = Path(capture_dir)
    if not capture_dir.is_dir() or not any(capture_dir.iterdir()):
        raise FileError(f"Capture directory is empty or missing: {capture_dir}", file_path=str(capture_dir),
                        operation="viz-attn")
    return render_capture(AttentionCapture.load(capture_dir), out_dir, probes=probes)
