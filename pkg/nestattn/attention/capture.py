"""
Attention-capture sink

A sink registered on a model receives, per cross-attention layer and per
denoising step, the external attention weights (n x T), the nested attention
weights (n x M) and the per-query subject values V_q[s*].
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import torch

from ..core.exceptions import FileError
from ..core.logging import get_logger
from ..core.utils import ensure_directory

logger = get_logger(__name__)

CAPTURE_ARRAYS = "capture.npz"
CAPTURE_INDEX = "capture.csv"
EXTRA_PREFIX = "extra_"


@dataclass
class CaptureRecord:
    layer_id: int
    step: int
    subject_index: int
    external_weights: np.ndarray
    nested_weights: Optional[np.ndarray]
    values: np.ndarray
    raw_values: np.ndarray
    v_star_norm: float

    @property
    def key(self) -> str:
        return f"l{self.layer_id:02d}_s{self.step:03d}_t{self.subject_index:02d}"

    @property
    def norm_ratio(self) -> float:
        """Mean ||V_q[s*]|| / ||V[s*]|| over queries"""
        if self.v_star_norm == 0:
            return float("nan")
        return float(np.linalg.norm(self.values, axis=1).mean() / self.v_star_norm)


class AttentionCapture:
    """Collects attention internals during sampling"""

    def __init__(self):
        self.records: List[CaptureRecord] = []
        self.extras: Dict[str, np.ndarray] = {}
        self.step = 0

    def attach(self, name: str, array) -> None:
        """Store a run-level array (Q-Former maps, subject masks) next to the records"""
        self.extras[name] = np.asarray(array.detach().cpu().numpy() if isinstance(array, torch.Tensor) else array)

    def begin_step(self, step: int) -> None:
        self.step = step

    def record(
        self,
        layer_id: int,
        subject_index: int,
        external_weights: torch.Tensor,
        values: torch.Tensor,
        raw_values: torch.Tensor,
        v_star_norm: Union[float, torch.Tensor],
        nested_weights: Optional[torch.Tensor] = None,
    ) -> None:
        self.records.append(CaptureRecord(
            layer_id=layer_id,
            step=self.step,
            subject_index=subject_index,
            external_weights=external_weights.detach().cpu().numpy().copy(),
            nested_weights=None if nested_weights is None else nested_weights.detach().cpu().numpy().copy(),
            values=values.detach().cpu().numpy().copy(),
            raw_values=raw_values.detach().cpu().numpy().copy(),
            v_star_norm=float(v_star_norm),
        ))

    def __len__(self) -> int:
        return len(self.records)

    def mean_norm_ratio(self) -> float:
        ratios = [r.norm_ratio for r in self.records]
        return float(np.mean(ratios)) if ratios else float("nan")

    def mean_raw_norm_ratio(self) -> float:
        """Mean pre-regularization ||v*|| / ||V[s*]||"""
        ratios = [float(np.linalg.norm(r.raw_values, axis=1).mean() / r.v_star_norm)
                  for r in self.records if r.v_star_norm > 0]
        return float(np.mean(ratios)) if ratios else float("nan")

    def export(self, directory: Union[str, Path]) -> Path:
        """Write all arrays to an npz archive plus a CSV index"""
        directory = ensure_directory(directory)
        arrays: Dict[str, np.ndarray] = {}
        rows = []
        for record in self.records:
            arrays[f"{record.key}_external"] = record.external_weights
            arrays[f"{record.key}_values"] = record.values
            arrays[f"{record.key}_raw_values"] = record.raw_values
            if record.nested_weights is not None:
                arrays[f"{record.key}_nested"] = record.nested_weights
            rows.append({
                "key": record.key,
                "layer_id": record.layer_id,
                "step": record.step,
                "subject_index": record.subject_index,
                "queries": record.external_weights.shape[0],
                "tokens": record.external_weights.shape[1],
                "nested_tokens": 0 if record.nested_weights is None else record.nested_weights.shape[1],
                "v_star_norm": record.v_star_norm,
                "norm_ratio": record.norm_ratio,
            })
        for name, array in self.extras.items():
            arrays[EXTRA_PREFIX + name] = array
        np.savez(directory / CAPTURE_ARRAYS, **arrays)
        pd.DataFrame(rows, columns=[
            "key", "layer_id", "step", "subject_index", "queries", "tokens", "nested_tokens",
            "v_star_norm", "norm_ratio",
        ]).to_csv(directory / CAPTURE_INDEX, index=False, lineterminator="\n")
        logger.info("Exported attention capture", directory=str(directory), records=len(self.records))
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "AttentionCapture":
        directory = Path(directory)
        index_path = directory / CAPTURE_INDEX
        if not index_path.is_file():
            raise FileError(f"No capture index in {directory}", file_path=str(index_path), operation="read")
        index = pd.read_csv(index_path, float_precision="round_trip")
        capture = cls()
        arrays_path = directory / CAPTURE_ARRAYS
        if not arrays_path.is_file():
            return capture
        with np.load(arrays_path) as arrays:
            for key in arrays.files:
                if key.startswith(EXTRA_PREFIX):
                    capture.extras[key[len(EXTRA_PREFIX):]] = arrays[key]
            for row in index.itertuples(index=False):
                nested_key = f"{row.key}_nested"
                capture.records.append(CaptureRecord(
                    layer_id=int(row.layer_id),
                    step=int(row.step),
                    subject_index=int(row.subject_index),
                    external_weights=arrays[f"{row.key}_external"],
                    nested_weights=arrays[nested_key] if nested_key in arrays.files else None,
                    values=arrays[f"{row.key}_values"],
                    raw_values=arrays[f"{row.key}_raw_values"],
                    v_star_norm=float(row.v_star_norm),
                ))
        return capture
