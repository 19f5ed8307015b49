"""Quantile-based label denoising.

Every training sample is scored by its pixel-wise error rate under the
current model; samples strictly above the nearest-rank quantile of the score
distribution (default 97.5th percentile) are dropped before retraining.
An alternate mode zeroes the loss weight of the highest-error pixels instead
of dropping whole samples.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyListError, ShapeMismatchError, UnscoredRecordError

__all__ = [
    "ErrorScore",
    "DenoiseConfig",
    "pixel_error_rate",
    "quantile_threshold",
    "filter_dataset",
    "pixel_weight_map",
]


@dataclass
class ErrorScore:
    sample_id: str
    error_rate: float
    evaluated_pixels: int


@dataclass
class DenoiseConfig:
    quantile: float = 0.975
    mode: str = "drop_samples"  # or "downweight_pixels"
    ignore_index: int = -1

    def __post_init__(self):
        if not 0.0 < self.quantile < 1.0:
            raise ValueError(f"quantile must be in (0,1), got {self.quantile}")
        if self.mode not in ("drop_samples", "downweight_pixels"):
            raise ValueError(f"unknown mode {self.mode!r}")


def pixel_error_rate(pred, gt, ignore_index: int = -1) -> float:
    """Fraction of non-ignored pixels where prediction and ground truth differ.

    All pixels ignored -> 0 by convention.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs gt {gt.shape}")
    valid = gt != ignore_index
    n = int(valid.sum())
    if n == 0:
        return 0.0
    return float(np.count_nonzero(pred[valid] != gt[valid])) / n


def quantile_threshold(errors, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*N)-th smallest value (1-indexed)."""
    errors = list(errors)
    if not errors:
        raise EmptyListError("quantile of empty list")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0,1), got {q}")
    rank = math.ceil(q * len(errors))
    return sorted(errors)[rank - 1]


def filter_dataset(records, config: DenoiseConfig):
    """Keep records with error_rate <= threshold; drop strictly greater.

    Original order is preserved among kept records.
    """
    records = list(records)
    for r in records:
        if getattr(r, "error_rate", None) is None:
            raise UnscoredRecordError(f"record {getattr(r, 'sample_id', r)!r} has no error score")
    thresh = quantile_threshold([r.error_rate for r in records], config.quantile)
    return [r for r in records if r.error_rate <= thresh]


def pixel_weight_map(per_pixel_errors, q: float) -> np.ndarray:
    """0/1 loss weights: 0 where the pixel error strictly exceeds the q quantile."""
    errs = np.asarray(per_pixel_errors, dtype=np.float64)
    thresh = quantile_threshold(errs.reshape(-1).tolist(), q)
    return (errs <= thresh).astype(np.float64)
