"""Open-loop trajectory metrics and closed-loop distance between failures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, InvalidParams, ShapeError

HORIZON = 15
DT = 0.2
MISS_THRESHOLD = 2.0


def as_trajectory(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"trajectory must have shape (T, 2), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ShapeError("trajectory is empty")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("trajectory has non-finite coordinates")
    return arr


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred, truth = as_trajectory(pred), as_trajectory(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"trajectory lengths differ: {len(pred)} vs {len(truth)}")
    return pred, truth


def ade(pred, truth) -> float:
    """Mean Euclidean distance over all time steps, in meters."""
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.hypot(*(pred - truth).T)))


def fde(pred, truth) -> float:
    """Euclidean distance between the final points, in meters."""
    pred, truth = _pair(pred, truth)
    d = pred[-1] - truth[-1]
    return float(np.hypot(d[0], d[1]))


def miss_rate(pairs: Sequence, threshold: float = MISS_THRESHOLD) -> float:
    """Fraction of pairs whose final error is strictly above ``threshold``."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("miss_rate needs at least one trajectory pair")
    misses = sum(fde(p, t) > threshold for p, t in pairs)
    return misses / len(pairs)


def batch_metrics(pred: np.ndarray, truth: np.ndarray, threshold: float = MISS_THRESHOLD) -> dict[str, float]:
    """ADE/FDE/MR averaged over a stacked ``(N, T, 2)`` batch."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise ShapeError(f"expected matching (N, T, 2) arrays, got {pred.shape} and {truth.shape}")
    if pred.shape[0] == 0:
        raise EmptyInput("empty batch")
    dist = np.hypot(pred[..., 0] - truth[..., 0], pred[..., 1] - truth[..., 1])
    final = dist[:, -1]
    return {
        "ade": float(dist.mean(axis=1).mean()),
        "fde": float(final.mean()),
        "mr": float(np.mean(final > threshold)),
        "count": int(pred.shape[0]),
    }


@dataclass(frozen=True)
class RunLog:
    scenario: str
    total_km: float
    failures: int

    def __post_init__(self) -> None:
        if not self.total_km >= 0:
            raise InvalidParams(f"total distance must be >= 0, got {self.total_km}")
        if self.failures < 0:
            raise InvalidParams(f"failure count must be >= 0, got {self.failures}")


@dataclass(frozen=True)
class MDBF:
    km: float
    total_km: float
    failures: int
    censored: bool

    def to_dict(self) -> dict:
        return {
            "mdbf_km": self.km,
            "total_km": self.total_km,
            "failures": self.failures,
            "no_failure": self.censored,
            "pooling": "ratio-of-sums",
        }


def mdbf(logs: Iterable[RunLog]) -> MDBF:
    """Pooled distance per failure across runs.

    With no failures at all the value is a lower bound equal to the total
    distance and ``censored`` is set.
    """
    logs = list(logs)
    if not logs:
        raise EmptyInput("mdbf needs at least one run log")
    total = float(sum(l.total_km for l in logs))
    failures = int(sum(l.failures for l in logs))
    if failures == 0:
        return MDBF(km=total, total_km=total, failures=0, censored=True)
    return MDBF(km=total / failures, total_km=total, failures=failures, censored=False)
