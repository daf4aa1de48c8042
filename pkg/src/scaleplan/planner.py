"""Data-requirement questions answered from a fitted scaling curve."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput, InvalidParams, NoEquivalence, UnreachableTarget
from .estimators import EstimatorModel, asymptote, evaluate, invert, is_decreasing

OPTIMISM_CAVEAT = (
    "extrapolated beyond the largest observed dataset size; fitted estimators "
    "have tended to under-predict the data actually required"
)


@dataclass(frozen=True)
class RequiredHours:
    hours: float
    target: float
    extrapolated: bool
    caveat: str | None = None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "hours": self.hours,
            "extrapolated": self.extrapolated,
            "caveat": self.caveat,
        }


@dataclass(frozen=True)
class ImprovementQuery:
    model: EstimatorModel
    reference_hours: float
    improvement_pct: float

    def __post_init__(self) -> None:
        if not self.reference_hours > 0:
            raise InvalidParams(f"reference_hours must be > 0, got {self.reference_hours}")
        if not 0 <= self.improvement_pct < 100:
            raise InvalidParams(f"improvement_pct must be in [0, 100), got {self.improvement_pct}")


@dataclass(frozen=True)
class EquivalenceResult:
    reference_hours: float
    equivalent_hours: float
    reduction_pct: float
    metric_value: float

    def to_dict(self) -> dict:
        return {
            "reference_hours": self.reference_hours,
            "equivalent_hours": self.equivalent_hours,
            "reduction_pct": self.reduction_pct,
            "metric_value": self.metric_value,
        }


def required_hours(model: EstimatorModel, target: float, max_observed_hours: float | None = None) -> RequiredHours:
    """Hours needed to reach ``target``, flagged when beyond the fitted range."""
    hours = invert(model, target)
    extrapolated = max_observed_hours is not None and hours > max_observed_hours
    return RequiredHours(
        hours=hours,
        target=float(target),
        extrapolated=extrapolated,
        caveat=OPTIMISM_CAVEAT if extrapolated else None,
    )


def max_improvement_pct(model: EstimatorModel, reference_hours: float) -> float:
    """Largest relative improvement (percent) any finite dataset can still deliver."""
    current = evaluate(model, reference_hours)
    return 100.0 * (1.0 - asymptote(model) / current)


def improvement_cost(query: ImprovementQuery) -> float:
    """Additional hours needed to lower the metric by ``improvement_pct`` percent.

    The improvement is multiplicative on the current curve value at
    ``reference_hours``.
    """
    model = query.model
    if not is_decreasing(model):
        raise InvalidParams("improvement_cost needs a curve that decreases with data")
    if query.improvement_pct == 0:
        return 0.0
    current = evaluate(model, query.reference_hours)
    target = current * (1.0 - query.improvement_pct / 100.0)
    ceiling = max_improvement_pct(model, query.reference_hours)
    if target <= asymptote(model):
        raise UnreachableTarget(
            f"a {query.improvement_pct:g}% improvement crosses the asymptote; "
            f"at most {ceiling:.4g}% is reachable",
            max_improvement_pct=ceiling,
        )
    return max(invert(model, target) - query.reference_hours, 0.0)


def data_equivalence(model_a: EstimatorModel, model_b: EstimatorModel, reference_hours: float) -> EquivalenceResult:
    """Hours model B needs to match model A's metric at ``reference_hours``."""
    value = evaluate(model_a, reference_hours)
    try:
        equivalent = invert(model_b, value)
    except (UnreachableTarget, ValueError) as exc:
        raise NoEquivalence(f"model B never reaches {value:g}: {exc}") from None
    return EquivalenceResult(
        reference_hours=float(reference_hours),
        equivalent_hours=equivalent,
        reduction_pct=100.0 * (1.0 - equivalent / reference_hours),
        metric_value=value,
    )


def normalize(values: Sequence[float]) -> list[float]:
    """Divide by the series maximum so the largest entry becomes exactly 1.0."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise EmptyInput("cannot normalize an empty series")
    if np.any(~(arr > 0)) or np.any(~np.isfinite(arr)):
        raise InvalidParams("normalize expects finite positive values")
    return (arr / arr.max()).tolist()


def prediction_rows(model: EstimatorModel, label: str, cases: Sequence[tuple[float, float]]) -> list[dict]:
    """Rows comparing predicted and actual hours for ``(target, actual_hours)`` cases.

    The arrow marks whether the prediction is above (up) or below (down) the
    actual size.
    """
    rows = []
    for target, actual in cases:
        predicted = invert(model, target)
        arrow = "↑" if predicted > actual else "↓" if predicted < actual else "="
        rows.append(
            {
                "action": label,
                "target": float(target),
                "actual_hours": float(actual),
                "predicted_hours": predicted,
                "direction": arrow,
            }
        )
    return rows


def format_prediction_table(rows: Sequence[dict]) -> str:
    lines = [f"{'Action':<28}{'FDE':>8}{'Actual':>10}{'Pred.':>12}"]
    for r in rows:
        pred = "inf" if math.isinf(r["predicted_hours"]) else f"{r['predicted_hours']:,.0f}"
        lines.append(
            f"{r['action']:<28}{r['target']:>8.3f}{r['actual_hours']:>10,.0f}{pred:>10} {r['direction']}"
        )
    return "\n".join(lines)
