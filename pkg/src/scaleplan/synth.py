"""Seeded synthetic observation series and session corpora for testing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .curation import ODD_CATEGORIES, REAL_WORLD_ODD, SessionRecord
from .errors import InvalidParams
from .estimators import EstimatorModel, evaluate
from .fitting import Observation

POWER_OF_TWO_HOURS = tuple(2.0**k for k in range(4, 14))


@dataclass(frozen=True)
class SynthSpec:
    model: EstimatorModel
    hours: Sequence[float] = POWER_OF_TWO_HOURS
    sigma: float = 0.0
    seed: int = 42
    action: str = "synthetic"
    metric: str = "fde"
    backbone: str = "rn18"

    def __post_init__(self) -> None:
        grid = np.asarray(self.hours, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise InvalidParams("hours grid must be a non-empty 1-D sequence")
        if np.any(np.diff(grid) <= 0):
            raise InvalidParams("hours grid must be strictly increasing")
        if self.sigma < 0:
            raise InvalidParams("sigma must be >= 0")


def generate_series(spec: SynthSpec) -> list[Observation]:
    """Curve values with multiplicative Gaussian noise ``y * (1 + eps)``."""
    x = np.asarray(spec.hours, dtype=float)
    y = np.asarray(evaluate(spec.model, x), dtype=float)
    if spec.sigma > 0:
        rng = np.random.default_rng(spec.seed)
        y = y * (1.0 + spec.sigma * rng.standard_normal(x.size))
    return [
        Observation(hours=float(h), value=float(v), action=spec.action, metric=spec.metric, backbone=spec.backbone)
        for h, v in zip(x, y)
    ]


def parse_topology(text: str) -> float:
    """``isolated`` or ``chained(p)`` / ``chained:p`` -> link probability."""
    text = text.strip().lower()
    if text == "isolated":
        return 0.0
    for prefix, suffix in (("chained(", ")"), ("chained:", "")):
        if text.startswith(prefix) and text.endswith(suffix):
            value = float(text[len(prefix) : len(text) - len(suffix)])
            if not 0 <= value <= 1:
                raise InvalidParams(f"chain probability must be in [0, 1], got {value}")
            return value
    raise InvalidParams(f"unknown topology {text!r}; use 'isolated' or 'chained(p)'")


def generate_sessions(
    n: int,
    odd_targets: Mapping[str, Mapping[str, float]] = REAL_WORLD_ODD,
    topology: str | float = "isolated",
    seed: int = 42,
    hours_range: tuple[float, float] = (0.5, 1.5),
    cells_per_session: int = 3,
) -> list[SessionRecord]:
    """Sessions with ODD labels drawn from ``odd_targets``.

    Each session owns ``cells_per_session`` private cells. Under
    ``chained(p)`` every adjacent pair ``(i, i+1)`` additionally shares one
    cell with probability ``p``.
    """
    if n <= 0:
        raise InvalidParams("n must be > 0")
    link_p = topology if isinstance(topology, float) else parse_topology(topology)
    rng = np.random.default_rng(seed)
    width = len(str(n - 1))
    hours = rng.uniform(hours_range[0], hours_range[1], size=n)
    labels = {}
    for category in ODD_CATEGORIES:
        names = list(odd_targets[category])
        probs = np.array([odd_targets[category][k] for k in names], dtype=float)
        labels[category] = [names[i] for i in rng.choice(len(names), size=n, p=probs / probs.sum())]
    links = rng.random(max(n - 1, 0)) < link_p
    sessions = []
    for i in range(n):
        cells = {f"cell-{i:0{width}d}-{j}" for j in range(cells_per_session)}
        if i > 0 and links[i - 1]:
            cells.add(f"link-{i - 1:0{width}d}")
        if i < n - 1 and links[i]:
            cells.add(f"link-{i:0{width}d}")
        sessions.append(
            SessionRecord(
                session_id=f"s{i:0{width}d}",
                cells=frozenset(cells),
                hours=float(hours[i]),
                odd={c: labels[c][i] for c in ODD_CATEGORIES},
            )
        )
    return sessions
