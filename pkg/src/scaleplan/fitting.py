"""Constrained least-squares fitting, estimator selection and fit progression.

Every estimator is fitted in an unconstrained coordinate system: positive
parameters go through ``exp`` and the decreasing exponents of M1/M2/M4 through
``-exp``, so a damped Gauss-Newton (Levenberg-Marquardt) search never leaves
the feasible set. Each fit is the best of several seeded local searches.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import FitFailure, InsufficientData, InsufficientHeldout, InvalidParams, ScalePlanError
from .estimators import EstimatorModel, Kind, evaluate, evaluate_with_jacobian

log = logging.getLogger(__name__)

TIE_TOLERANCE = 0.05
# held-out MSEs below this fraction of the mean squared held-out value count as zero
MSE_FLOOR = 1e-12
# relative decrease of the squared residual norm below which an iteration counts as stalled
STALL_IMPROVEMENT = 1e-14
STALL_COUNT = 3


@dataclass(frozen=True)
class Observation:
    hours: float
    value: float
    action: str = ""
    metric: str = ""
    backbone: str = ""

    def __post_init__(self) -> None:
        if not (math.isfinite(self.hours) and self.hours > 0):
            raise InvalidParams(f"observation hours must be > 0, got {self.hours}")
        if not (math.isfinite(self.value) and self.value > 0):
            raise InvalidParams(f"observation value must be finite and > 0, got {self.value}")


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 8
    max_iters: int = 400
    param_tolerance: float = 1e-10
    residual_space: str = "linear"
    seed: int = 42

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise InvalidParams("n_starts must be >= 1")
        if self.max_iters < 1:
            raise InvalidParams("max_iters must be >= 1")
        if not self.param_tolerance > 0:
            raise InvalidParams("param_tolerance must be > 0")
        if self.residual_space not in ("linear", "log"):
            raise InvalidParams(f"residual_space must be 'linear' or 'log', got {self.residual_space!r}")


@dataclass(frozen=True)
class FitResult:
    model: EstimatorModel
    train_mse: float
    heldout_mse: float | None = None
    heldout_mse_std: float | None = None
    converged: bool = True
    n_train_points: int = 0
    n_restarts_converged: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train_mse": self.train_mse,
            "heldout_mse": self.heldout_mse,
            "heldout_mse_std": self.heldout_mse_std,
            "converged": self.converged,
            "n_train_points": self.n_train_points,
            "n_restarts_converged": self.n_restarts_converged,
        }


@dataclass
class SelectionReport:
    results: dict[Kind, FitResult]
    winner: Kind
    tie_break_applied: bool
    excluded: dict[Kind, str] = field(default_factory=dict)
    train_count: int = 0
    heldout_count: int = 0

    def to_dict(self) -> dict:
        return {
            "winner": self.winner.value,
            "tie_break_applied": self.tie_break_applied,
            "train_count": self.train_count,
            "heldout_count": self.heldout_count,
            "results": {k.value: r.to_dict() for k, r in self.results.items()},
            "excluded": {k.value: reason for k, reason in self.excluded.items()},
        }

    def rows(self) -> list[dict]:
        rows = []
        for kind in Kind:
            if kind in self.results:
                r = self.results[kind]
                rows.append(
                    {
                        "kind": kind.value,
                        "status": "ok",
                        "train_mse": r.train_mse,
                        "heldout_mse": r.heldout_mse,
                        "winner": kind is self.winner,
                        **{name: r.model.params.get(name) for name in _PARAM_COLUMNS},
                    }
                )
            elif kind in self.excluded:
                rows.append({"kind": kind.value, "status": self.excluded[kind]})
        return rows


_PARAM_COLUMNS = ("beta", "c", "eps_inf", "gamma", "eps_zero", "alpha")


@dataclass
class Progression:
    results: list[tuple[int, FitResult]]
    heldout_count: int
    status: str = "ok"

    def rows(self) -> list[dict]:
        rows = []
        for n, r in self.results:
            row = {"n_points": n}
            row.update(r.model.params)
            row["extrapolation_loss"] = r.heldout_mse
            row["extrapolation_loss_std"] = r.heldout_mse_std
            rows.append(row)
        return rows


def as_arrays(observations) -> tuple[np.ndarray, np.ndarray]:
    """Accept a sequence of ``Observation`` or an ``(hours, values)`` pair."""
    if isinstance(observations, tuple) and len(observations) == 2 and not isinstance(
        observations[0], Observation
    ):
        x, y = observations
    else:
        obs = list(observations)
        x = [o.hours for o in obs]
        y = [o.value for o in obs]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidParams("hours and values must be 1-D arrays of equal length")
    if np.any(~(x > 0)) or np.any(~np.isfinite(x)):
        raise InvalidParams("hours must be finite and > 0")
    if np.any(~(y > 0)) or np.any(~np.isfinite(y)):
        raise InvalidParams("values must be finite and > 0")
    return x, y


# -- reparameterization -----------------------------------------------------


def _to_raw(model: EstimatorModel) -> np.ndarray:
    k = model.kind
    if k is Kind.M1:
        return np.array([math.log(model.beta), math.log(-model.c)])
    if k is Kind.M2:
        eps = max(model.eps_inf, 1e-300)
        return np.array([math.log(model.beta), math.log(-model.c), math.log(eps)])
    if k is Kind.M3:
        return np.array([math.log(model.beta), model.c, math.log(model.gamma)])
    return np.array(
        [
            math.log(model.beta),
            math.log(-model.c),
            math.log(model.eps_inf),
            math.log(model.eps_zero - model.eps_inf),
            math.log(model.alpha),
        ]
    )


def _from_raw(kind: Kind, raw: np.ndarray) -> tuple[EstimatorModel, np.ndarray]:
    """Model at ``raw`` and d(natural)/d(raw)."""
    e = np.exp(raw)
    if kind is Kind.M1:
        model = EstimatorModel(kind, beta=e[0], c=-e[1])
        chain = np.diag([e[0], -e[1]])
    elif kind is Kind.M2:
        model = EstimatorModel(kind, beta=e[0], c=-e[1], eps_inf=e[2])
        chain = np.diag([e[0], -e[1], e[2]])
    elif kind is Kind.M3:
        model = EstimatorModel(kind, beta=e[0], c=raw[1], gamma=e[2])
        chain = np.diag([e[0], 1.0, e[2]])
    else:
        model = EstimatorModel(
            kind, beta=e[0], c=-e[1], eps_inf=e[2], eps_zero=e[2] + e[3], alpha=e[4]
        )
        chain = np.diag([e[0], -e[1], e[2], e[3], e[4]])
        chain[3, 2] = e[2]  # eps_zero moves with eps_inf
    return model, chain


def _residuals(kind: Kind, raw: np.ndarray, x: np.ndarray, y: np.ndarray, space: str):
    model, chain = _from_raw(kind, raw)
    pred, jac = evaluate_with_jacobian(model, x)
    jac = jac @ chain
    if space == "log":
        return np.log(pred) - np.log(y), jac / pred[:, None], model
    return pred - y, jac, model


# -- local optimizer --------------------------------------------------------


@dataclass
class _LocalResult:
    raw: np.ndarray
    model: EstimatorModel
    cost: float
    converged: bool


def _levenberg_marquardt(kind, raw0, x, y, config: FitConfig) -> _LocalResult | None:
    space = config.residual_space
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            r, jac, model = _residuals(kind, raw0, x, y, space)
    except ScalePlanError:
        return None
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(jac))):
        return None
    raw = raw0.copy()
    cost = float(r @ r)
    lam, nu = 1e-3, 2.0
    col_scale = np.maximum(np.sum(jac**2, axis=0), 1e-300)
    stall = 0
    converged = False
    n = len(raw)
    for _ in range(config.max_iters):
        col_scale = np.maximum(col_scale, np.sum(jac**2, axis=0))
        damping = np.sqrt(lam * col_scale)
        lhs = np.vstack([jac, np.diag(damping)])
        rhs = np.concatenate([-r, np.zeros(n)])
        step = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
        step_norm = float(np.linalg.norm(step))
        if step_norm < config.param_tolerance * (float(np.linalg.norm(raw)) + config.param_tolerance):
            converged = True
            break
        trial = raw + step
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                r_new, jac_new, model_new = _residuals(kind, trial, x, y, space)
            ok = np.all(np.isfinite(r_new)) and np.all(np.isfinite(jac_new))
        except ScalePlanError:
            ok = False
        with np.errstate(over="ignore"):
            cost_new = float(r_new @ r_new) if ok else math.inf
        lin = r + jac @ step
        predicted = cost - float(lin @ lin)
        if ok and cost_new < cost:
            rho = (cost - cost_new) / predicted if predicted > 0 else 1.0
            improvement = (cost - cost_new) / cost
            raw, r, jac, model = trial, r_new, jac_new, model_new
            cost = cost_new
            lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            stall = stall + 1 if improvement < STALL_IMPROVEMENT else 0
            if stall >= STALL_COUNT or cost == 0.0:
                converged = True
                break
        else:
            lam *= nu
            nu *= 2.0
            if lam > 1e30:
                # no descent direction left at this point
                converged = True
                break
    return _LocalResult(raw=raw, model=model, cost=cost / len(x), converged=converged)


# -- starting points --------------------------------------------------------


def _random_start(kind: Kind, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    ymin, ymax = float(y.min()), float(y.max())
    xmin, xmax = float(x.min()), float(x.max())
    spread = max(ymax - ymin, 1e-3 * ymax)
    if kind is Kind.M3:
        c = rng.uniform(-1.0, 1.0)
        while abs(c) < 1e-3:
            c = rng.uniform(-1.0, 1.0)
        gamma = math.exp(rng.uniform(math.log(0.01 / xmax), math.log(1.0 / xmin)))
        lo_base, hi_base = 1.0 / xmax + gamma, 1.0 / xmin + gamma
        beta = spread / abs(hi_base**c - lo_base**c)
        return np.array([math.log(beta), c, math.log(gamma)])
    c = rng.uniform(-1.0, -0.05)
    beta = spread / (xmin**c - xmax**c)
    raw = [math.log(beta), math.log(-c)]
    if kind is Kind.M1:
        return np.array(raw)
    eps_inf = max(rng.uniform(0.0, ymin), 1e-6 * ymin)
    raw.append(math.log(eps_inf))
    if kind is Kind.M2:
        return np.array(raw)
    eps_zero = rng.uniform(ymax, 2.0 * ymax)
    alpha = math.exp(rng.uniform(math.log(0.1), math.log(10.0)))
    raw.append(math.log(max(eps_zero - eps_inf, 1e-6 * ymax)))
    raw.append(math.log(alpha))
    return np.array(raw)


def _log_linear_start(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(intercept), float(min(slope, -1e-3))


def _heuristic_starts(kind: Kind, x, y, config: FitConfig) -> list[np.ndarray]:
    """Deterministic starts; nested families are warm-started from the simpler fit."""
    log_beta, c = _log_linear_start(x, y)
    ymin = float(y.min())
    if kind is Kind.M1:
        return [np.array([log_beta, math.log(-c)])]
    if kind is Kind.M3:
        return [np.array([log_beta, -c, math.log(0.1 / float(x.max()))])]
    starts = []
    nested_kind = Kind.M1 if kind is Kind.M2 else Kind.M2
    if len(x) >= nested_kind.arity + 1:
        nested_cfg = FitConfig(
            n_starts=max(1, config.n_starts // 2),
            max_iters=config.max_iters,
            param_tolerance=config.param_tolerance,
            residual_space=config.residual_space,
            seed=config.seed,
        )
        try:
            inner = fit(nested_kind, (x, y), nested_cfg).model
        except ScalePlanError:
            inner = None
        if inner is not None:
            if kind is Kind.M2:
                starts.append(np.array([math.log(inner.beta), math.log(-inner.c), math.log(1e-6 * ymin)]))
            else:
                eps = max(inner.eps_inf, 1e-6 * ymin)
                starts.append(
                    np.array(
                        [
                            math.log(inner.beta),
                            math.log(-inner.c),
                            math.log(eps),
                            math.log(float(y.max())),
                            math.log(1e-4),
                        ]
                    )
                )
    if kind is Kind.M2:
        starts.append(np.array([log_beta, math.log(-c), math.log(0.5 * ymin)]))
    return starts


# -- public API -------------------------------------------------------------


def _local_fits(kind: Kind, x, y, config: FitConfig) -> tuple[list[_LocalResult | None], list[_LocalResult | None]]:
    rng = np.random.default_rng(config.seed)
    random_starts = [_random_start(kind, x, y, rng) for _ in range(config.n_starts)]
    extra = [_levenberg_marquardt(kind, s, x, y, config) for s in _heuristic_starts(kind, x, y, config)]
    local = [_levenberg_marquardt(kind, s, x, y, config) for s in random_starts]
    return local, extra


def fit(kind, observations, config: FitConfig | None = None, heldout=None) -> FitResult:
    """Least-squares fit of one estimator family.

    ``heldout`` (same formats as ``observations``) adds the held-out MSE of the
    best fit and the spread of held-out MSE across converged restarts.
    """
    kind = Kind.parse(kind)
    config = config or FitConfig()
    x, y = as_arrays(observations)
    if len(x) < kind.arity + 1:
        raise InsufficientData(
            f"{kind.value} has {kind.arity} parameters and needs at least {kind.arity + 1} points, got {len(x)}"
        )
    if len(np.unique(x)) != len(x):
        raise InvalidParams("hours values must be distinct")

    local, extra = _local_fits(kind, x, y, config)
    candidates = [(r.cost, i, r) for i, r in enumerate(local + extra) if r is not None and math.isfinite(r.cost)]
    if not candidates:
        raise FitFailure(f"all {len(local) + len(extra)} local fits of {kind.value} diverged")
    best = min(candidates, key=lambda t: (t[0], t[1]))[2]

    heldout_mse = heldout_std = None
    converged = [r for r in local if r is not None and r.converged]
    if heldout is not None:
        hx, hy = as_arrays(heldout)
        heldout_mse = heldout_error(best.model, hx, hy)
        spread = [heldout_error(r.model, hx, hy) for r in converged]
        spread = [v for v in spread if math.isfinite(v)]
        heldout_std = float(np.std(spread)) if spread else 0.0
    return FitResult(
        model=best.model,
        train_mse=float(best.cost) if config.residual_space == "linear" else heldout_error(best.model, x, y),
        heldout_mse=heldout_mse,
        heldout_mse_std=heldout_std,
        converged=best.converged,
        n_train_points=len(x),
        n_restarts_converged=len(converged),
    )


def heldout_error(model: EstimatorModel, x, y) -> float:
    """Mean squared error of ``model`` on raw metric values."""
    pred = np.atleast_1d(evaluate(model, np.asarray(x, dtype=float)))
    diff = pred - np.asarray(y, dtype=float)
    return float(np.mean(diff * diff))


def _ties(a: float, b: float, floor: float) -> bool:
    if max(a, b) <= floor:
        return True
    return abs(a - b) < TIE_TOLERANCE * max(a, b)


def select(
    observations,
    train_count: int = 6,
    heldout_count: int = 2,
    kinds: Iterable = tuple(Kind),
    config: FitConfig | None = None,
) -> SelectionReport:
    """Fit each kind on the first ``train_count`` points and rank on the next ``heldout_count``.

    The lowest held-out MSE wins, except that any kind within 5 % (relative)
    of that minimum and with fewer parameters takes precedence. Kinds that
    cannot be fitted are excluded with a reason.
    """
    x, y = as_arrays(observations)
    order = np.argsort(x, kind="stable")
    if not np.array_equal(order, np.arange(len(x))):
        raise InvalidParams("observations must be sorted by ascending hours")
    if heldout_count < 1:
        raise InsufficientHeldout("selection needs at least one held-out point")
    if train_count + heldout_count > len(x):
        raise InsufficientHeldout(
            f"need {train_count} training + {heldout_count} held-out points, series has {len(x)}"
        )
    tx, ty = x[:train_count], y[:train_count]
    hx, hy = x[train_count : train_count + heldout_count], y[train_count : train_count + heldout_count]

    results: dict[Kind, FitResult] = {}
    excluded: dict[Kind, str] = {}
    for kind in sorted({Kind.parse(k) for k in kinds}, key=lambda k: k.value):
        try:
            results[kind] = fit(kind, (tx, ty), config, heldout=(hx, hy))
        except ScalePlanError as exc:
            excluded[kind] = f"{exc.code}: {exc}"
            log.info("excluding %s from selection: %s", kind.value, exc)
    if not results:
        raise FitFailure("no estimator could be fitted: " + "; ".join(excluded.values()))

    floor = MSE_FLOOR * float(np.mean(hy * hy))
    by_error = sorted(results, key=lambda k: (results[k].heldout_mse, k.arity, k.value))
    best = by_error[0]
    best_mse = results[best].heldout_mse
    tied = [k for k in by_error if _ties(results[k].heldout_mse, best_mse, floor)]
    winner = min(tied, key=lambda k: (k.arity, results[k].heldout_mse, k.value))
    return SelectionReport(
        results=results,
        winner=winner,
        tie_break_applied=winner is not best,
        excluded=excluded,
        train_count=train_count,
        heldout_count=heldout_count,
    )


def fit_progression(
    observations,
    kind=Kind.M2,
    min_points: int = 5,
    heldout_count: int = 2,
    config: FitConfig | None = None,
) -> Progression:
    """Refit on growing prefixes while scoring on a fixed tail of ``heldout_count`` points."""
    kind = Kind.parse(kind)
    x, y = as_arrays(observations)
    if heldout_count < 1:
        raise InsufficientHeldout("progression needs at least one held-out point")
    if min_points < kind.arity + 1:
        raise InsufficientData(f"min_points must be >= {kind.arity + 1} for {kind.value}")
    last = len(x) - heldout_count
    if min_points > last:
        return Progression(
            results=[],
            heldout_count=heldout_count,
            status=f"no prefix: min_points={min_points} exceeds the {max(last, 0)} points before the held-out tail",
        )
    hx, hy = x[last:], y[last:]
    results = []
    for n in range(min_points, last + 1):
        results.append((n, fit(kind, (x[:n], y[:n]), config, heldout=(hx, hy))))
    return Progression(results=results, heldout_count=heldout_count)
