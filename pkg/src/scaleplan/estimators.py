"""Scaling-law estimator families M1..M4.

The four families map training-set size ``x`` (hours) to a metric ``y``:

* M1: ``y = beta * x**c``
* M2: ``y - eps_inf = beta * x**c``
* M3: ``y = beta * (1/x + gamma)**c``
* M4: ``y - eps_inf = (eps_zero - y)**alpha * beta * x**c``

M4 is implicit in ``y`` and is evaluated by bisection; its inverse is closed
form because ``x`` can be isolated exactly once ``y`` is known. Powers are
taken in log space so extreme sizes do not overflow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DegenerateTarget, InvalidParams, NumericFailure, UnreachableTarget

CONSTRAINT_VERSION = 1
M4_MAX_ITER = 200
M4_TOL = 1e-12


class Kind(str, enum.Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"

    @property
    def arity(self) -> int:
        return len(PARAM_NAMES[self])

    @classmethod
    def parse(cls, value: "str | Kind") -> "Kind":
        if isinstance(value, Kind):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise InvalidParams(f"unknown estimator kind {value!r}") from None


PARAM_NAMES: dict[Kind, tuple[str, ...]] = {
    Kind.M1: ("beta", "c"),
    Kind.M2: ("beta", "c", "eps_inf"),
    Kind.M3: ("beta", "c", "gamma"),
    Kind.M4: ("beta", "c", "eps_inf", "eps_zero", "alpha"),
}

_ALL_PARAMS = ("beta", "c", "eps_inf", "gamma", "eps_zero", "alpha")


@dataclass(frozen=True)
class EstimatorModel:
    """An estimator kind plus its parameters.

    Only the parameters listed in ``PARAM_NAMES[kind]`` may be set; the others
    stay ``None``. Constraints are checked at construction.
    """

    kind: Kind
    beta: float
    c: float
    eps_inf: float | None = None
    gamma: float | None = None
    eps_zero: float | None = None
    alpha: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        names = PARAM_NAMES[self.kind]
        for name in _ALL_PARAMS:
            value = getattr(self, name)
            if name in names:
                if value is None:
                    raise InvalidParams(f"{self.kind.value} requires parameter {name}")
                value = float(value)
                if not math.isfinite(value):
                    raise InvalidParams(f"{name} must be finite, got {value}")
                object.__setattr__(self, name, value)
            elif value is not None:
                raise InvalidParams(f"{self.kind.value} does not take parameter {name}")
        self._check_constraints()

    def _check_constraints(self) -> None:
        kind = self.kind
        if self.beta <= 0:
            raise InvalidParams(f"beta must be > 0, got {self.beta}")
        if kind is Kind.M3:
            # sign of c is free for M3; c == 0 is a constant curve
            if self.c == 0:
                raise InvalidParams("M3 exponent c must be non-zero")
            if self.gamma <= 0:
                raise InvalidParams(f"gamma must be > 0, got {self.gamma}")
            return
        if self.c >= 0:
            raise InvalidParams(f"{kind.value} exponent c must be < 0, got {self.c}")
        if kind is Kind.M2 and self.eps_inf < 0:
            raise InvalidParams(f"eps_inf must be >= 0, got {self.eps_inf}")
        if kind is Kind.M4:
            if not (self.eps_zero > self.eps_inf > 0):
                raise InvalidParams(
                    f"M4 requires eps_zero > eps_inf > 0, got eps_zero={self.eps_zero}, "
                    f"eps_inf={self.eps_inf}"
                )
            if self.alpha <= 0:
                raise InvalidParams(f"alpha must be > 0, got {self.alpha}")

    @property
    def params(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in PARAM_NAMES[self.kind]}

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES[self.kind]], dtype=float)

    @classmethod
    def from_vector(cls, kind: Kind | str, values) -> "EstimatorModel":
        kind = Kind.parse(kind)
        values = [float(v) for v in values]
        if len(values) != kind.arity:
            raise InvalidParams(f"{kind.value} expects {kind.arity} parameters, got {len(values)}")
        return cls(kind, **dict(zip(PARAM_NAMES[kind], values)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "params": self.params,
            "constraint_version": CONSTRAINT_VERSION,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EstimatorModel":
        try:
            kind = Kind.parse(data["kind"])
            params = dict(data["params"])
        except (KeyError, TypeError) as exc:
            raise InvalidParams(f"malformed model document: {exc}") from None
        version = data.get("constraint_version", CONSTRAINT_VERSION)
        if version != CONSTRAINT_VERSION:
            raise InvalidParams(f"unsupported constraint_version {version}")
        return cls(kind, **params)

    def __call__(self, hours):
        return evaluate(self, hours)


def _log_hours(hours) -> np.ndarray:
    x = np.asarray(hours, dtype=float)
    if np.any(~(x > 0)):
        raise InvalidParams("hours must be > 0")
    return np.log(x)


def _solve_m4(model: EstimatorModel, log_x: np.ndarray) -> np.ndarray:
    """Root of ``(y - eps_inf) - (eps_zero - y)**alpha * beta * x**c`` for each x.

    Works on ``u = y - eps_inf`` in ``(0, eps_zero - eps_inf)`` so values close
    to the floor keep their relative precision. The bracket is maintained as in
    plain bisection; a Newton step is taken whenever it lands strictly inside
    the bracket, otherwise the bracket is halved. Iteration stops when the
    update falls below a few ulps of ``u``; after ``M4_MAX_ITER`` iterations
    the bracket must be narrower than ``M4_TOL``.
    """
    span = model.eps_zero - model.eps_inf
    log_scale = math.log(model.beta) + model.c * log_x
    alpha = model.alpha
    lo = np.zeros_like(log_x)
    hi = np.full_like(log_x, span)
    u = 0.5 * (lo + hi)
    last_move = np.full_like(log_x, span)
    active = np.ones(u.shape, dtype=bool)
    for _ in range(M4_MAX_ITER):
        with np.errstate(divide="ignore", invalid="ignore"):
            gap = span - u
            pull = np.exp(alpha * np.log(gap) + log_scale)
            g = u - pull
            slope = 1.0 + alpha * pull / gap
            step = u - g / slope
        upper = g > 0
        hi = np.where(active & upper, u, hi)
        lo = np.where(active & ~upper, u, lo)
        halve = 0.5 * (lo + hi)
        # Newton only while it stays in the bracket and keeps halving its move
        use_newton = (step > lo) & (step < hi) & (np.abs(step - u) < 0.5 * last_move)
        nxt = np.where(use_newton, step, halve)
        settled = np.abs(g) <= 4 * np.spacing(np.maximum(u, pull))
        settled |= (halve <= lo) | (halve >= hi)
        last_move = np.where(active, np.abs(nxt - u), last_move)
        u = np.where(active & ~settled, nxt, u)
        active &= ~settled
        if not active.any():
            break
    else:
        if np.any(hi - lo > M4_TOL):
            raise NumericFailure("M4 root search did not converge within 200 iterations")
    return model.eps_inf + u


def evaluate(model: EstimatorModel, hours):
    """Metric value predicted at ``hours``; scalar in, scalar out."""
    log_x = _log_hours(hours)
    kind = model.kind
    if kind is Kind.M1:
        y = np.exp(math.log(model.beta) + model.c * log_x)
    elif kind is Kind.M2:
        y = model.eps_inf + np.exp(math.log(model.beta) + model.c * log_x)
    elif kind is Kind.M3:
        base = np.exp(-log_x) + model.gamma
        y = np.exp(math.log(model.beta) + model.c * np.log(base))
    else:
        y = _solve_m4(model, np.atleast_1d(log_x)).reshape(log_x.shape)
    return float(y) if np.ndim(y) == 0 else y


def evaluate_with_jacobian(model: EstimatorModel, hours: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and the Jacobian with respect to the natural parameters.

    Columns follow ``PARAM_NAMES[kind]``. For M4 the derivatives come from
    implicit differentiation of the defining equation at the bisection root.
    """
    x = np.asarray(hours, dtype=float)
    log_x = _log_hours(x)
    kind = model.kind
    if kind in (Kind.M1, Kind.M2):
        power = np.exp(math.log(model.beta) + model.c * log_x)
        cols = [power / model.beta, power * log_x]
        y = power.copy()
        if kind is Kind.M2:
            y = y + model.eps_inf
            cols.append(np.ones_like(x))
        return y, np.column_stack(cols)
    if kind is Kind.M3:
        base = np.exp(-log_x) + model.gamma
        log_base = np.log(base)
        y = np.exp(math.log(model.beta) + model.c * log_base)
        cols = [y / model.beta, y * log_base, y * model.c / base]
        return y, np.column_stack(cols)
    y = _solve_m4(model, log_x)
    gap = model.eps_zero - y
    with np.errstate(divide="ignore", invalid="ignore"):
        pull = np.exp(model.alpha * np.log(gap) + math.log(model.beta) + model.c * log_x)
        dg_dy = 1.0 + model.alpha * pull / gap
        dg = np.column_stack(
            [
                -pull / model.beta,
                -pull * log_x,
                -np.ones_like(x),
                -model.alpha * pull / gap,
                -pull * np.log(gap),
            ]
        )
        jac = -dg / dg_dy[:, None]
    jac = np.nan_to_num(jac, nan=0.0, posinf=0.0, neginf=0.0)
    return y, jac


def asymptote(model: EstimatorModel) -> float:
    """Limit of the curve as hours grow without bound."""
    if model.kind is Kind.M1:
        return 0.0
    if model.kind is Kind.M3:
        return math.exp(math.log(model.beta) + model.c * math.log(model.gamma))
    return model.eps_inf


def initial_value(model: EstimatorModel) -> float:
    """Limit of the curve as hours shrink to zero (``inf`` when unbounded)."""
    if model.kind is Kind.M4:
        return model.eps_zero
    if model.kind is Kind.M3 and model.c < 0:
        return 0.0
    return math.inf


def is_decreasing(model: EstimatorModel) -> bool:
    return not (model.kind is Kind.M3 and model.c < 0)


def invert(model: EstimatorModel, target: float) -> float:
    """Hours at which the curve reaches ``target``.

    Raises ``UnreachableTarget`` when the target lies beyond the asymptote and
    ``DegenerateTarget`` when it lies at or beyond the small-data limit.
    """
    y = float(target)
    if not math.isfinite(y):
        raise InvalidParams(f"target must be finite, got {target}")
    floor = asymptote(model)
    start = initial_value(model)
    decreasing = is_decreasing(model)
    if (decreasing and y <= floor) or (not decreasing and y >= floor):
        raise UnreachableTarget(
            f"target {y:g} is not reachable with finite data (asymptote {floor:g})"
        )
    if (decreasing and y >= start) or (not decreasing and y <= start):
        raise DegenerateTarget(f"target {y:g} is at or beyond the zero-data limit {start:g}")

    kind, beta, c = model.kind, model.beta, model.c
    if kind is Kind.M1:
        log_x = (math.log(y) - math.log(beta)) / c
    elif kind is Kind.M2:
        log_x = (math.log(y - model.eps_inf) - math.log(beta)) / c
    elif kind is Kind.M3:
        inv_x = math.exp((math.log(y) - math.log(beta)) / c) - model.gamma
        if inv_x <= 0:
            raise UnreachableTarget(f"target {y:g} is not reachable with finite data")
        log_x = -math.log(inv_x)
    else:
        numer = math.log(y - model.eps_inf)
        denom = model.alpha * math.log(model.eps_zero - y) + math.log(beta)
        log_x = (numer - denom) / c
    try:
        return math.exp(log_x)
    except OverflowError:
        return math.inf


def m4_residual(model: EstimatorModel, y: float, hours: float) -> float:
    """Defining function of M4, increasing in ``y``; zero at the curve value."""
    if model.kind is not Kind.M4:
        raise InvalidParams("m4_residual requires an M4 model")
    pull = (model.eps_zero - y) ** model.alpha * model.beta * hours**model.c
    return (y - model.eps_inf) - pull
