"""Training budget: epochs per dataset size, cosine annealing, LR scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidExponent, InvalidParams, OutOfRange

BASE_EPOCHS = 2
LARGEST_EXPONENT = 13
BASE_LR = 0.001
BASE_BATCH = 1024
SAMPLES_PER_HOUR = 36_000  # 10 Hz frames


def epochs(k: float, m: int = BASE_EPOCHS, l: int = LARGEST_EXPONENT) -> int:
    """``m * (1 + l - k)`` epochs for a ``2**k``-hour dataset.

    Non-integer ``k`` (sizes that are not powers of two) rounds the epoch
    count up.
    """
    if m < 1:
        raise InvalidParams(f"base epochs m must be >= 1, got {m}")
    if k > l:
        raise InvalidExponent(f"dataset exponent {k} exceeds the largest exponent {l}")
    if k < 0:
        raise InvalidExponent(f"dataset exponent must be >= 0, got {k}")
    if float(k).is_integer():
        return m * (1 + l - int(k))
    return math.ceil(m * (1 + l - k))


def epochs_for_hours(hours: float, m: int = BASE_EPOCHS, l: int = LARGEST_EXPONENT) -> int:
    if not hours > 0:
        raise InvalidParams(f"hours must be > 0, got {hours}")
    return epochs(math.log2(hours), m, l)


def compute_budget(
    k: float,
    samples_per_hour: float = SAMPLES_PER_HOUR,
    m: int = BASE_EPOCHS,
    l: int = LARGEST_EXPONENT,
    scheme: str = "adaptive",
) -> float:
    """Total training samples processed for a ``2**k``-hour dataset.

    ``constant_epochs`` keeps the epoch count of the smallest split (k = 0)
    for every size; ``constant_compute`` keeps that split's total sample
    budget fixed. All three schemes agree at k = 0.
    """
    if not samples_per_hour > 0:
        raise InvalidParams(f"samples_per_hour must be > 0, got {samples_per_hour}")
    if scheme == "adaptive":
        return 2.0**k * samples_per_hour * epochs(k, m, l)
    epochs(k, m, l)  # same validation as the adaptive scheme
    if scheme == "constant_epochs":
        return 2.0**k * samples_per_hour * epochs(0, m, l)
    if scheme == "constant_compute":
        return samples_per_hour * epochs(0, m, l)
    raise InvalidParams(f"unknown compute scheme {scheme!r}")


def scale_lr(batch_size: int, base_lr: float = BASE_LR, base_batch: int = BASE_BATCH) -> float:
    """Initial learning rate scaled linearly with the effective batch size."""
    if batch_size <= 0:
        raise InvalidParams(f"batch_size must be > 0, got {batch_size}")
    return base_lr * batch_size / base_batch


def total_steps(n_epochs: int, samples: int, batch_size: int) -> int:
    """Optimizer steps with the last partial batch of every epoch dropped."""
    if batch_size <= 0:
        raise InvalidParams(f"batch_size must be > 0, got {batch_size}")
    return n_epochs * (int(samples) // batch_size)


@dataclass(frozen=True)
class ScheduleSpec:
    k: float
    eta_max: float
    total_steps: int
    m: int = BASE_EPOCHS
    l: int = LARGEST_EXPONENT
    eta_min: float = 0.0
    batch_size: int = BASE_BATCH

    def __post_init__(self) -> None:
        if self.k > self.l:
            raise InvalidExponent(f"k={self.k} exceeds l={self.l}")
        if self.m < 1:
            raise InvalidParams("m must be >= 1")
        if not (self.eta_max > self.eta_min >= 0):
            raise InvalidParams("need eta_max > eta_min >= 0")
        if self.total_steps < 1:
            raise InvalidParams("total_steps must be >= 1")
        if self.batch_size < 1:
            raise InvalidParams("batch_size must be >= 1")

    @classmethod
    def for_dataset(
        cls,
        k: float,
        batch_size: int = BASE_BATCH,
        samples_per_hour: float = SAMPLES_PER_HOUR,
        m: int = BASE_EPOCHS,
        l: int = LARGEST_EXPONENT,
    ) -> "ScheduleSpec":
        n_epochs = epochs(k, m, l)
        samples = int(round(2.0**k * samples_per_hour))
        return cls(
            k=k,
            eta_max=scale_lr(batch_size),
            total_steps=total_steps(n_epochs, samples, batch_size),
            m=m,
            l=l,
            batch_size=batch_size,
        )


def lr_at(spec: ScheduleSpec, step: int) -> float:
    """Cosine-annealed learning rate at ``step``."""
    if not 0 <= step <= spec.total_steps:
        raise OutOfRange(f"step {step} outside [0, {spec.total_steps}]")
    if step == 0:
        return spec.eta_max
    if step == spec.total_steps:
        return spec.eta_min
    cos = math.cos(math.pi * step / spec.total_steps)
    return spec.eta_min + 0.5 * (spec.eta_max - spec.eta_min) * (1.0 + cos)


def lr_table(spec: ScheduleSpec, stride: int = 1) -> list[tuple[int, float]]:
    """``(step, lr)`` rows every ``stride`` steps, always including the last step."""
    if stride < 1:
        raise InvalidParams("stride must be >= 1")
    steps = list(range(0, spec.total_steps + 1, stride))
    if steps[-1] != spec.total_steps:
        steps.append(spec.total_steps)
    return [(s, lr_at(spec, s)) for s in steps]
