import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scaleplan.estimators import EstimatorModel, Kind

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_model(kind: Kind, rng: np.random.Generator, m3_sign: str = "any") -> EstimatorModel:
    """Parameter draws covering the ranges the round-trip and property tests use."""
    beta = math.exp(rng.uniform(math.log(0.5), math.log(5.0)))
    c = -rng.uniform(0.05, 1.0)
    if kind is Kind.M1:
        return EstimatorModel(kind, beta=beta, c=c)
    if kind is Kind.M2:
        return EstimatorModel(kind, beta=beta, c=c, eps_inf=rng.uniform(0.0, 1.0))
    if kind is Kind.M3:
        if m3_sign == "positive" or (m3_sign == "any" and rng.random() < 0.5):
            c = rng.uniform(0.05, 1.0)
        gamma = math.exp(rng.uniform(math.log(1e-4), math.log(1e-1)))
        return EstimatorModel(kind, beta=beta, c=c, gamma=gamma)
    eps_inf = rng.uniform(0.01, 1.0)
    span = rng.uniform(0.1, 3.0)
    alpha = math.exp(rng.uniform(math.log(0.1), math.log(3.0)))
    return EstimatorModel(kind, beta=beta, c=c, eps_inf=eps_inf, eps_zero=eps_inf + span, alpha=alpha)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


LANE_KEEPING = EstimatorModel(Kind.M2, beta=1.422, c=-0.413, eps_inf=0.5457)
TURNING = EstimatorModel(Kind.M3, beta=1.365, c=0.110, gamma=0.0004)


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, name: str, ok: bool, detail: str, seconds: float, budget: float) -> None:
    """Print and remember one pass/fail line for the acceptance summary."""
    status = "PASS" if ok and seconds < budget else "FAIL"
    line = f"[{status}] #{number:>2} {name}: {detail} ({seconds:.2f}s, budget {budget:g}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
