import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import LANE_KEEPING, TURNING, random_model
from scaleplan.errors import DegenerateTarget, InvalidParams, UnreachableTarget
from scaleplan.estimators import (
    EstimatorModel,
    Kind,
    asymptote,
    evaluate,
    evaluate_with_jacobian,
    initial_value,
    invert,
    m4_residual,
)

mpmath.mp.dps = 40


def mp_value(model, x):
    """High-precision oracle: closed forms in mpmath, M4 via mpmath's own root finder."""
    x = mpmath.mpf(x)
    b, c = mpmath.mpf(model.beta), mpmath.mpf(model.c)
    if model.kind is Kind.M1:
        return b * x**c
    if model.kind is Kind.M2:
        return mpmath.mpf(model.eps_inf) + b * x**c
    if model.kind is Kind.M3:
        return b * (1 / x + mpmath.mpf(model.gamma)) ** c
    e_inf, e0, a = mpmath.mpf(model.eps_inf), mpmath.mpf(model.eps_zero), mpmath.mpf(model.alpha)
    g = lambda y: (y - e_inf) - (e0 - y) ** a * b * x**c
    return mpmath.findroot(g, (e_inf, e0), solver="anderson")


# -- spot values at published fit parameters ----------------------------------------


def test_m1_unit_size():
    assert evaluate(EstimatorModel(Kind.M1, beta=1.0, c=-1.0), 1.0) == 1.0


def test_lane_keeping_values():
    assert evaluate(LANE_KEEPING, 16) == pytest.approx(float(mp_value(LANE_KEEPING, 16)), rel=1e-14)
    assert evaluate(LANE_KEEPING, 16) == pytest.approx(0.998, abs=5e-4)
    assert evaluate(LANE_KEEPING, 8192) == pytest.approx(0.580, abs=5e-4)


def test_turning_values():
    assert evaluate(TURNING, 16) == pytest.approx(float(mp_value(TURNING, 16)), rel=1e-14)
    assert evaluate(TURNING, 16) == pytest.approx(1.007, abs=5e-4)


def test_asymptotes():
    assert asymptote(LANE_KEEPING) == 0.5457
    assert asymptote(EstimatorModel(Kind.M1, beta=3.0, c=-0.2)) == 0.0
    assert asymptote(TURNING) == pytest.approx(1.365 * 0.0004**0.110, rel=1e-14)
    assert asymptote(TURNING) == pytest.approx(0.577, abs=1e-3)


def test_lane_keeping_inverse():
    x = invert(LANE_KEEPING, 0.7)
    oracle = ((0.7 - 0.5457) / 1.422) ** (1 / -0.413)
    assert x == pytest.approx(oracle, rel=1e-12)
    assert x == pytest.approx(216.5, abs=0.05)


def test_inverse_below_floor_unreachable():
    with pytest.raises(UnreachableTarget):
        invert(LANE_KEEPING, 0.54)


def test_inverse_above_zero_data_limit_degenerate():
    m4 = EstimatorModel(Kind.M4, beta=1.0, c=-0.5, eps_inf=0.2, eps_zero=1.0, alpha=0.5)
    with pytest.raises(DegenerateTarget):
        invert(m4, 1.0)


@pytest.mark.parametrize("kind", list(Kind))
def test_inverse_at_unit_size(kind):
    model = random_model(kind, np.random.default_rng(3), m3_sign="positive")
    assert invert(model, evaluate(model, 1.0)) == pytest.approx(1.0, rel=1e-6 if kind is Kind.M4 else 1e-12)


# -- M4 solver against an independent root finder ---------------------------


def test_m4_matches_mpmath(rng):
    for _ in range(40):
        model = random_model(Kind.M4, rng)
        x = math.exp(rng.uniform(0, math.log(1e6)))
        assert evaluate(model, x) == pytest.approx(float(mp_value(model, x)), rel=1e-12, abs=1e-14)


def test_m4_residual_zero_at_root(rng):
    model = random_model(Kind.M4, rng)
    for x in (1.0, 16.0, 1e4):
        y = evaluate(model, x)
        assert abs(m4_residual(model, y, x)) < 1e-12


@given(seed=st.integers(0, 2**32 - 1), log_x=st.floats(-5, 25))
def test_m4_bracket_sign_change(seed, log_x):
    model = random_model(Kind.M4, np.random.default_rng(seed))
    x = math.exp(log_x)
    assert m4_residual(model, model.eps_inf, x) < 0 < m4_residual(model, model.eps_zero, x)


# -- Jacobians vs central finite differences --------------------------------


@pytest.mark.parametrize("kind", list(Kind))
def test_jacobian_matches_finite_differences(kind, rng):
    x = np.geomspace(16, 8192, 10)
    for _ in range(5):
        model = random_model(kind, rng)
        y, jac = evaluate_with_jacobian(model, x)
        np.testing.assert_allclose(y, evaluate(model, x), rtol=1e-14)
        v = model.vector()
        for j in range(len(v)):
            h = 1e-6 * max(abs(v[j]), 1e-3)
            up, dn = v.copy(), v.copy()
            up[j] += h
            dn[j] -= h
            fd = (evaluate(EstimatorModel.from_vector(kind, up), x) - evaluate(EstimatorModel.from_vector(kind, dn), x)) / (2 * h)
            np.testing.assert_allclose(jac[:, j], fd, rtol=1e-5, atol=1e-9)


# -- properties -------------------------------------------------------------


@pytest.mark.parametrize("kind", list(Kind))
def test_round_trip_property(kind, rng):
    tol = 1e-6 if kind is Kind.M4 else 1e-9
    for _ in range(300):
        model = random_model(kind, rng)
        x = math.exp(rng.uniform(0, math.log(1e6)))
        y = evaluate(model, x)
        if not initial_value(model) != y != asymptote(model):
            continue  # saturated in floating point
        assert abs(invert(model, y) - x) / x < tol


@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(list(Kind)))
def test_strictly_decreasing(seed, kind):
    # M3 is decreasing only for c > 0; negative c yields an increasing curve
    model = random_model(kind, np.random.default_rng(seed), m3_sign="positive")
    y = evaluate(model, np.geomspace(1, 1e4, 40))
    assert np.all(np.diff(y) < 0)


@given(
    beta=st.floats(0.5, 5.0),
    c=st.floats(-1.0, -0.5),
    eps_inf=st.floats(0.1, 1.0),
    span=st.floats(0.1, 3.0),
    alpha=st.floats(0.1, 3.0),
    kind=st.sampled_from([Kind.M2, Kind.M3, Kind.M4]),
)
def test_limit_is_asymptote(beta, c, eps_inf, span, alpha, kind):
    # exponents steep enough that 1e12 hours is effectively infinite data
    if kind is Kind.M2:
        model = EstimatorModel(kind, beta=beta, c=c, eps_inf=eps_inf)
    elif kind is Kind.M3:
        model = EstimatorModel(kind, beta=beta, c=-c, gamma=eps_inf / 10)
    else:
        model = EstimatorModel(kind, beta=beta, c=c, eps_inf=eps_inf, eps_zero=eps_inf + span, alpha=alpha)
    floor = asymptote(model)
    assert abs(evaluate(model, 1e12) - floor) < 1e-3 * floor


def test_m3_negative_c_increases():
    model = EstimatorModel(Kind.M3, beta=1.0, c=-0.3, gamma=0.01)
    y = evaluate(model, np.geomspace(1, 1e4, 20))
    assert np.all(np.diff(y) > 0)
    assert initial_value(model) == 0.0


# -- construction and serialization -----------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind=Kind.M1, beta=-1.0, c=-0.5),
        dict(kind=Kind.M1, beta=1.0, c=0.5),
        dict(kind=Kind.M2, beta=1.0, c=-0.5, eps_inf=-0.1),
        dict(kind=Kind.M3, beta=1.0, c=0.0, gamma=0.1),
        dict(kind=Kind.M3, beta=1.0, c=0.5, gamma=0.0),
        dict(kind=Kind.M4, beta=1.0, c=-0.5, eps_inf=0.5, eps_zero=0.4, alpha=1.0),
        dict(kind=Kind.M4, beta=1.0, c=-0.5, eps_inf=0.1, eps_zero=0.4, alpha=0.0),
    ],
)
def test_constraints_rejected_eagerly(kwargs):
    with pytest.raises(InvalidParams):
        EstimatorModel(**kwargs)


def test_hours_must_be_positive():
    with pytest.raises(InvalidParams):
        evaluate(LANE_KEEPING, 0.0)


@pytest.mark.parametrize("kind", list(Kind))
def test_json_round_trip_bit_exact(kind, rng):
    model = random_model(kind, rng)
    doc = json.loads(json.dumps(model.to_dict()))
    back = EstimatorModel.from_dict(doc)
    assert back == model
    assert doc["constraint_version"] == 1


def test_arity():
    assert [k.arity for k in Kind] == [2, 3, 3, 5]
    assert Kind.parse("m3") is Kind.M3
