import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from finslerflow.charts import (
    CHART_X,
    CHART_Z,
    ChartId,
    PhaseState,
    ambient_of,
    base_xyz,
    chart_of,
    conversion_jacobian,
    convert,
    phase_distance,
    phi_z_of,
    sphere_distance,
    wrap_angle,
    wrap_pi,
)


def test_phase_state_wraps_phi():
    s = PhaseState(ChartId.ZPOLAR, 0.1, 7.0, 0.0, 1.0)
    assert 0.0 <= s.phi < 2 * np.pi
    assert np.isclose(s.phi, 7.0 - 2 * np.pi)


def test_phase_state_rejects_bad_latitude():
    with pytest.raises(ValueError):
        PhaseState(ChartId.ZPOLAR, 2.0, 0.0, 0.0, 1.0)


@given(
    st.floats(-1.4, 1.4),
    st.floats(0.0, 2 * np.pi),
    st.floats(-3.0, 3.0),
    st.floats(-3.0, 3.0),
)
@settings(max_examples=60, deadline=None)
def test_chart_roundtrip_identity(theta, phi, pt, pf):
    # the identity holds away from both chart-pole pairs; stay off the
    # x-axis poles (theta ~ 0, phi ~ 0 or pi) where the x-chart degenerates
    assume(abs(np.cos(theta) * np.cos(phi)) < 0.995)
    st4 = np.array([[theta, phi, pt, pf]])
    out = convert(convert(st4, np.array([CHART_Z]), CHART_X), np.array([CHART_X]), CHART_Z)[0]
    assert abs(out[0] - theta) < 1e-12
    assert abs(wrap_pi(out[1] - phi)) < 1e-12
    assert abs(out[2] - pt) < 1e-12
    assert abs(out[3] - pf) < 1e-12


def test_ambient_pairing_is_chart_invariant():
    rng = np.random.default_rng(0)
    states = np.column_stack(
        [
            rng.uniform(-1.2, 1.2, 30),
            rng.uniform(0, 2 * np.pi, 30),
            rng.normal(size=30),
            rng.normal(size=30),
        ]
    )
    charts = np.zeros(30, dtype=int)
    x, u = ambient_of(states, charts)
    # u is tangent and reproduces the covector components in the other chart
    assert np.max(np.abs(np.sum(x * u, axis=1))) < 1e-12
    xs = convert(states, charts, CHART_X)
    x2, u2 = ambient_of(xs, np.ones(30, dtype=int))
    assert np.max(np.abs(x - x2)) < 1e-12
    assert np.max(np.abs(u - u2)) < 1e-12


def test_chart_of_inverts_ambient_of():
    states = np.array([[0.4, 1.0, 0.3, -0.7], [-0.9, 5.0, -1.0, 0.2]])
    charts = np.array([CHART_Z, CHART_X])
    x, u = ambient_of(states, charts)
    back_z = chart_of(x[:1], u[:1], CHART_Z)
    back_x = chart_of(x[1:], u[1:], CHART_X)
    assert np.allclose(back_z[0], states[0], atol=1e-13)
    assert np.allclose(back_x[0], states[1], atol=1e-13)


def test_conversion_jacobian_matches_finite_differences():
    state = np.array([0.9, 2.0, 0.5, -0.3])
    jac = conversion_jacobian(state, CHART_Z, CHART_X)
    fd = np.zeros((4, 4))
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        plus = convert((state + e)[None, :], np.array([CHART_Z]), CHART_X)[0]
        minus = convert((state - e)[None, :], np.array([CHART_Z]), CHART_X)[0]
        d = (plus - minus) / (2 * h)
        d[1] = wrap_pi(plus[1] - minus[1]) / (2 * h)
        fd[:, j] = d
    assert np.max(np.abs(jac - fd)) < 1e-8


def test_conversion_jacobian_orientation_positive():
    # base block orientation is preserved so transverse frames stay coherent
    state = np.array([1.05, 0.3, 0.2, 0.6])
    jac = conversion_jacobian(state, CHART_Z, CHART_X)
    assert np.linalg.det(jac) > 0.0
    assert np.linalg.det(jac[:2, :2]) > 0.0


def test_phi_z_of_cross_chart():
    states = np.array([[0.3, 1.2, 0.0, 1.0]])
    xs = convert(states, np.array([CHART_Z]), CHART_X)
    assert abs(phi_z_of(xs, np.array([CHART_X]))[0] - 1.2) < 1e-12


def test_phase_distance_wraps_longitude():
    a = np.array([[0.0, 6.2, 0.0, 1.0]])
    b = np.array([0.0, 0.1, 0.0, 1.0])
    d = phase_distance(a, np.array([CHART_Z]), b, CHART_Z)[0]
    assert d < 0.2


def test_sphere_distance_and_base_xyz():
    x1 = base_xyz(0.0, 0.0)
    x2 = base_xyz(0.0, np.pi)
    assert abs(sphere_distance(x1, x2) - np.pi) < 1e-14
    assert abs(wrap_angle(-0.1) - (2 * np.pi - 0.1)) < 1e-14
