import numpy as np
import pytest

from finslerflow.models import (
    TorusModelSpec,
    conjugacy_invariants,
    conjugacy_verdict,
    deform_to_closed,
    model_flow,
    model_minimal_period,
    rp3_distance,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        TorusModelSpec(0.3, 0.7)  # a < b
    with pytest.raises(ValueError):
        TorusModelSpec(0.8, 0.1)  # a + b != 1
    spec = TorusModelSpec.from_rotation_angle(0.35)
    assert spec.a == pytest.approx(0.65)
    assert spec.b == pytest.approx(0.35)


def test_model_flow_half_everything_closes_at_2pi():
    spec = TorusModelSpec.from_rotation_angle(0.5)
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = rng.normal(size=4)
        p /= np.linalg.norm(p)
        assert rp3_distance(model_flow(spec, 2 * np.pi, p), p) < 1e-12


def test_model_flow_block_periods():
    spec = TorusModelSpec.from_rotation_angle(1 / 3)
    e1 = np.array([1.0, 0, 0, 0])
    e4 = np.array([0, 0, 0, 1.0])
    assert rp3_distance(model_flow(spec, np.pi / spec.a, e1), e1) < 1e-12
    assert rp3_distance(model_flow(spec, np.pi / spec.b, e4), e4) < 1e-12
    # strictly smaller times do not close (mod the antipode)
    assert rp3_distance(model_flow(spec, 0.77 * np.pi / spec.a, e1), e1) > 0.1


def test_measured_minimal_periods_match_analytic():
    for lam in (1 / 3, 0.35, 0.25):
        spec = TorusModelSpec.from_rotation_angle(lam)
        t1 = model_minimal_period(spec, np.array([1.0, 0, 0, 0]))
        t2 = model_minimal_period(spec, np.array([0, 0, 0, 1.0]))
        assert abs(t1 - np.pi / spec.a) < 1e-9
        assert abs(t2 - np.pi / spec.b) < 1e-9


def test_generic_orbit_has_common_period():
    spec = TorusModelSpec.from_rotation_angle(1 / 3)
    p = np.array([0.5, 0.5, 0.5, 0.5])
    t = model_minimal_period(spec, p, t_max=6.3 * np.pi)
    assert abs(t - 6 * np.pi) < 1e-9


def test_conjugacy_invariants_values():
    assert conjugacy_invariants(0.5) == pytest.approx((2 * np.pi, 2 * np.pi))
    assert conjugacy_invariants(1 / 3) == pytest.approx((1.5 * np.pi, 3 * np.pi))
    p1, p2 = conjugacy_invariants(0.35)
    assert p1 == pytest.approx(np.pi / 0.65)
    assert p2 == pytest.approx(np.pi / 0.35)
    # reciprocal identity at model level
    for lam in (0.5, 1 / 3, 0.35, 0.123):
        a, b = conjugacy_invariants(lam)
        assert 1 / a + 1 / b == pytest.approx(1 / np.pi, abs=1e-15)


def test_deform_to_closed():
    assert deform_to_closed(0.5) == 0.0
    assert deform_to_closed(0.35) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        deform_to_closed(0.7)


def test_conjugacy_verdict():
    assert conjugacy_verdict(2 * np.pi, 2 * np.pi) == "conjugate"
    assert conjugacy_verdict(4.7, 4.8) == "not conjugate"
