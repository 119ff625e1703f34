import numpy as np
import pytest

from conftest import random_unit_states

from finslerflow.charts import CHART_Z, ChartId, PhaseState, phase_distance
from finslerflow.errors import InadmissibleAlpha, NotNormalized, ToleranceFailure
from finslerflow.flow import (
    IntegratorOptions,
    flow_endpoints,
    integrate,
    oracle_katok,
    oracle_katok_states,
    psi_map,
    run_flow,
)
from finslerflow.metrics import KatokMetric, RoundMetric, equatorial_covector


def closure_error(traj, init):
    return phase_distance(
        traj.states[-1][None, :], traj.charts[-1:], init.as_array(), int(init.chart)
    )[0]


def test_options_validation():
    with pytest.raises(ValueError):
        IntegratorOptions(rel_tol=-1.0)
    with pytest.raises(ValueError):
        IntegratorOptions(chart_switch_threshold=1.5)


def test_round_equator_closes(tight_opts):
    m = RoundMetric()
    init = PhaseState(ChartId.ZPOLAR, 0.0, 0.0, 0.0, 1.0)
    traj = integrate(m, init, 2 * np.pi, tight_opts)
    assert closure_error(traj, init) < 1e-8
    assert traj.stats.max_energy_drift < 1e-10


def test_round_meridian_crosses_poles(tight_opts):
    m = RoundMetric()
    init = PhaseState(ChartId.ZPOLAR, 0.0, 0.0, 1.0, 0.0)
    traj = integrate(m, init, 2 * np.pi, tight_opts)
    assert traj.stats.chart_switches >= 2
    assert closure_error(traj, init) < 1e-8
    assert np.max(np.abs(traj.theta_z())) > 1.4  # really went over the top


def test_integrate_requires_normalized():
    m = RoundMetric()
    with pytest.raises(NotNormalized):
        integrate(m, PhaseState(ChartId.ZPOLAR, 0.0, 0.0, 0.0, 2.0), 1.0)
    with pytest.raises(ValueError):
        integrate(m, PhaseState(ChartId.ZPOLAR, 0.0, 0.0, 0.0, 1.0), -1.0)


def test_trajectory_phi_unwrap_continuity(tight_opts):
    m = KatokMetric(0.3)
    init = equatorial_covector(m, eastward=True)
    traj = integrate(m, init, 10.0, tight_opts)
    assert np.max(np.abs(np.diff(traj.phi_unwrapped))) < np.pi
    # eastward equator advances phi at rate 1 + alpha
    assert traj.phi_unwrapped[-1] == pytest.approx(1.3 * 10.0, abs=1e-8)


def test_trajectory_csv_roundtrip(tmp_path, tight_opts):
    m = RoundMetric()
    arr = m.normalize(np.array([[0.2, 0.0, 1.0, 0.4]]), np.array([CHART_Z]))[0]
    traj = integrate(m, PhaseState.from_array(arr, CHART_Z), 1.0, tight_opts)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,chart,theta,phi,ptheta,pphi,phi_unwrapped"
    assert len(lines) == len(traj.t) + 1
    traj.to_json_summary(tmp_path / "stats.json")
    assert (tmp_path / "stats.json").exists()


# -- the exact deformed flow ---------------------------------------------------


def test_oracle_alpha_zero_is_great_circle():
    m = RoundMetric()
    init = PhaseState(ChartId.ZPOLAR, 0.0, 0.0, 0.0, 1.0)
    out = oracle_katok(0.0, init, np.pi / 2)
    assert out.phi == pytest.approx(np.pi / 2, abs=1e-14)
    assert out.theta == pytest.approx(0.0, abs=1e-14)


def test_oracle_equatorial_closures():
    m = KatokMetric(0.3)
    east = equatorial_covector(m, eastward=True)
    west = equatorial_covector(m, eastward=False)
    out_e = oracle_katok(0.3, east, 2 * np.pi / 1.3)
    out_w = oracle_katok(0.3, west, 2 * np.pi / 0.7)
    assert phase_distance(out_e.as_array()[None, :], np.array([int(out_e.chart)]),
                          east.as_array(), CHART_Z)[0] < 1e-12
    assert phase_distance(out_w.as_array()[None, :], np.array([int(out_w.chart)]),
                          west.as_array(), CHART_Z)[0] < 1e-12


def test_oracle_rejects_inadmissible():
    with pytest.raises(InadmissibleAlpha):
        oracle_katok(1.0, PhaseState(ChartId.ZPOLAR, 0, 0, 0, 1.0), 1.0)


def test_oracle_preserves_deformed_level():
    alpha = 0.41
    m = KatokMetric(alpha)
    rng = np.random.default_rng(2)
    inits, charts = random_unit_states(m, rng, 5)
    ts = np.linspace(0.0, 12.0, 60)
    for k in range(5):
        states, out_charts = oracle_katok_states(alpha, inits[k], CHART_Z, ts)
        vals = m.dual(states, out_charts)
        assert np.max(np.abs(vals - 1.0)) < 1e-12


def test_numeric_matches_oracle(tight_opts):
    alpha = 0.3
    m = KatokMetric(alpha)
    rng = np.random.default_rng(4)
    inits, charts = random_unit_states(m, rng, 4)
    res = run_flow(m, inits, charts, 4 * np.pi, tight_opts, sample_interval=0.05, record=True)
    sup = 0.0
    for j, t in enumerate(res.sample_t):
        for k in range(4):
            ost, och = oracle_katok_states(alpha, inits[k], CHART_Z, [t])
            sup = max(
                sup,
                phase_distance(
                    res.sample_states[j][k][None, :],
                    res.sample_charts[j][k : k + 1],
                    ost[0],
                    och[0],
                )[0],
            )
    assert sup < 1e-6


def test_reversed_time_consistency(tight_opts):
    alpha = 0.3
    m = KatokMetric(alpha)
    rng = np.random.default_rng(8)
    inits, charts = random_unit_states(m, rng, 3)
    length = 15.0
    fwd = run_flow(m, inits, charts, length, tight_opts)
    back = run_flow(m, fwd.states, fwd.charts, length, tight_opts, direction=-1)
    # forward error vs exact flow bounds the roundtrip budget
    fwd_err = 0.0
    for k in range(3):
        ost, och = oracle_katok_states(alpha, inits[k], CHART_Z, [length])
        fwd_err = max(
            fwd_err,
            phase_distance(fwd.states[k][None, :], fwd.charts[k : k + 1], ost[0], och[0])[0],
        )
    for k in range(3):
        err = phase_distance(back.states[k][None, :], back.charts[k : k + 1], inits[k], CHART_Z)[0]
        assert err <= max(2.0 * fwd_err, 1e-10)


def test_energy_and_pphi_conservation_long():
    m = KatokMetric(0.3)
    opts = IntegratorOptions(rel_tol=1e-12, abs_tol=1e-14)
    rng = np.random.default_rng(12)
    inits, charts = random_unit_states(m, rng, 2)
    from finslerflow.metrics import killing_pairing

    pf0 = killing_pairing(inits, charts)
    drift = {"h": 0.0, "pf": 0.0}

    def watch(t, states, chs, phi_hat):
        vals = m.dual(states, chs)
        drift["h"] = max(drift["h"], float(np.max(np.abs(vals - 1.0))))
        drift["pf"] = max(drift["pf"], float(np.max(np.abs(killing_pairing(states, chs) - pf0))))

    run_flow(m, inits, charts, 200.0, opts, observer=watch)
    assert drift["h"] <= 1e-8
    assert drift["pf"] <= 1e-9


def test_chart_threshold_independence():
    m = KatokMetric(0.3)
    rng = np.random.default_rng(21)
    inits, charts = random_unit_states(m, rng, 2, theta_cap=1.1)
    finals = []
    for thr in (0.9, 1.2):
        opts = IntegratorOptions(rel_tol=1e-12, abs_tol=1e-14, chart_switch_threshold=thr)
        res = run_flow(m, inits, charts, 20.0, opts)
        st = np.array(res.states)
        finals.append((st, res.charts.copy()))
    for k in range(2):
        d = phase_distance(
            finals[0][0][k][None, :], finals[0][1][k : k + 1], finals[1][0][k], int(finals[1][1][k])
        )[0]
        assert d < 1e-8


def test_step_controller_underflow():
    m = RoundMetric()
    init = PhaseState(ChartId.ZPOLAR, 0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ToleranceFailure):
        integrate(m, init, 1.0, IntegratorOptions(rel_tol=1e-30, abs_tol=1e-30, max_step=1e-5))


# -- return map -----------------------------------------------------------------


def test_psi_map_round_antipode():
    m = RoundMetric()
    opts = IntegratorOptions(rel_tol=1e-12, abs_tol=1e-14)
    (pt, spread) = psi_map(m, (0.2, 0.5), 8, opts)
    assert spread <= 1e-8
    assert pt[0] == pytest.approx(-0.2, abs=1e-9)
    assert pt[1] == pytest.approx((0.5 + np.pi) % (2 * np.pi), abs=1e-9)


def test_psi_map_katok():
    m = KatokMetric(0.3)
    opts = IntegratorOptions(rel_tol=1e-12, abs_tol=1e-14)
    (pt, spread) = psi_map(m, (0.2, 0.0), 8, opts)
    assert spread <= 1e-6
    assert pt[0] == pytest.approx(-0.2, abs=1e-8)
    assert pt[1] == pytest.approx((1.3 * np.pi) % (2 * np.pi), abs=1e-8)


def test_psi_map_needs_three_directions():
    with pytest.raises(ValueError):
        psi_map(RoundMetric(), (0.0, 0.0), 2)


def test_psi_equivariance_along_orbit(tight_opts):
    # the base point at t + pi is the return-map image of the point at t
    alpha = 0.3
    m = KatokMetric(alpha)
    rng = np.random.default_rng(17)
    inits, charts = random_unit_states(m, rng, 2)
    for k in range(2):
        states, out_charts = oracle_katok_states(alpha, inits[k], CHART_Z, [1.1, 1.1 + np.pi])
        from finslerflow.charts import ambient_of, base_xyz, sphere_distance

        x, _ = ambient_of(states, out_charts)
        th0 = np.arcsin(np.clip(x[0, 2], -1, 1))
        ph0 = np.arctan2(x[0, 1], x[0, 0])
        image = base_xyz(-th0, ph0 + np.pi * (1 + alpha))
        assert sphere_distance(image, x[1]) < 1e-6


def test_energy_conservation_at_default_tolerances():
    # the projective rescaling keeps the sampled level drift at the
    # per-step residual even with the looser default controller
    m = KatokMetric(0.3)
    rng = np.random.default_rng(30)
    inits, charts = random_unit_states(m, rng, 2)
    drift = {"h": 0.0}

    def watch(t, states, chs, phi_hat):
        vals = m.dual(states, chs)
        drift["h"] = max(drift["h"], float(np.max(np.abs(vals - 1.0))))

    res = run_flow(m, inits, charts, 200.0, IntegratorOptions(), observer=watch)
    assert drift["h"] <= 1e-8
    assert res.stats.max_energy_drift <= 1e-8
