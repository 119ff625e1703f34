"""Acceptance gate: every criterion at its stated tolerance, one line each.

Run with `pytest tests/test_acceptance.py -s` to see the PASS/FAIL lines as
they complete.  The whole module is designed to finish well inside fifteen
minutes at the default tolerances; the heavyweight sweeps are shared
between criteria through module-scoped fixtures.
"""

import numpy as np
import pytest

from conftest import random_unit_states

from finslerflow.analysis import (
    SearchGrid,
    count_intersections,
    detect_closure,
    find_closed_geodesics,
    rotation_numbers,
    scan_closures,
)
from finslerflow.charts import CHART_Z, ChartId, PhaseState, phase_distance
from finslerflow.counterexample import verify_counterexample
from finslerflow.flow import IntegratorOptions, integrate, oracle_katok_states, run_flow
from finslerflow.metrics import (
    ChainMetric,
    KatokMetric,
    RoundMetric,
    killing_pairing,
)
from finslerflow.models import (
    TorusModelSpec,
    conjugacy_invariants,
    conjugacy_verdict,
    model_minimal_period,
)
from finslerflow.variational import variational_flow_batch

SEED = 42
SQRT2 = np.sqrt(2.0)


def report(num, description, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {description} -- {detail}")
    assert ok, f"criterion {num}: {description}: {detail}"


@pytest.fixture(scope="module")
def opts():
    return IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)


@pytest.fixture(scope="module")
def sweep_third(opts):
    return find_closed_geodesics(KatokMetric(1 / 3), SearchGrid(), opts)


@pytest.fixture(scope="module")
def sweep_half(opts):
    return find_closed_geodesics(KatokMetric(0.5), SearchGrid(), opts)


def test_criterion_01_oracle_equivalence(opts):
    sup = 0.0
    for alpha in (0.1, 0.3, 1 / 3, 0.7):
        metric = KatokMetric(alpha)
        rng = np.random.default_rng(SEED)
        inits, charts = random_unit_states(metric, rng, 20)
        res = run_flow(metric, inits, charts, 4 * np.pi, opts, sample_interval=0.02, record=True)
        for j, t in enumerate(res.sample_t):
            states, ocharts = zip(
                *(oracle_katok_states(alpha, inits[k], CHART_Z, [t]) for k in range(20))
            )
            for k in range(20):
                sup = max(
                    sup,
                    phase_distance(
                        res.sample_states[j][k][None, :],
                        res.sample_charts[j][k : k + 1],
                        states[k][0],
                        ocharts[k][0],
                    )[0],
                )
    report(1, "numeric flow matches the exact deformed flow", sup <= 1e-6, f"sup error {sup:.3e} <= 1e-6")


def test_criterion_02_conjugate_points(opts):
    worst = 0.0
    for metric in (RoundMetric(), KatokMetric(0.3), KatokMetric(1 / 3), KatokMetric(SQRT2 - 1)):
        rng = np.random.default_rng(SEED)
        inits, charts = random_unit_states(metric, rng, 10)
        recs = variational_flow_batch(metric, inits, charts, np.pi + 0.3, opts)
        for rec in recs:
            assert rec.first_conjugate_time is not None
            worst = max(worst, abs(rec.first_conjugate_time - np.pi))
    report(2, "first conjugate time at pi", worst <= 1e-4, f"max |t_c - pi| = {worst:.3e} <= 1e-4")


def test_criterion_03_rational_spectrum(sweep_third):
    exceptional = [r for r in sweep_third if r.exceptional]
    ok = len(exceptional) == 2
    detail = f"{len(exceptional)} exceptional records"
    if ok:
        short, long_ = sorted(exceptional, key=lambda r: r.length)
        d1 = abs(short.length - 1.5 * np.pi)
        d2 = abs(long_.length - 3 * np.pi)
        recip = abs(1 / short.length + 1 / long_.length - 1 / np.pi)
        ok = (
            d1 <= 1e-5
            and d2 <= 1e-5
            and short.max_abs_theta <= 1e-6
            and long_.max_abs_theta <= 1e-6
            and abs(short.winding) == 1
            and abs(long_.winding) == 1
            and short.winding == -long_.winding
            and recip <= 1e-6
        )
        detail = (
            f"lengths ({short.length:.8f}, {long_.length:.8f}), max|theta| "
            f"({short.max_abs_theta:.1e}, {long_.max_abs_theta:.1e}), windings "
            f"({short.winding}, {long_.winding}), reciprocal defect {recip:.2e}"
        )
    report(3, "Katok(1/3) exceptional pair {3pi/2, 3pi}", ok, detail)


def test_criterion_04_common_period(opts):
    metric = KatokMetric(1 / 3)
    rng = np.random.default_rng(SEED)
    inits, charts = random_unit_states(metric, rng, 20)
    hits, _ = scan_closures(metric, inits, charts, 6 * np.pi + 1.0, opts, tol=1e-5)
    ok = all(h is not None for h in hits)
    worst_t = worst_r = 0.0
    if ok:
        worst_t = max(abs(h[2] - 6 * np.pi) for h in hits)
        worst_r = max(h[3] for h in hits)
        ok = worst_t <= 1e-5 and worst_r <= 1e-5
    report(
        4,
        "Katok(1/3) generic orbits close at the common period 6pi",
        ok,
        f"max |T - 6pi| = {worst_t:.2e}, max residual = {worst_r:.2e} <= 1e-5",
    )


def test_criterion_05_single_exceptional(sweep_half):
    exceptional = [r for r in sweep_half if r.exceptional]
    equatorial_full = [r for r in sweep_half if r.on_equator and not r.exceptional]
    ok = len(exceptional) == 1 and len(equatorial_full) >= 1
    detail = f"{len(exceptional)} exceptional, {len(equatorial_full)} full-period equatorial"
    if ok:
        d1 = abs(exceptional[0].length - 4 * np.pi / 3)
        d2 = min(abs(r.length - 4 * np.pi) for r in equatorial_full)
        ok = d1 <= 1e-5 and d2 <= 1e-5
        detail += f", lengths off by ({d1:.2e}, {d2:.2e})"
    report(5, "Katok(1/2): one exceptional geodesic 4pi/3, partner at 4pi", ok, detail)


def test_criterion_06_irrational_behavior(opts):
    metric = KatokMetric(SQRT2 - 1)
    records = find_closed_geodesics(metric, SearchGrid(horizon=500.0), opts)
    only_equatorial = all(r.on_equator for r in records) and len(records) == 2
    lam = (2 - SQRT2) / 2
    lengths_ok = False
    if only_equatorial:
        ls = sorted(r.length for r in records)
        lengths_ok = abs(ls[0] - np.pi / (1 - lam)) <= 1e-5 and abs(ls[1] - np.pi / lam) <= 1e-5
    rng = np.random.default_rng(SEED)
    inits, charts = random_unit_states(metric, rng, 10, theta_cap=1.1)
    data = rotation_numbers(metric, inits, charts, 16, opts)
    rot_dev = max(abs(d.rotation - lam) for d in data)
    sym_dev = max(abs(d.theta_max + d.theta_min) for d in data)
    ok = only_equatorial and lengths_ok and rot_dev <= 1e-4 and sym_dev <= 1e-6
    report(
        6,
        "Katok(sqrt2-1): only equatorial closures; rotation number (2-sqrt2)/2",
        ok,
        f"records {len(records)} (equatorial {only_equatorial}), rotation dev {rot_dev:.2e} <= 1e-4, "
        f"oscillation symmetry {sym_dev:.2e} <= 1e-6",
    )


def test_criterion_07_intersections(sweep_third, opts):
    east = min((r for r in sweep_third if r.exceptional), key=lambda r: r.length)
    generic = [r for r in sweep_third if not r.on_equator][:5]
    counts = [count_intersections(g, east) for g in generic]
    ok = len(generic) == 5 and all(c >= 3 for c in counts)
    # two seeded random distinct great circles of the round metric
    m = RoundMetric()
    rng = np.random.default_rng(SEED)
    recs = []
    for _ in range(2):
        inits, charts = random_unit_states(m, rng, 1)
        traj = integrate(m, PhaseState.from_array(inits[0], ChartId.ZPOLAR), 2.2 * np.pi, opts)
        recs.append(detect_closure(traj, tol=1e-8, opts=opts))
    n_round = count_intersections(recs[0], recs[1])
    ok = ok and n_round == 2
    report(
        7,
        "intersection counts: generic vs exceptional >= q = 3; great circles = 2",
        ok,
        f"generic counts {counts}, great circles {n_round}",
    )


def test_criterion_08_first_integrals():
    opts = IntegratorOptions(rel_tol=1e-12, abs_tol=1e-14)
    worst_h = worst_pf = 0.0
    for metric in (RoundMetric(), KatokMetric(0.3)):
        rng = np.random.default_rng(SEED)
        inits, charts = random_unit_states(metric, rng, 2)
        pf0 = killing_pairing(inits, charts)
        drift = {"h": 0.0, "pf": 0.0}

        def watch(t, states, chs, phi_hat, metric=metric, pf0=pf0, drift=drift):
            vals = np.real(metric.dual(states, chs))
            drift["h"] = max(drift["h"], float(np.max(np.abs(vals - 1.0))))
            drift["pf"] = max(
                drift["pf"], float(np.max(np.abs(killing_pairing(states, chs) - pf0)))
            )

        run_flow(metric, inits, charts, 200.0, opts, observer=watch)
        worst_h = max(worst_h, drift["h"])
        worst_pf = max(worst_pf, drift["pf"])
    ok = worst_h <= 1e-8 and worst_pf <= 1e-9
    report(
        8,
        "first integrals over length 200",
        ok,
        f"|dH| = {worst_h:.2e} <= 1e-8, |dp_phi| = {worst_pf:.2e} <= 1e-9",
    )


def test_criterion_09_conjugacy_invariants(opts):
    from finslerflow.cli import measured_spectrum

    worst_len = 0.0
    worst_model = 0.0
    shorts = {}
    for lam, alpha in ((0.35, 0.3), (1 / 3, 1 / 3), (0.25, 0.5)):
        metric = KatokMetric(alpha)
        measured = measured_spectrum(metric, opts)
        p1, p2 = conjugacy_invariants(lam)
        worst_len = max(
            worst_len, abs(measured["L_short"] - p1), abs(measured["L_long"] - p2)
        )
        shorts[alpha] = measured["L_short"]
        spec = TorusModelSpec.from_rotation_angle(lam)
        t1 = model_minimal_period(spec, np.array([1.0, 0, 0, 0]))
        t2 = model_minimal_period(spec, np.array([0, 0, 0, 1.0]))
        worst_model = max(worst_model, abs(t1 - p1), abs(t2 - p2))
    same = conjugacy_verdict(shorts[0.3], shorts[0.3])
    different = conjugacy_verdict(shorts[0.3], shorts[1 / 3])
    ok = (
        worst_len <= 1e-5
        and worst_model <= 1e-9
        and same == "conjugate"
        and different == "not conjugate"
    )
    report(
        9,
        "invariant pairs match measured lengths; verdicts by shortest length",
        ok,
        f"length defect {worst_len:.2e} <= 1e-5, model period defect {worst_model:.2e} <= 1e-9, "
        f"verdicts ({same}, {different})",
    )


def test_criterion_10_closing_deformation(opts):
    metric = ChainMetric(KatokMetric(0.3), -0.3)
    rng = np.random.default_rng(SEED)
    inits, charts = random_unit_states(metric, rng, 20)
    hits, _ = scan_closures(metric, inits, charts, 2 * np.pi + 1.0, opts, tol=1e-6)
    ok = all(h is not None for h in hits)
    worst = 0.0
    if ok:
        worst = max(abs(h[2] - 2 * np.pi) for h in hits)
        ok = worst <= 1e-6
    # composition law on 1e4 random states
    direct = KatokMetric(0.0)
    rng = np.random.default_rng(SEED + 1)
    states = np.column_stack(
        [
            rng.uniform(-1.2, 1.2, 10000),
            rng.uniform(0, 2 * np.pi, 10000),
            rng.normal(size=10000),
            rng.normal(size=10000),
        ]
    )
    charts10k = np.zeros(10000, dtype=int)
    comp = float(np.max(np.abs(metric.dual(states, charts10k) - direct.dual(states, charts10k))))
    ok = ok and comp <= 1e-12
    report(
        10,
        "Chain(Katok(0.3), -0.3) closes everything at 2pi; composition law",
        ok,
        f"max |T - 2pi| = {worst:.2e} <= 1e-6, composition defect {comp:.2e} <= 1e-12",
    )


def test_criterion_11_counterexample():
    rep = verify_counterexample(seed=SEED)
    lines = ", ".join(f"{c.check}={'ok' if c.passed else 'FAIL'}" for c in rep.checks)
    report(11, "perturbed metric: five checks", rep.passed, lines)


def test_criterion_12_entropy_proxy():
    metric = KatokMetric(SQRT2 - 1)
    opts = IntegratorOptions(rel_tol=1e-12, abs_tol=1e-14)
    rng = np.random.default_rng(SEED)
    inits, charts = random_unit_states(metric, rng, 1)
    pair = np.vstack([inits[0], inits[0]])
    pair[1, 2] += 1e-8
    pair = metric.normalize(pair, np.zeros(2, dtype=int))
    seps = []
    ts = []

    def watch(t, states, chs, phi_hat):
        if t > 0:
            d = phase_distance(states[:1], chs[:1], states[1], int(chs[1]))[0]
            seps.append(d)
            ts.append(t)

    run_flow(metric, pair, np.zeros(2, dtype=int), 300.0, opts, observer=watch)
    rate = float(np.polyfit(ts, np.log(seps), 1)[0])
    ok = rate <= 1e-3
    report(
        12,
        "separation growth fit is subexponential (consistency check)",
        ok,
        f"fitted exponential rate {rate:.3e} <= 1e-3",
    )
