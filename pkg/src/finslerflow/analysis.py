"""Observable extraction from orbits: closed geodesics, winding and rotation
numbers, intersection counts, reversibility defects, first-integral drift.

Closure detection is a two-stage scheme: a coarse recurrence scan over the
integrated orbit (local minima of the phase-space distance to the initial
covector) followed by Newton refinement of the return time along the flow;
a damped Gauss-Newton on (state, period) is available for seeds that pass
close to, but not exactly on, an isolated closed orbit.  Non-closure is
only ever asserted relative to a horizon and a residual floor.

Deduplication of detected orbits compares phase-space Hausdorff distances:
points resampled from one orbit against the dense polyline of the other
(point-to-segment, in an R^5 embedding of (theta, phi mod 2pi, p) that
renders the phi circle without wrap seams).  The test is parametrization
independent, so records found from phase-shifted seeds merge cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import charts as ch
from .errors import (
    EquatorialOrbit,
    IdenticalImages,
    NotConstantCurvature,
    RefinementDiverged,
)
from .flow import IntegratorOptions, Trajectory, psi_map, run_flow
from .metrics import (
    Metric,
    covector_of_velocity,
    killing_pairing,
    primal_norm,
    rational_rotation,
)

EQUATOR_TOL = 1e-6
DEDUP_HAUSDORFF = 1e-4
WINDING_FRAC_TOL = 0.05
SAMPLE_DT = 0.01


# ---------------------------------------------------------------------------
# records


@dataclass
class ClosedGeodesicRecord:
    length: float
    winding: Optional[int]
    residual: float
    exceptional: bool
    on_equator: bool
    init_state: np.ndarray
    init_chart: int
    max_abs_theta: float
    samples: np.ndarray = field(default=None, repr=False)  # (M,2) z-polar (theta, phi)
    states: np.ndarray = field(default=None, repr=False)
    charts: np.ndarray = field(default=None, repr=False)
    xyz: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {
            "length": float(self.length),
            "winding": None if self.winding is None else int(self.winding),
            "residual": float(self.residual),
            "exceptional": bool(self.exceptional),
            "on_equator": bool(self.on_equator),
        }


@dataclass
class SearchGrid:
    """Initial-condition grid for the closed-geodesic sweep."""

    theta_values: tuple = (-1.2, -0.8, -0.4, 0.0, 0.4, 0.8)
    phi_values: tuple = (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)
    directions: int = 16
    horizon: Optional[float] = None

    def seeds(self, metric: Metric):
        angles = 2.0 * np.pi * np.arange(self.directions) / self.directions
        rows = []
        for th in self.theta_values:
            for phv in self.phi_values:
                for a in angles:
                    rows.append([th, phv, np.cos(a), np.sin(a)])
        states = np.asarray(rows)
        charts = np.full(len(rows), ch.CHART_Z, dtype=int)
        return metric.normalize(states, charts), charts


# ---------------------------------------------------------------------------
# recurrence scan


class _RecurrenceScan:
    """Step observer: local minima of the distance to each row's init."""

    def __init__(self, inits_z, coarse=0.1, t_min=0.5, max_candidates=6):
        self.refs = inits_z
        self.coarse = coarse
        self.t_min = t_min
        self.cap = max_candidates
        n = len(inits_z)
        self.d_prev = np.full(n, np.inf)
        self.d_prev2 = np.full(n, np.inf)
        self.prev = None
        self.candidates = [[] for _ in range(n)]
        self.max_theta = np.zeros(n)
        self.min_dist = np.full(n, np.inf)

    def __call__(self, t, states, charts, phi_hat):
        theta_z = np.arcsin(
            np.clip(
                np.where(
                    charts == ch.CHART_Z,
                    np.sin(states[:, 0]),
                    -np.cos(states[:, 0]) * np.cos(states[:, 1]),
                ),
                -1.0,
                1.0,
            )
        )
        np.maximum(self.max_theta, np.abs(theta_z), out=self.max_theta)
        d = _distance_rows(states, charts, self.refs)
        if self.prev is not None:
            t_prev, y_prev, c_prev, p_prev = self.prev
            if t_prev > self.t_min:
                np.minimum(self.min_dist, self.d_prev, out=self.min_dist)
                hit = (self.d_prev < d) & (self.d_prev < self.d_prev2) & (self.d_prev < self.coarse)
                for i in np.nonzero(hit)[0]:
                    if len(self.candidates[i]) < self.cap:
                        self.candidates[i].append(
                            (
                                t_prev,
                                y_prev[i].copy(),
                                int(c_prev[i]),
                                float(p_prev[i]),
                                float(self.d_prev[i]),
                            )
                        )
        self.d_prev2 = self.d_prev
        self.d_prev = d
        self.prev = (t, states.copy(), charts.copy(), phi_hat.copy())


def _distance_rows(states, charts, refs_z):
    a = np.array(states, dtype=float)
    mask = charts == ch.CHART_X
    if np.any(mask):
        a[mask] = ch.convert(a[mask], np.full(int(mask.sum()), ch.CHART_X), ch.CHART_Z)
    d_th = a[:, 0] - refs_z[:, 0]
    d_ph = ch.wrap_pi(a[:, 1] - refs_z[:, 1])
    d_pt = a[:, 2] - refs_z[:, 2]
    d_pf = a[:, 3] - refs_z[:, 3]
    return np.sqrt(d_th ** 2 + d_ph ** 2 + d_pt ** 2 + d_pf ** 2)


def _to_z(state, chart):
    if chart == ch.CHART_Z:
        return np.asarray(state, dtype=float)
    return ch.convert(np.asarray(state)[None, :], np.array([chart]), ch.CHART_Z)[0]


def _diff_z(state, chart, ref_z):
    a = _to_z(state, chart)
    return np.array(
        [
            a[0] - ref_z[0],
            ch.wrap_pi(a[1] - ref_z[1]),
            a[2] - ref_z[2],
            a[3] - ref_z[3],
        ]
    )


def _embed5(states_z):
    """(theta, cos phi, sin phi, p_theta, p_phi): the phi circle without seams."""
    s = np.atleast_2d(states_z)
    return np.column_stack([s[:, 0], np.cos(s[:, 1]), np.sin(s[:, 1]), s[:, 2], s[:, 3]])


# ---------------------------------------------------------------------------
# refinement


def _local_flow(metric, state, chart, dt, opts):
    """Short signed flow from a cached state; returns (state, chart, dphi_hat)."""
    if abs(dt) < 1e-15:
        return np.asarray(state, dtype=float), chart, 0.0
    res = run_flow(
        metric,
        np.asarray(state)[None, :],
        np.array([chart]),
        abs(dt),
        opts,
        direction=1 if dt > 0 else -1,
    )
    dphi = float(
        res.phi_hat[0] - ch.phi_z_of(np.asarray(state)[None, :], np.array([chart]))[0]
    )
    return res.states[0], int(res.charts[0]), dphi


def _refine_time(metric, ref_z, cand, opts, max_iter=40):
    """Newton refinement of the return time along the flow.

    cand = (t, state, chart, phi_hat, dist); the state is the orbit point at
    parameter t, so only short local flows are needed.
    """
    t, state, chart, phi_hat, _ = cand
    state = np.array(state, dtype=float)
    best = None
    for _ in range(max_iter):
        diff = _diff_z(state, chart, ref_z)
        resid = float(np.linalg.norm(diff))
        if best is None or resid < best[1]:
            best = (t, resid, state.copy(), chart, phi_hat)
        v = metric.hamilton_rhs(_to_z(state, chart)[None, :], np.array([ch.CHART_Z]))[0]
        dt = -float(diff @ v) / float(v @ v)
        dt = float(np.clip(dt, -0.2, 0.2))
        if abs(dt) < 1e-13:
            break
        state, chart, dphi = _local_flow(metric, state, chart, dt, opts)
        t += dt
        phi_hat += dphi
    return best


def refine_closure(metric, seed_z, period_guess, opts=None, tol=1e-8, max_iter=20, fd=1e-7):
    """Damped Gauss-Newton on (state, period) for an isolated closed orbit.

    Unknowns are the full z-polar state plus the period; the unit-level and
    a transversality condition pin the remaining gauge freedoms.  Raises
    RefinementDiverged if the iteration leaves the seed's neighborhood.
    """
    opts = opts or IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    seed_z = np.asarray(seed_z, dtype=float)
    z = seed_z.copy()
    T = float(period_guess)
    v0 = metric.hamilton_rhs(seed_z[None, :], np.array([ch.CHART_Z]))[0]

    def residual(zz, TT):
        fin = run_flow(metric, zz[None, :], np.array([ch.CHART_Z]), TT, opts)
        d = _diff_z(fin.states[0], int(fin.charts[0]), zz)
        lvl = float(np.real(metric.dual(zz[None, :], np.array([ch.CHART_Z]))[0])) - 1.0
        return np.concatenate([d, [10.0 * lvl, float((zz - seed_z) @ v0)]])

    r = residual(z, T)
    for _ in range(max_iter):
        if np.linalg.norm(r[:4]) < 0.2 * tol:
            break
        J = np.zeros((6, 5))
        for j in range(4):
            e = np.zeros(4)
            e[j] = fd
            J[:, j] = (residual(z + e, T) - residual(z - e, T)) / (2 * fd)
        J[:, 4] = (residual(z, T + fd) - residual(z, T - fd)) / (2 * fd)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        improved = False
        lam = 1.0
        for _ in range(6):
            z_try, T_try = z + lam * step[:4], T + lam * step[4]
            r_try = residual(z_try, T_try)
            if np.linalg.norm(r_try) < np.linalg.norm(r):
                z, T, r = z_try, T_try, r_try
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
        if np.linalg.norm(z - seed_z) > 0.5:
            raise RefinementDiverged("closure refinement wandered off the seed orbit")
    return z, T, float(np.linalg.norm(r[:4]))


# ---------------------------------------------------------------------------
# record construction


def _resample_via_metric(metric, init_state, init_chart, length, opts, interval=SAMPLE_DT):
    if hasattr(metric, "pushforward_samples"):
        return metric.pushforward_samples(init_state, init_chart, length, interval)
    res = run_flow(
        metric,
        np.asarray(init_state)[None, :],
        np.array([init_chart]),
        length,
        opts,
        sample_interval=interval,
        record=True,
    )
    states = np.stack([s[0] for s in res.sample_states])
    charts_arr = np.array([c[0] for c in res.sample_charts])
    return states, charts_arr


def _record_from_samples(metric, init_state, init_chart, length, residual, dphi_hat, states, charts_arr):
    # drop a duplicated closing sample so polyline consumers see one clean wrap
    if len(states) > 4:
        gap = _distance_rows(
            states[-1:], charts_arr[-1:], _to_z(states[0], charts_arr[0])[None, :]
        )[0]
        if gap < 1e-7:
            states = states[:-1]
            charts_arr = charts_arr[:-1]
    xyz, _ = ch.ambient_of(states, charts_arr)
    theta_z = np.arcsin(np.clip(xyz[:, 2], -1.0, 1.0))
    phi_z = ch.wrap_angle(np.arctan2(xyz[:, 1], xyz[:, 0]))
    max_theta = float(np.max(np.abs(theta_z)))
    w = dphi_hat / (2.0 * np.pi)
    frac = abs(w - round(w))
    winding = int(round(w)) if frac <= WINDING_FRAC_TOL else None
    rat = rational_rotation(metric.lambda_norm)
    exceptional = rat is not None and length < 2.0 * np.pi * rat[1] - 1e-6
    return ClosedGeodesicRecord(
        length=float(length),
        winding=winding,
        residual=float(residual),
        exceptional=exceptional,
        on_equator=max_theta <= EQUATOR_TOL,
        init_state=np.asarray(init_state, dtype=float),
        init_chart=int(init_chart),
        max_abs_theta=max_theta,
        samples=np.column_stack([theta_z, phi_z]),
        states=states,
        charts=charts_arr,
        xyz=xyz,
    )


def _build_record(metric, init_state, init_chart, length, residual, dphi_hat, opts):
    states, charts_arr = _resample_via_metric(metric, init_state, init_chart, length, opts)
    return _record_from_samples(
        metric, init_state, init_chart, length, residual, dphi_hat, states, charts_arr
    )


def _build_records_batch(metric, raw, opts):
    """Materialize polylines for many detections with one batched resampling."""
    if not raw:
        return []
    if hasattr(metric, "pushforward_samples"):
        return [_build_record(metric, *item, opts) for item in raw]
    inits = np.stack([item[0] for item in raw])
    charts0 = np.array([item[1] for item in raw], dtype=int)
    lengths = np.array([item[2] for item in raw])
    res = run_flow(
        metric,
        inits,
        charts0,
        float(lengths.max()),
        opts,
        sample_interval=SAMPLE_DT,
        record=True,
    )
    blocks = np.stack(res.sample_states)  # (M, N, 4)
    chs = np.stack(res.sample_charts)
    records = []
    for i, (init_state, init_chart, T, resid, dphi) in enumerate(raw):
        k_last = min(int(np.floor(T / SAMPLE_DT)) + 1, blocks.shape[0])
        records.append(
            _record_from_samples(
                metric, init_state, init_chart, T, resid, dphi, blocks[:k_last, i], chs[:k_last, i]
            )
        )
    return records


# ---------------------------------------------------------------------------
# public operations


def detect_closure(traj: Trajectory, tol: float = 1e-8, coarse: float = 0.05, opts=None):
    """Scan a sampled trajectory for recurrence and refine the smallest period.

    Returns a ClosedGeodesicRecord or None ("no closure within the sampled
    horizon at this tolerance" -- never a proof of non-closure).
    """
    opts = opts or IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    metric = traj.metric
    ref_z = _to_z(traj.states[0], int(traj.charts[0]))
    d = _distance_rows(traj.states, traj.charts, np.tile(ref_z, (len(traj.t), 1)))
    phi0 = float(traj.phi_unwrapped[0])
    last = len(d) - 1
    for k in range(1, len(d)):
        if traj.t[k] <= 0.5 or d[k] >= coarse:
            continue
        # interior local minimum, or a dip still falling at the horizon
        if k < last and not (d[k] <= d[k - 1] and d[k] < d[k + 1]):
            continue
        if k == last and d[k] > d[k - 1]:
            continue
        cand = (
            traj.t[k],
            traj.states[k].copy(),
            int(traj.charts[k]),
            float(traj.phi_unwrapped[k]),
            float(d[k]),
        )
        T, resid, _, _, phi_T = _refine_time(metric, ref_z, cand, opts)
        if resid < tol:
            return _build_record(
                metric, traj.states[0], int(traj.charts[0]), T, resid, phi_T - phi0, opts
            )
        if resid < coarse and T <= 50.0:
            try:
                z_new, T_new, r_new = refine_closure(metric, ref_z.copy(), T, opts, tol)
            except RefinementDiverged:
                continue
            if r_new < tol:
                res = run_flow(metric, z_new[None, :], np.array([ch.CHART_Z]), T_new, opts)
                dphi = float(res.phi_hat[0]) - float(
                    ch.phi_z_of(z_new[None, :], np.array([ch.CHART_Z]))[0]
                )
                return _build_record(metric, z_new, ch.CHART_Z, T_new, r_new, dphi, opts)
    return None


def scan_closures(metric, inits, charts, horizon, opts=None, tol=1e-8, coarse=0.1):
    """Recurrence scan + time refinement for a batch of seeds.

    Returns (hits, scan): hits has one entry per seed, either None or a
    tuple (init_state, init_chart, period, residual, dphi_hat); scan is the
    observer with per-seed minimum recurrence distances.
    """
    opts = opts or IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    charts = np.array(np.atleast_1d(charts), dtype=int)
    refs_z = np.array([_to_z(inits[i], charts[i]) for i in range(len(inits))])
    scan = _RecurrenceScan(refs_z, coarse=coarse)
    run_flow(metric, inits, charts, horizon, opts, observer=scan)
    hits = []
    for i in range(len(inits)):
        found = None
        phi0 = float(ch.phi_z_of(inits[i][None, :], charts[i : i + 1])[0])
        for cand in scan.candidates[i]:
            T, resid, _, _, phi_T = _refine_time(metric, refs_z[i], cand, opts)
            scan.min_dist[i] = min(scan.min_dist[i], resid)
            if resid < tol:
                found = (inits[i], int(charts[i]), T, resid, phi_T - phi0)
                break
        hits.append(found)
    return hits, scan


def find_closed_geodesics(metric: Metric, grid: SearchGrid | None = None, opts=None, tol=1e-8):
    """Sweep a seed grid, detect closures, deduplicate, sort by length."""
    grid = grid or SearchGrid()
    opts = opts or IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    horizon = grid.horizon
    if horizon is None:
        rat = rational_rotation(metric.lambda_norm)
        horizon = 500.0 if rat is None else min(8.0 * 2.0 * np.pi * rat[1], 500.0)
    inits, charts = grid.seeds(metric)
    hits, _ = scan_closures(metric, inits, charts, horizon, opts, tol=tol)
    records = _build_records_batch(metric, [h for h in hits if h is not None], opts)
    records = dedup_records(records)
    records.sort(key=lambda r: r.length)
    return records


def _points_to_phase_polyline(points5, poly5):
    """Distances from R^5 phase points to a closed R^5 polyline (segments)."""
    seg_a = poly5
    seg_b = np.roll(poly5, -1, axis=0)
    ab = seg_b - seg_a
    ab2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    out = np.empty(len(points5))
    for i, p in enumerate(points5):
        ap = p[None, :] - seg_a
        s = np.clip(np.einsum("ij,ij->i", ap, ab) / ab2, 0.0, 1.0)
        d2 = np.einsum("ij,ij->i", ap - s[:, None] * ab, ap - s[:, None] * ab)
        out[i] = np.sqrt(d2.min())
    return out


def phase_hausdorff(rec_a, rec_b, n_points=256):
    """Symmetric phase-space Hausdorff distance between two records.

    Resamples n_points along each detected orbit and measures them against
    the other orbit's dense phase polyline; phase-shift invariant.
    """

    def z_polyline(rec):
        states = np.array(rec.states, dtype=float)
        mask = rec.charts == ch.CHART_X
        if np.any(mask):
            states[mask] = ch.convert(states[mask], np.full(int(mask.sum()), ch.CHART_X), ch.CHART_Z)
        return _embed5(states)

    pa, pb = z_polyline(rec_a), z_polyline(rec_b)
    sub_a = pa[:: max(1, len(pa) // n_points)]
    sub_b = pb[:: max(1, len(pb) // n_points)]
    return max(
        float(_points_to_phase_polyline(sub_a, pb).max()),
        float(_points_to_phase_polyline(sub_b, pa).max()),
    )


def dedup_records(records, tol=DEDUP_HAUSDORFF):
    """Merge records tracing the same orbit."""
    kept = []
    for rec in records:
        duplicate = False
        for other in kept:
            if abs(rec.length - other.length) > 1e-3:
                continue
            if abs(rec.max_abs_theta - other.max_abs_theta) > 1e-3:
                continue
            # quick reject: is rec's start point anywhere near the other orbit?
            probe = _embed5(_to_z(rec.states[0], int(rec.charts[0]))[None, :])
            other_poly = np.array(other.states, dtype=float)
            mask = other.charts == ch.CHART_X
            if np.any(mask):
                other_poly[mask] = ch.convert(
                    other_poly[mask], np.full(int(mask.sum()), ch.CHART_X), ch.CHART_Z
                )
            if float(_points_to_phase_polyline(probe, _embed5(other_poly))[0]) > 50 * tol:
                continue
            if phase_hausdorff(rec, other) < tol:
                duplicate = True
                if rec.residual < other.residual:
                    other.residual = rec.residual
                break
        if not duplicate:
            kept.append(rec)
    return kept


# ---------------------------------------------------------------------------
# rotation numbers and oscillation data


@dataclass
class OscillationData:
    rotation: float
    extrema_times: np.ndarray
    extrema_theta: np.ndarray
    theta_max: float
    theta_min: float


def rotation_numbers(metric, inits, charts, half_oscillations=16, opts=None):
    """Mean longitude advance per half latitude oscillation, normalized.

    Detects successive extrema of the z-polar latitude along each orbit and
    divides the phi-hat increment per half oscillation by 2*pi, folding the
    result into (0, 1/2].
    """
    if half_oscillations < 8:
        raise ValueError("need at least 8 half oscillations")
    opts = opts or IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    charts = np.array(np.atleast_1d(charts), dtype=int)
    horizon = np.pi * (half_oscillations + 2.5)
    res = run_flow(metric, inits, charts, horizon, opts, sample_interval=SAMPLE_DT, record=True)
    t = np.array(res.sample_t)
    blocks = np.stack(res.sample_states)  # (M, N, 4)
    chs = np.stack(res.sample_charts)
    phis = np.stack(res.sample_phi)
    out = []
    for i in range(inits.shape[0]):
        z3 = np.where(
            chs[:, i] == ch.CHART_Z,
            np.sin(blocks[:, i, 0]),
            -np.cos(blocks[:, i, 0]) * np.cos(blocks[:, i, 1]),
        )
        theta = np.arcsin(np.clip(z3, -1.0, 1.0))
        if np.max(np.abs(theta)) < EQUATOR_TOL:
            raise EquatorialOrbit(f"orbit {i} stays on the equator")
        ext_t, ext_th, ext_ph = [], [], []
        for k in range(1, len(t) - 1):
            if (theta[k] - theta[k - 1]) * (theta[k + 1] - theta[k]) < 0.0:
                denom = theta[k - 1] - 2 * theta[k] + theta[k + 1]
                off = 0.0 if denom == 0.0 else 0.5 * (theta[k - 1] - theta[k + 1]) / denom
                dt_loc = t[k + 1] - t[k]
                t_star = t[k] + off * dt_loc
                th_star = theta[k] - 0.25 * (theta[k - 1] - theta[k + 1]) * off
                c2 = (phis[k + 1, i] - 2 * phis[k, i] + phis[k - 1, i]) / (2 * dt_loc ** 2)
                c1 = (phis[k + 1, i] - phis[k - 1, i]) / (2 * dt_loc)
                ph_star = phis[k, i] + c1 * (off * dt_loc) + c2 * (off * dt_loc) ** 2
                ext_t.append(t_star)
                ext_th.append(th_star)
                ext_ph.append(ph_star)
                if len(ext_t) >= half_oscillations + 1:
                    break
        if len(ext_t) < 2:
            raise EquatorialOrbit(f"orbit {i} shows no latitude oscillation")
        k_half = len(ext_t) - 1
        rot = abs(ext_ph[-1] - ext_ph[0]) / (2.0 * np.pi * k_half)
        frac = rot % 1.0
        out.append(
            OscillationData(
                rotation=float(min(frac, 1.0 - frac)),
                extrema_times=np.array(ext_t),
                extrema_theta=np.array(ext_th),
                theta_max=float(np.max(ext_th)),
                theta_min=float(np.min(ext_th)),
            )
        )
    return out


def rotation_number(metric, init: ch.PhaseState, half_oscillations=16, opts=None) -> float:
    data = rotation_numbers(
        metric, init.as_array()[None, :], np.array([int(init.chart)]), half_oscillations, opts
    )
    return data[0].rotation


# ---------------------------------------------------------------------------
# intersections


def _images_coincide(rec_a, rec_b, tol=1e-6):
    probe_a = rec_a.xyz[:: max(1, len(rec_a.xyz) // 128)]
    probe_b = rec_b.xyz[:: max(1, len(rec_b.xyz) // 128)]
    return (
        float(_points_to_curve(probe_a, rec_b.xyz).max()) < tol
        and float(_points_to_curve(probe_b, rec_a.xyz).max()) < tol
    )


def count_intersections(rec_a: ClosedGeodesicRecord, rec_b: ClosedGeodesicRecord, merge_tol=1e-3) -> int:
    """Transversal crossings of two closed spherical polylines.

    Segment pairs are tested with the great-circle intersection construction
    and nearby crossing points (duplicates from shared nodes and psi-orbit
    coincidences) are merged below `merge_tol`.
    """
    if _images_coincide(rec_a, rec_b):
        raise IdenticalImages("curves have the same image")
    a = rec_a.xyz
    b = rec_b.xyz
    a2 = np.roll(a, -1, axis=0)
    na = np.cross(a, a2)
    good_a = np.linalg.norm(na, axis=1) > 1e-15
    pts = []
    for j in range(len(b)):
        u, v = b[j], b[(j + 1) % len(b)]
        nb = np.cross(u, v)
        if np.linalg.norm(nb) < 1e-15:
            continue
        d = np.cross(na, nb)
        dn = np.linalg.norm(d, axis=1)
        cand = good_a & (dn > 1e-14)
        if not np.any(cand):
            continue
        dd = d[cand] / dn[cand][:, None]
        for sign in (1.0, -1.0):
            p = sign * dd
            in_a = (np.einsum("ij,ij->i", np.cross(a[cand], p), na[cand]) >= 0.0) & (
                np.einsum("ij,ij->i", np.cross(p, a2[cand]), na[cand]) >= 0.0
            )
            in_b = (np.cross(u[None, :], p) @ nb >= 0.0) & (np.cross(p, v[None, :]) @ nb >= 0.0)
            for row in p[in_a & in_b]:
                pts.append(row)
    if not pts:
        return 0
    pts = np.array(pts)
    merged = []
    used = np.zeros(len(pts), dtype=bool)
    for i in range(len(pts)):
        if used[i]:
            continue
        cluster = np.linalg.norm(pts - pts[i], axis=1) < merge_tol
        used |= cluster
        merged.append(pts[cluster].mean(axis=0))
    return len(merged)


# ---------------------------------------------------------------------------
# reversibility, first integrals, rotation angle


def reversibility_defect(metric: Metric, rec: ClosedGeodesicRecord, opts=None) -> float:
    """Max base-curve distance of the reversed-start orbit to the curve image.

    Constructs the unit covector whose velocity is the reversed tangent at a
    point of the curve, integrates it for the reversed length of the loop
    (the integral of F(-velocity) along the record), and measures the
    deviation from the record's image.  Zero within tolerance iff the closed
    geodesic is geodesically reversible.
    """
    if rec.residual > 1e-6:
        raise ValueError("record residual too large for a reversibility test")
    opts = opts or IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    stride = max(1, int(round(0.05 / SAMPLE_DT)))
    idx = np.arange(0, len(rec.states), stride)
    vels = np.real(metric.velocity(rec.states[idx], rec.charts[idx]))
    # every metric in this family has the longitude rotation as an isometry,
    # so the reversed-norm integrand repeats at equal (theta, velocity)
    cache = {}

    def f_rev_at(k, vel):
        key = (int(rec.charts[k]), round(float(rec.states[k][0]), 9),
               round(float(vel[0]), 9), round(float(vel[1]), 9))
        if key not in cache:
            cache[key] = primal_norm(
                metric, rec.states[k][0], rec.states[k][1], -vel, int(rec.charts[k])
            )
        return cache[key]

    f_rev = np.array([f_rev_at(k, vels[j]) for j, k in enumerate(idx)])
    ts = idx * SAMPLE_DT
    if ts[-1] < rec.length:
        ts = np.append(ts, rec.length)
        f_rev = np.append(f_rev, f_rev[0])
    l_rev = float(np.trapezoid(f_rev, ts))

    z0 = rec.states[0]
    chart0 = int(rec.charts[0])
    v0 = np.real(metric.velocity(z0[None, :], np.array([chart0])))[0]
    pt, pf = covector_of_velocity(metric, z0[0], z0[1], -v0, chart0)
    rev_init = np.array([z0[0], z0[1], pt, pf])
    states, charts_arr = _resample_via_metric(metric, rev_init, chart0, l_rev, opts)
    xyz_rev, _ = ch.ambient_of(states, charts_arr)
    probe = xyz_rev[:: max(1, len(xyz_rev) // 600)]
    return float(np.max(_points_to_curve(probe, rec.xyz)))


def _points_to_curve(points, curve):
    """Distance from points to a closed sampled curve, cubic-refined.

    The local interpolant is parametrized by chord length and duplicate
    nodes are collapsed, so closure seams (short final segment, repeated
    closing sample) do not distort the fit.
    """
    m = len(curve)
    d2 = np.linalg.norm(points[:, None, :] - curve[None, :, :], axis=-1)
    nearest = np.argmin(d2, axis=1)
    out = np.empty(len(points))
    for i, j in enumerate(nearest):
        idx = [(j + off) % m for off in (-2, -1, 0, 1, 2)]
        seg = [curve[idx[0]]]
        center = 0
        for pos, k in enumerate(idx[1:], start=1):
            if np.linalg.norm(curve[k] - seg[-1]) > 1e-12:
                seg.append(curve[k])
            if k == j:
                center = len(seg) - 1
        seg = np.array(seg)
        if len(seg) < 2:
            out[i] = float(np.linalg.norm(points[i] - seg[0]))
            continue
        ts = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(seg, axis=0), axis=1))])
        ts = ts - ts[center]
        deg = min(3, len(seg) - 1)
        coeff = np.polyfit(ts, seg, deg)
        s = 0.0
        lo, hi = ts[0] - 0.5 * (ts[1] - ts[0]), ts[-1] + 0.5 * (ts[-1] - ts[-2])
        for _ in range(4):
            c = np.array([np.polyval(coeff[:, k], s) for k in range(3)])
            dc = np.array([np.polyval(np.polyder(coeff[:, k]), s) for k in range(3)])
            denom = dc @ dc
            if denom < 1e-14:
                break
            s = float(np.clip(s - ((c - points[i]) @ dc) / denom, lo, hi))
        c = np.array([np.polyval(coeff[:, k], s) for k in range(3)])
        out[i] = np.linalg.norm(points[i] - c)
    return out


def integral_drift(traj: Trajectory, stride: int = 1):
    """(max |F*-1|, max |p_phi - p_phi(0)|) over the sampled orbit.

    p_phi is the momentum paired with the rotational field, evaluated
    chart-independently, so the drift is meaningful through chart switches.
    """
    idx = np.unique(np.concatenate([np.arange(0, len(traj.t), stride), [len(traj.t) - 1]]))
    vals = np.real(traj.metric.dual(traj.states[idx], traj.charts[idx]))
    pf = killing_pairing(traj.states[idx], traj.charts[idx])
    return float(np.max(np.abs(vals - 1.0))), float(np.max(np.abs(pf - pf[0])))


def estimate_lambda(metric: Metric, n_points: int = 4, directions: int = 12, opts=None, spread_tol=1e-5):
    """Rotation angle from the arc-pi return map at equatorial sample points."""
    opts = opts or IntegratorOptions(rel_tol=1e-12, abs_tol=1e-14)
    lams = []
    for phi0 in np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False):
        (_, phi_c), spread = psi_map(metric, (0.0, phi0), directions, opts)
        if spread > spread_tol:
            raise NotConstantCurvature(
                f"pencil endpoint spread {spread:.3e} exceeds {spread_tol:.1e}"
            )
        lam_raw = ch.wrap_angle(phi_c - phi0) / (2.0 * np.pi)
        lams.append(min(lam_raw, 1.0 - lam_raw))
    return float(np.mean(lams))
