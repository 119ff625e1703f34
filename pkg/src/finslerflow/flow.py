"""Co-geodesic (Hamiltonian) flow of a dual norm on the unit level of T*S^2.

The flow of a degree-1 homogeneous Hamiltonian parametrizes geodesics by
arc length on the unit level, so trajectory time equals Finsler length.
Integration is adaptive Dormand-Prince 5(4) with two safeguards:

* projective rescaling p -> p / F* after every accepted step, which pins the
  orbit to the compact energy level without a structure-preserving scheme;
* dual polar charts with a latitude switch threshold, so the coordinate
  singularities at either pole pair are never approached in the active
  chart.

The exact flow of the deformed family is also available in closed form
(`oracle_katok`): the round great-circle flow composed with the cotangent
lift of the rotation by alpha*t about the z-axis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import charts as ch
from .errors import NotNormalized, InadmissibleAlpha
from .integrator import check_step, dp_step, error_norm, next_step
from .metrics import Metric

NORMALIZED_TOL = 1e-9


@dataclass
class IntegratorOptions:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 0.05
    chart_switch_threshold: float = 1.0
    sample_interval: float = 0.01

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_step", "chart_switch_threshold", "sample_interval"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.chart_switch_threshold >= np.pi / 2 - 0.2:
            raise ValueError("chart_switch_threshold must stay below pi/2 - 0.2")


@dataclass
class IntegratorStats:
    steps: int = 0
    max_energy_drift: float = 0.0
    chart_switches: int = 0

    def to_dict(self):
        return {
            "steps": self.steps,
            "max_energy_drift": self.max_energy_drift,
            "chart_switches": self.chart_switches,
        }


@dataclass
class Trajectory:
    """Sampled orbit of the co-geodesic flow, parametrized by arc length."""

    metric: Metric
    t: np.ndarray
    states: np.ndarray
    charts: np.ndarray
    phi_unwrapped: np.ndarray
    stats: IntegratorStats

    @property
    def final_state(self) -> ch.PhaseState:
        return ch.PhaseState.from_array(self.states[-1], self.charts[-1])

    def base_xyz(self):
        x, _ = ch.ambient_of(self.states, self.charts)
        return x

    def theta_z(self):
        """Z-polar latitude along the orbit (from ambient height)."""
        return np.arcsin(np.clip(self.base_xyz()[:, 2], -1.0, 1.0))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "chart", "theta", "phi", "ptheta", "pphi", "phi_unwrapped"])
            for k in range(len(self.t)):
                w.writerow(
                    [
                        repr(float(self.t[k])),
                        ch.ChartId(int(self.charts[k])).name.lower(),
                        repr(float(self.states[k, 0])),
                        repr(float(self.states[k, 1])),
                        repr(float(self.states[k, 2])),
                        repr(float(self.states[k, 3])),
                        repr(float(self.phi_unwrapped[k])),
                    ]
                )

    def summary_dict(self):
        return {
            "length": float(self.t[-1] - self.t[0]),
            "samples": int(len(self.t)),
            **self.stats.to_dict(),
        }

    def to_json_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class BatchResult:
    t: float
    states: np.ndarray
    charts: np.ndarray
    phi_hat: np.ndarray
    stats: IntegratorStats
    sample_t: list = field(default_factory=list)
    sample_states: list = field(default_factory=list)
    sample_charts: list = field(default_factory=list)
    sample_phi: list = field(default_factory=list)


def _cos_theta_z(states, charts):
    z3 = np.where(
        charts == ch.CHART_Z,
        np.sin(states[:, 0]),
        -np.cos(states[:, 0]) * np.cos(states[:, 1]),
    )
    return np.sqrt(np.maximum(1.0 - z3 ** 2, 0.0))


def run_flow(
    metric: Metric,
    states0,
    charts0,
    length,
    opts: IntegratorOptions | None = None,
    *,
    sample_interval=None,
    observer=None,
    direction=1,
    renormalize=True,
    record=False,
) -> BatchResult:
    """Advance a batch of phase points by the given arc length.

    `observer(t, states, charts, phi_hat)` is called after every accepted
    step (and once at t = 0).  With `record=True`, samples are stored at
    multiples of `sample_interval` (which also caps the step so sample times
    are hit exactly).  `direction=-1` integrates the time-reversed flow.
    """
    opts = opts or IntegratorOptions()
    y = np.array(np.atleast_2d(states0), dtype=float)
    charts = np.array(np.atleast_1d(charts0), dtype=int).copy()
    n = y.shape[0]
    stats = IntegratorStats()
    phi_z = ch.phi_z_of(y, charts)
    phi_hat = phi_z.copy()
    res = BatchResult(0.0, y, charts, phi_hat, stats)

    def rhs(_t, yy):
        out = metric.hamilton_rhs(yy, charts)
        return out if direction == 1 else -out

    def take_sample(t):
        res.sample_t.append(t)
        res.sample_states.append(y.copy())
        res.sample_charts.append(charts.copy())
        res.sample_phi.append(phi_hat.copy())

    t = 0.0
    if record:
        take_sample(0.0)
    if observer is not None:
        observer(0.0, y, charts, phi_hat)
    next_sample = sample_interval if (record and sample_interval) else None
    h = min(opts.max_step, 0.01, length)

    while t < length - 1e-13:
        h = min(h, opts.max_step, length - t)
        if next_sample is not None:
            h = min(h, max(next_sample - t, 1e-13))
        # keep per-step longitude change below pi near the z-poles
        cz = float(np.min(_cos_theta_z(y, charts)))
        if cz < 0.2:
            h = min(h, max(0.005, 1.2 * cz))
        y5, err = dp_step(rhs, t, y, h)
        en = error_norm(err, y, y5, opts.rel_tol, opts.abs_tol)
        if en <= 1.0:
            t += h
            y = y5
            if renormalize:
                vals = np.real(metric.dual(y, charts))
                stats.max_energy_drift = max(stats.max_energy_drift, float(np.max(np.abs(vals - 1.0))))
                y[:, 2] /= vals
                y[:, 3] /= vals
            switch = np.abs(y[:, 0]) > opts.chart_switch_threshold
            if np.any(switch):
                for i in np.nonzero(switch)[0]:
                    other = ch.CHART_X if charts[i] == ch.CHART_Z else ch.CHART_Z
                    y[i] = ch.convert(y[i][None, :], np.array([charts[i]]), other)[0]
                    charts[i] = other
                stats.chart_switches += int(switch.sum())
            new_phi_z = ch.phi_z_of(y, charts)
            phi_hat += ch.wrap_pi(new_phi_z - phi_z)
            phi_z = new_phi_z
            stats.steps += 1
            if next_sample is not None and t >= next_sample - 1e-12:
                take_sample(t)
                next_sample += sample_interval
            if observer is not None:
                observer(t, y, charts, phi_hat)
        h = next_step(h, en)
        check_step(h, t)

    if record and (not res.sample_t or res.sample_t[-1] < length - 1e-12):
        take_sample(length)
    res.t = t
    res.states = y
    res.charts = charts
    res.phi_hat = phi_hat
    return res


def check_normalized(metric: Metric, init: ch.PhaseState):
    val = metric.dual_state(init)
    if abs(val - 1.0) > NORMALIZED_TOL:
        raise NotNormalized(f"F*(init) = {val}, expected 1 within {NORMALIZED_TOL}")


def integrate(metric: Metric, init: ch.PhaseState, length: float, opts=None, method="auto") -> Trajectory:
    """Integrate the unit-speed co-geodesic flow and sample the orbit.

    `method="auto"` lets a metric that carries an exact transport
    construction (the perturbed variant) produce trajectories through it;
    `method="direct"` always runs the adaptive integrator on F*.
    """
    if length <= 0.0:
        raise ValueError("length must be positive")
    check_normalized(metric, init)
    if method == "auto" and hasattr(metric, "pushforward_trajectory"):
        return metric.pushforward_trajectory(init, length, opts)
    opts = opts or IntegratorOptions()
    res = run_flow(
        metric,
        init.as_array()[None, :],
        np.array([int(init.chart)]),
        length,
        opts,
        sample_interval=opts.sample_interval,
        record=True,
    )
    return Trajectory(
        metric=metric,
        t=np.array(res.sample_t),
        states=np.stack([s[0] for s in res.sample_states]),
        charts=np.array([c[0] for c in res.sample_charts]),
        phi_unwrapped=np.array([p[0] for p in res.sample_phi]),
        stats=res.stats,
    )


def flow_endpoints(metric: Metric, states, charts, t, opts=None, renormalize=True):
    """Final phase points after flowing each row for arc length t."""
    if hasattr(metric, "pushforward_endpoints"):
        return metric.pushforward_endpoints(states, charts, t)
    res = run_flow(metric, states, charts, t, opts, renormalize=renormalize)
    return res.states, res.charts


# -- exact flow of the deformed family --------------------------------------


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    zeros = np.zeros_like(c)
    ones = np.ones_like(c)
    return np.stack(
        [
            np.stack([c, -s, zeros], axis=-1),
            np.stack([s, c, zeros], axis=-1),
            np.stack([zeros, zeros, ones], axis=-1),
        ],
        axis=-2,
    )


def oracle_katok_states(alpha, init_arr, chart, ts, chart_threshold=1.0):
    """Exact deformed-flow states at parameter values ts (vectorized).

    The flow of F0 + alpha*xi(X) is the round great-circle flow composed
    with the cotangent lift of rotation by alpha*t about the z-axis; both
    factors are in closed form.  Works on any energy level.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    x0, u0 = ch.ambient_of(np.asarray(init_arr, dtype=float)[None, :], np.array([chart]))
    x0, u0 = x0[0], u0[0]
    c = np.linalg.norm(u0)
    uhat = u0 / c
    ct, st = np.cos(ts)[:, None], np.sin(ts)[:, None]
    x = x0 * ct + uhat * st
    u = c * (-x0 * st + uhat * ct)
    rot = _rot_z(alpha * ts)
    x = np.einsum("tij,tj->ti", rot, x)
    u = np.einsum("tij,tj->ti", rot, u)
    lat = np.arcsin(np.clip(x[:, 2], -1.0, 1.0))
    out_charts = np.where(np.abs(lat) > chart_threshold, ch.CHART_X, ch.CHART_Z)
    states = np.empty((len(ts), 4))
    for cid in (ch.CHART_Z, ch.CHART_X):
        m = out_charts == cid
        if np.any(m):
            states[m] = ch.chart_of(x[m], u[m], cid)
    return states, out_charts


def oracle_katok(alpha: float, init: ch.PhaseState, t: float) -> ch.PhaseState:
    """Exact phase point of the Katok(alpha) flow at parameter t."""
    if abs(alpha) >= 1.0:
        raise InadmissibleAlpha(f"|alpha| = {abs(alpha)} >= 1")
    states, out_charts = oracle_katok_states(alpha, init.as_array(), int(init.chart), [t])
    return ch.PhaseState.from_array(states[0], out_charts[0])


def psi_map(metric: Metric, base_point, directions: int = 12, opts=None):
    """Endpoint data of the arc-length-pi pencil from a base point.

    Integrates `directions` unit geodesics from (theta, phi) for arc length
    pi and returns ((theta_c, phi_c), max_spread): the centroid endpoint in
    z-polar coordinates and the maximum pairwise great-circle distance of
    the endpoints.  For a constant-flag-curvature-1 metric the pencil
    refocuses, so the spread is at integrator-noise level.
    """
    if directions < 3:
        raise ValueError("need at least 3 directions")
    theta0, phi0 = float(base_point[0]), float(base_point[1])
    angles = 2.0 * np.pi * np.arange(directions) / directions
    states = np.column_stack(
        [
            np.full(directions, theta0),
            np.full(directions, phi0),
            np.cos(angles),
            np.sin(angles),
        ]
    )
    charts = np.full(directions, ch.CHART_Z, dtype=int)
    states = metric.normalize(states, charts)
    final, fin_charts = flow_endpoints(metric, states, charts, np.pi, opts)
    x, _ = ch.ambient_of(final, fin_charts)
    centroid = x.mean(axis=0)
    centroid /= np.linalg.norm(centroid)
    spread = 0.0
    for i in range(directions):
        for j in range(i + 1, directions):
            spread = max(spread, float(ch.sphere_distance(x[i], x[j])))
    theta_c = float(np.arcsin(np.clip(centroid[2], -1.0, 1.0)))
    phi_c = float(ch.wrap_angle(np.arctan2(centroid[1], centroid[0])))
    return (theta_c, phi_c), spread
