"""Spherical polar charts on S^2 and the cotangent-bundle coordinate machinery.

Two charts are used throughout.  The z-polar chart is the classical one:
theta is latitude in [-pi/2, pi/2] with poles on the z-axis, phi is
longitude mod 2*pi, and the embedding is

    x(theta, phi) = (cos(theta) cos(phi), cos(theta) sin(phi), sin(theta)).

The x-polar chart is the same construction precomposed with the fixed
rotation R taking the z-axis to the x-axis (rotation by +pi/2 about y), so
its poles sit on the x-axis.  Each chart is singular only at its own poles,
and the two singular sets are a quarter-turn apart, so an orbit can always
be tracked in at least one of them.

Covectors are represented in two equivalent ways: chart components
(p_theta, p_phi), or an ambient vector u in R^3 tangent to the sphere with
xi(w) = <u, w> for tangent vectors w (u is the round-metric dual of xi).
All conversions below go through the ambient form and are exact up to
roundoff.

Conventions: arrays of phase points have shape (N, 4) with columns
(theta, phi, p_theta, p_phi); chart tags are small ints CHART_Z / CHART_X.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

TWO_PI = 2.0 * np.pi


class ChartId(IntEnum):
    ZPOLAR = 0
    XPOLAR = 1


CHART_Z = int(ChartId.ZPOLAR)
CHART_X = int(ChartId.XPOLAR)

# Fixed rotation mapping the z-polar chart to the x-polar one: R z^ = x^.
# R (a,b,c) = (c, b, -a); inverse (a,b,c) -> (-c, b, a).
_ROT = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
_ROT_INV = _ROT.T


@dataclass
class PhaseState:
    """A point of T*S^2 in an explicit chart.

    phi is stored wrapped to [0, 2*pi).  Momenta are unit-level normalized
    only when the constructor of the owning metric says so; this container
    does not enforce it.
    """

    chart: ChartId
    theta: float
    phi: float
    p_theta: float
    p_phi: float

    def __post_init__(self):
        self.chart = ChartId(self.chart)
        self.phi = float(np.mod(self.phi, TWO_PI))
        if abs(self.theta) > np.pi / 2 + 1e-12:
            raise ValueError(f"latitude out of range: theta={self.theta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.p_theta, self.p_phi])

    @classmethod
    def from_array(cls, arr, chart=ChartId.ZPOLAR) -> "PhaseState":
        t, f, pt, pf = (float(v) for v in arr)
        return cls(ChartId(chart), t, f, pt, pf)


def wrap_angle(phi):
    """Wrap to [0, 2*pi)."""
    return np.mod(phi, TWO_PI)


def wrap_pi(dphi):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(dphi), TWO_PI)


def _chart_frame(theta, phi):
    """Embedding point and coordinate basis of the canonical polar chart.

    Returns (x, t_theta, t_phi) where t_theta = dx/dtheta (unit) and
    t_phi = dx/dphi (norm cos(theta)).  Shapes broadcast over inputs; the
    leading axis of the result indexes R^3 components.
    """
    ct, st = np.cos(theta), np.sin(theta)
    cf, sf = np.cos(phi), np.sin(phi)
    x = np.stack([ct * cf, ct * sf, st], axis=-1)
    t_theta = np.stack([-st * cf, -st * sf, ct], axis=-1)
    t_phi = np.stack([-ct * sf, ct * cf, np.zeros_like(ct)], axis=-1)
    return x, t_theta, t_phi


def ambient_of(states, charts):
    """Chart phase points -> ambient (x, u), both (N, 3).

    u is the round dual of the covector: u = p_theta * t_theta
    + p_phi * t_phi / cos^2(theta), tangent to the sphere at x.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    charts = np.broadcast_to(np.asarray(charts), states.shape[:-1])
    theta, phi, pt, pf = states[..., 0], states[..., 1], states[..., 2], states[..., 3]
    x, t_theta, t_phi = _chart_frame(theta, phi)
    c2 = np.cos(theta) ** 2
    u = pt[..., None] * t_theta + (pf / c2)[..., None] * t_phi
    mask_x = charts == CHART_X
    if np.any(mask_x):
        x = np.where(mask_x[..., None], x @ _ROT.T, x)
        u = np.where(mask_x[..., None], u @ _ROT.T, u)
    return x, u


def chart_of(x, u, chart):
    """Ambient (x, u) -> phase points in the requested chart, (N, 4)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if chart == CHART_X:
        x = x @ _ROT_INV.T
        u = u @ _ROT_INV.T
    theta = np.arcsin(np.clip(x[..., 2], -1.0, 1.0))
    phi = wrap_angle(np.arctan2(x[..., 1], x[..., 0]))
    _, t_theta, t_phi = _chart_frame(theta, phi)
    pt = np.sum(u * t_theta, axis=-1)
    pf = np.sum(u * t_phi, axis=-1)
    return np.stack([theta, phi, pt, pf], axis=-1)


def convert(states, charts_from, chart_to):
    """Convert phase points between charts (exact away from both pole pairs)."""
    x, u = ambient_of(states, charts_from)
    return chart_of(x, u, chart_to)


def convert_state(state: PhaseState, chart_to) -> PhaseState:
    out = convert(state.as_array()[None, :], np.array([int(state.chart)]), int(chart_to))
    return PhaseState.from_array(out[0], chart_to)


def phi_z_of(states, charts):
    """Z-polar longitude of phase points given in either chart."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    charts = np.broadcast_to(np.asarray(charts), states.shape[:-1])
    phi = states[..., 1].copy()
    mask_x = charts == CHART_X
    if np.any(mask_x):
        x, _ = ambient_of(states[mask_x], np.full(int(mask_x.sum()), CHART_X))
        phi[mask_x] = wrap_angle(np.arctan2(x[:, 1], x[:, 0]))
    return phi


def conversion_jacobian(state, chart_from, chart_to):
    """4x4 Jacobian of the chart conversion map at `state` (analytic).

    Composes d(ambient)/d(chart_from) with d(chart_to)/d(ambient); used to
    transport variational (tangent) vectors across a chart switch.
    """
    state = np.asarray(state, dtype=float)
    theta, phi, pt, pf = state
    x, t_th, t_ph = (v[0] for v in _chart_frame(np.array([theta]), np.array([phi])))
    c, s = np.cos(theta), np.sin(theta)
    c2 = c * c
    u = pt * t_th + (pf / c2) * t_ph

    # d(x,u)/d(theta,phi,pt,pf), each column a 6-vector (dx, du).
    J_amb = np.zeros((6, 4))
    J_amb[0:3, 0] = t_th
    J_amb[0:3, 1] = t_ph
    # du/dtheta = -pt*x + pf*(s/c^3)*t_ph
    J_amb[3:6, 0] = -pt * x + pf * (s / c ** 3) * t_ph
    # du/dphi = -pt*(s/c)*t_ph - pf*x + pf*(s/c)*t_th
    J_amb[3:6, 1] = -pt * (s / c) * t_ph - pf * x + pf * (s / c) * t_th
    J_amb[3:6, 2] = t_th
    J_amb[3:6, 3] = t_ph / c2

    R = np.eye(3)
    if chart_from == CHART_X:
        R = _ROT
    if chart_to == CHART_X:
        R = _ROT_INV @ R
    R6 = np.zeros((6, 6))
    R6[:3, :3] = R
    R6[3:, 3:] = R
    J_amb = R6 @ J_amb

    # Target-chart coordinates of the (rotated) ambient point.
    out = convert(state[None, :], np.array([chart_from]), chart_to)[0]
    th2, ph2 = out[0], out[1]
    x2, t_th2, t_ph2 = (v[0] for v in _chart_frame(np.array([th2]), np.array([ph2])))
    c_2, s_2 = np.cos(th2), np.sin(th2)
    xa = (R6[:3, :3] @ x)
    ua = (R6[:3, :3] @ u)

    # d(theta2,phi2,pt2,pf2)/d(x,u) at (xa, ua).
    J_chart = np.zeros((4, 6))
    J_chart[0, 0:3] = np.array([0.0, 0.0, 1.0]) / c_2  # dtheta = dx3/cos(theta)
    denom = xa[0] ** 2 + xa[1] ** 2
    J_chart[1, 0] = -xa[1] / denom
    J_chart[1, 1] = xa[0] / denom
    # dpt = du.t_th + u.(dt_th/dth dth + dt_th/dph dph); dt_th/dth = -x,
    # dt_th/dph = -(s/c) t_ph.
    u_dot_x = float(ua @ x2)
    u_dot_tph = float(ua @ t_ph2)
    u_dot_tth = float(ua @ t_th2)
    J_chart[2, 0:3] = -u_dot_x * J_chart[0, 0:3] - (s_2 / c_2) * u_dot_tph * J_chart[1, 0:3]
    J_chart[2, 3:6] = t_th2
    # dpf = du.t_ph + u.(dt_ph/dth dth + dt_ph/dph dph); dt_ph/dth = -(s/c) t_ph,
    # dt_ph/dph = -c^2 x + s c t_th.
    J_chart[3, 0:3] = (
        -(s_2 / c_2) * u_dot_tph * J_chart[0, 0:3]
        + (s_2 * c_2 * u_dot_tth - c_2 ** 2 * u_dot_x) * J_chart[1, 0:3]
    )
    J_chart[3, 3:6] = t_ph2

    return J_chart @ J_amb


def phase_distance(states_a, charts_a, state_b, chart_b):
    """Chart-wise Euclidean distance on (theta, phi mod 2pi, p_theta, p_phi).

    Both sides are expressed in the z-polar chart and the phi difference is
    taken on the circle.  This is the closure/recurrence metric used
    throughout; it is a convention, adequate away from the z-poles.
    """
    a = np.atleast_2d(np.asarray(states_a, dtype=float))
    ca = np.broadcast_to(np.asarray(charts_a), a.shape[:-1])
    if np.any(ca == CHART_X):
        a = np.where((ca == CHART_X)[..., None], convert(a, ca, CHART_Z), a)
    b = np.asarray(state_b, dtype=float)
    if chart_b == CHART_X:
        b = convert(b[None, :], np.array([CHART_X]), CHART_Z)[0]
    d_th = a[..., 0] - b[0]
    d_ph = wrap_pi(a[..., 1] - b[1])
    d_pt = a[..., 2] - b[2]
    d_pf = a[..., 3] - b[3]
    return np.sqrt(d_th ** 2 + d_ph ** 2 + d_pt ** 2 + d_pf ** 2)


def sphere_distance(xyz_a, xyz_b):
    """Great-circle distance between unit vectors (broadcasts).

    Computed from the chord, which stays well conditioned for nearly
    coincident points (arccos of the dot product loses half the digits).
    """
    chord = np.linalg.norm(np.asarray(xyz_a) - np.asarray(xyz_b), axis=-1)
    return 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))


def base_xyz(theta, phi):
    """Embedding of z-polar base coordinates (vectorized)."""
    x, _, _ = _chart_frame(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
    return x
