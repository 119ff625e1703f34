"""Dual Finsler norms on T*S^2: the round co-metric, its rotational Zermelo
deformations, and generic Legendre/convexity machinery.

The round co-norm in either polar chart is

    F0(theta, p_theta, p_phi) = sqrt(p_theta^2 + p_phi^2 / cos(theta)^2),

and the deformed family adds a multiple of the momentum paired with the
rotational vector field X = d/dphi of the z-polar chart:

    F_alpha = F0 + alpha * xi(X).

In the z-polar chart xi(X) = p_phi; in the x-polar chart the same pairing is
-p_theta sin(phi) + p_phi tan(theta) cos(phi).  Deformations with the same X
compose additively, so a chained deformation of a deformation evaluates like
a single one with the summed parameter.

All evaluators are vectorized over (N, 4) state arrays with per-row chart
tags, and accept complex momenta/angles so that Hessians can be taken by
complex-step differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .charts import CHART_Z, ChartId, PhaseState
from .errors import (
    DegenerateWind,
    InadmissibleAlpha,
    NumericalBreakdown,
    PoleSingularity,
)

POLE_COS_FLOOR = 1e-9
RATIONAL_TOL = 1e-12
RATIONAL_Q_CAP = 10 ** 6


def _check_poles(theta):
    if np.any(np.cos(np.real(theta)) < POLE_COS_FLOOR):
        raise PoleSingularity("covector evaluated too close to a chart pole")


def killing_pairing(states, charts):
    """xi(X) for X = d/dphi of the z-polar chart, evaluated per row."""
    states = np.atleast_2d(np.asarray(states))
    charts = np.broadcast_to(np.asarray(charts), states.shape[:-1])
    theta, phi = states[..., 0], states[..., 1]
    pt, pf = states[..., 2], states[..., 3]
    out = np.where(
        charts == CHART_Z,
        pf,
        -pt * np.sin(phi) + pf * np.tan(theta) * np.cos(phi),
    )
    return out


def killing_pairing_grad(states, charts):
    """Gradient of xi(X) wrt (theta, phi, p_theta, p_phi), per row."""
    states = np.atleast_2d(np.asarray(states))
    charts = np.broadcast_to(np.asarray(charts), states.shape[:-1])
    theta, phi = states[..., 0], states[..., 1]
    pt, pf = states[..., 2], states[..., 3]
    g = np.zeros_like(states)
    zmask = charts == CHART_Z
    g[..., 3] = np.where(zmask, 1.0, 0.0)
    if np.any(~zmask):
        ct, st = np.cos(theta), np.sin(theta)
        cf, sf = np.cos(phi), np.sin(phi)
        gx_t = pf * cf / ct ** 2
        gx_f = -pt * cf - pf * (st / ct) * sf
        gx_pt = -sf
        gx_pf = (st / ct) * cf
        g[..., 0] = np.where(zmask, g[..., 0], gx_t)
        g[..., 1] = np.where(zmask, g[..., 1], gx_f)
        g[..., 2] = np.where(zmask, g[..., 2], gx_pt)
        g[..., 3] = np.where(zmask, g[..., 3], gx_pf)
    return g


class Metric:
    """Common surface of all metric variants.

    Subclasses provide `dual` / `dual_grad` (vectorized) and the rotation
    angle data.  Everything else (Hamiltonian vector field, normalization,
    Legendre maps, convexity probes) is generic.
    """

    variant = "abstract"

    def dual(self, states, charts):
        raise NotImplementedError

    def dual_grad(self, states, charts):
        """Return (values, gradients) of F* wrt (theta, phi, p_theta, p_phi)."""
        raise NotImplementedError

    @property
    def lambda_raw(self) -> float:
        raise NotImplementedError

    @property
    def lambda_norm(self) -> float:
        lr = self.lambda_raw
        return min(lr, 1.0 - lr)

    # -- generic machinery -------------------------------------------------

    def dual_state(self, state: PhaseState) -> float:
        return float(self.dual(state.as_array()[None, :], np.array([int(state.chart)]))[0])

    def hamilton_rhs(self, states, charts):
        """Symplectic gradient of F*: (H_pt, H_pf, -H_th, -H_ph)."""
        _, g = self.dual_grad(states, charts)
        rhs = np.empty_like(g)
        rhs[..., 0] = g[..., 2]
        rhs[..., 1] = g[..., 3]
        rhs[..., 2] = -g[..., 0]
        rhs[..., 3] = -g[..., 1]
        return rhs

    def normalize(self, states, charts):
        """Scale momenta onto the unit level (projective rescaling)."""
        states = np.array(np.atleast_2d(states), dtype=float)
        vals = self.dual(states, charts)
        states[..., 2] /= vals
        states[..., 3] /= vals
        return states

    def normalized_state(self, state: PhaseState) -> PhaseState:
        arr = self.normalize(state.as_array()[None, :], np.array([int(state.chart)]))[0]
        return PhaseState.from_array(arr, state.chart)

    def velocity(self, states, charts):
        """Fiber gradient of (1/2)(F*)^2: base velocity (v_theta, v_phi)."""
        vals, g = self.dual_grad(states, charts)
        return vals[..., None] * g[..., 2:4]

    def fiber_hessian_fd(self, state_arr, chart, h=1e-4):
        """Central-difference fiber Hessian of (1/2)(F*)^2 at one state."""
        base = np.asarray(state_arr, dtype=float)
        charts = np.array([chart])

        def q(pt, pf):
            s = base.copy()
            s[2], s[3] = pt, pf
            val = self.dual(s[None, :], charts)[0]
            if not np.isfinite(val) or val <= 0.0:
                raise NumericalBreakdown(
                    "difference stencil left the admissible cone of the dual norm"
                )
            return 0.5 * val ** 2

        pt0, pf0 = base[2], base[3]
        q0 = q(pt0, pf0)
        qpp = q(pt0 + h, pf0)
        qpm = q(pt0 - h, pf0)
        qfp = q(pt0, pf0 + h)
        qfm = q(pt0, pf0 - h)
        hxx = (qpp - 2.0 * q0 + qpm) / h ** 2
        hyy = (qfp - 2.0 * q0 + qfm) / h ** 2
        hxy = (
            q(pt0 + h, pf0 + h) - q(pt0 + h, pf0 - h) - q(pt0 - h, pf0 + h) + q(pt0 - h, pf0 - h)
        ) / (4.0 * h ** 2)
        return np.array([[hxx, hxy], [hxy, hyy]])


class ZermeloMetric(Metric):
    """Round co-metric deformed by alpha * xi(X), X = d/dphi (z-polar).

    alpha_total = 0 is the round metric.  Admissible iff |alpha_total| < 1;
    the raw rotation angle is (1 + alpha_total) / 2.
    """

    def __init__(self, alpha_total: float):
        if abs(alpha_total) >= 1.0:
            raise InadmissibleAlpha(
                f"|alpha| = {abs(alpha_total)} >= 1: deformed norm not positive"
            )
        self.alpha_total = float(alpha_total)

    variant = "katok"

    @property
    def lambda_raw(self) -> float:
        return 0.5 * (1.0 + self.alpha_total)

    def round_dual(self, states, charts):
        states = np.atleast_2d(np.asarray(states))
        theta = states[..., 0]
        _check_poles(theta)
        pt, pf = states[..., 2], states[..., 3]
        return np.sqrt(pt ** 2 + (pf / np.cos(theta)) ** 2)

    def dual(self, states, charts):
        f0 = self.round_dual(states, charts)
        if self.alpha_total == 0.0:
            return f0
        return f0 + self.alpha_total * killing_pairing(states, charts)

    def dual_grad(self, states, charts):
        states = np.atleast_2d(np.asarray(states))
        theta = states[..., 0]
        _check_poles(theta)
        pt, pf = states[..., 2], states[..., 3]
        c = np.cos(theta)
        f0 = np.sqrt(pt ** 2 + (pf / c) ** 2)
        g = np.zeros_like(states)
        g[..., 0] = pf ** 2 * np.sin(theta) / (c ** 3 * f0)
        g[..., 2] = pt / f0
        g[..., 3] = pf / (c ** 2 * f0)
        vals = f0
        if self.alpha_total != 0.0:
            vals = f0 + self.alpha_total * killing_pairing(states, charts)
            g = g + self.alpha_total * killing_pairing_grad(states, charts)
        return vals, g

    def fiber_hessian_analytic(self, state_arr, chart):
        """Closed-form fiber Hessian of (1/2)(F*)^2 (z-polar chart states)."""
        theta, _, pt, pf = (float(v) for v in state_arr)
        _check_poles(np.array([theta]))
        c2 = np.cos(theta) ** 2
        a = np.array([1.0, 1.0 / c2])
        f0 = np.sqrt(pt ** 2 + pf ** 2 / c2)
        ap = a * np.array([pt, pf])
        hess_f0 = np.diag(a) / f0 - np.outer(ap, ap) / f0 ** 3
        grad = ap / f0
        if chart == CHART_Z:
            grad = grad + np.array([0.0, self.alpha_total])
        else:
            raise NotImplementedError("analytic fiber Hessian provided in z-polar only")
        f = f0 + self.alpha_total * pf
        return np.outer(grad, grad) + f * hess_f0


class RoundMetric(ZermeloMetric):
    variant = "round"

    def __init__(self):
        super().__init__(0.0)


class KatokMetric(ZermeloMetric):
    variant = "katok"

    def __init__(self, alpha: float):
        super().__init__(alpha)
        self.alpha = float(alpha)


class ChainMetric(Metric):
    """Zermelo deformation applied on top of an existing metric.

    Evaluates base dual + alpha * xi(X); with a Katok base this agrees with
    the single deformation of the summed parameter.
    """

    variant = "chain"

    def __init__(self, base: Metric, alpha: float):
        total = alpha + getattr(base, "alpha_total", 0.0)
        if abs(total) >= 1.0:
            raise InadmissibleAlpha(
                f"chained parameter {total} outside the admissible range (-1, 1)"
            )
        self.base = base
        self.alpha = float(alpha)
        self.alpha_total = total

    @property
    def lambda_raw(self) -> float:
        return 0.5 * (1.0 + self.alpha_total)

    def dual(self, states, charts):
        return self.base.dual(states, charts) + self.alpha * killing_pairing(states, charts)

    def dual_grad(self, states, charts):
        vals, g = self.base.dual_grad(states, charts)
        return (
            vals + self.alpha * killing_pairing(states, charts),
            g + self.alpha * killing_pairing_grad(states, charts),
        )

    def fiber_hessian_analytic(self, state_arr, chart):
        if not isinstance(self.base, ZermeloMetric):
            raise NotImplementedError
        return ZermeloMetric(self.alpha_total).fiber_hessian_analytic(state_arr, chart)


# -- spec-surface operations ----------------------------------------------


def round_dual_norm(state: PhaseState) -> float:
    """Round co-norm sqrt(p_theta^2 + p_phi^2/cos^2 theta) at one state."""
    return RoundMetric().dual_state(state)


def zermelo_dual(base: Metric, alpha: float, state: PhaseState) -> float:
    """F*(state) + alpha * xi(X) with admissibility check on the total."""
    return ChainMetric(base, alpha).dual_state(state)


def katok_primal_norm(alpha, point, v):
    """Primal deformed norm from the navigation quadratic.

    Solves F^2 (1 - |W|_h^2) + 2 F h(v, W) - h(v, v) = 0 for the positive
    root, with h the round metric and wind W = alpha * d/dphi.
    """
    theta = float(point[0])
    c2 = np.cos(theta) ** 2
    w2 = alpha ** 2 * c2
    if 1.0 - w2 <= 0.0:
        raise DegenerateWind(f"wind h-norm^2 = {w2} >= 1 at theta = {theta}")
    vt, vf = float(v[0]), float(v[1])
    hvv = vt ** 2 + c2 * vf ** 2
    hvw = alpha * c2 * vf
    return (np.sqrt(hvw ** 2 + (1.0 - w2) * hvv) - hvw) / (1.0 - w2)


def legendre_dual_velocity(metric: Metric, state: PhaseState):
    """Fiber gradient of (1/2)(F*)^2: the velocity dual to the covector.

    For a unit-level covector this is the F-unit velocity of the geodesic
    through the base point.
    """
    v = metric.velocity(state.as_array()[None, :], np.array([int(state.chart)]))[0]
    return float(v[0]), float(v[1])


def fiber_hessian_min_eigen(metric: Metric, state: PhaseState, h: float = 1e-4) -> float:
    """Minimum eigenvalue of the fiber Hessian of (1/2)(F*)^2 at `state`.

    Positive value certifies strict convexity of the dual unit ball near the
    state's ray.  Central differences with the given step on the momentum
    components (state expected at unit level).
    """
    hess = metric.fiber_hessian_fd(state.as_array(), int(state.chart), h=h)
    tr = hess[0, 0] + hess[1, 1]
    det = hess[0, 0] * hess[1, 1] - hess[0, 1] ** 2
    disc = max(tr ** 2 - 4.0 * det, 0.0)
    return 0.5 * (tr - np.sqrt(disc))


def fiber_hessian_min_eigen_batch(metric: Metric, states, charts, h: float = 1e-4):
    """Vectorized minimum eigenvalue of the fiber Hessian of (1/2)(F*)^2."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    charts = np.broadcast_to(np.asarray(charts), states.shape[:-1])

    def q(dpt, dpf):
        s = states.copy()
        s[:, 2] += dpt
        s[:, 3] += dpf
        vals = np.real(metric.dual(s, charts))
        if np.any(~np.isfinite(vals)) or np.any(vals <= 0.0):
            raise NumericalBreakdown("stencil left the admissible cone of the dual norm")
        return 0.5 * vals ** 2

    q0 = q(0.0, 0.0)
    hxx = (q(h, 0.0) - 2.0 * q0 + q(-h, 0.0)) / h ** 2
    hyy = (q(0.0, h) - 2.0 * q0 + q(0.0, -h)) / h ** 2
    hxy = (q(h, h) - q(h, -h) - q(-h, h) + q(-h, -h)) / (4.0 * h ** 2)
    tr = hxx + hyy
    det = hxx * hyy - hxy ** 2
    return 0.5 * (tr - np.sqrt(np.maximum(tr ** 2 - 4.0 * det, 0.0)))


def rational_rotation(lam: float, tol: float = RATIONAL_TOL, q_cap: int = RATIONAL_Q_CAP):
    """Detect lam = p/(2q) in lowest terms via continued-fraction convergents.

    Returns (p, q) with gcd(p, q) = 1 and q <= q_cap, or None.
    """
    frac = Fraction(lam).limit_denominator(2 * q_cap)
    if abs(float(frac) - lam) > tol:
        return None
    a, b = frac.numerator, frac.denominator
    if b % 2 == 0:
        p, q = a, b // 2
    else:
        p, q = 2 * a, b
    if q > q_cap or p <= 0:
        return None
    return p, q


@dataclass
class SpectrumReport:
    """Analytic closed-geodesic length data for rotation angle lam."""

    lam: float
    mu: float
    rational: Optional[tuple]
    L_short: float
    L_long: float
    reciprocal_sum: float
    common_period: Optional[float]

    def to_dict(self):
        return {
            "lambda": self.lam,
            "mu": self.mu,
            "rational": None if self.rational is None else {"p": self.rational[0], "q": self.rational[1]},
            "L_short": self.L_short,
            "L_long": self.L_long,
            "reciprocal_sum": self.reciprocal_sum,
            "common_period": self.common_period,
        }


def spectrum(lam: float) -> SpectrumReport:
    """Exceptional lengths, mu, and common period for lam in (0, 1/2].

    L_short = pi/(1-lam), L_long = pi/lam, and 1/L_short + 1/L_long = 1/pi
    identically.  When lam = p/(2q) the common period of all geodesics is
    2*q*pi; a second exceptional geodesic (shorter than the common period)
    exists iff p > 1.
    """
    if not 0.0 < lam <= 0.5:
        raise ValueError(f"rotation angle must lie in (0, 1/2], got {lam}")
    l_short = np.pi / (1.0 - lam)
    l_long = np.pi / lam
    rat = rational_rotation(lam)
    common = 2.0 * np.pi * rat[1] if rat is not None else None
    return SpectrumReport(
        lam=lam,
        mu=1.0 / (2.0 * (1.0 - lam)),
        rational=rat,
        L_short=float(l_short),
        L_long=float(l_long),
        reciprocal_sum=float(1.0 / l_short + 1.0 / l_long),
        common_period=common,
    )


# -- primal-side helpers (support-function duality) -------------------------


def covector_of_velocity(metric: Metric, theta, phi, v, chart=CHART_Z, n_scan=48):
    """Unit-level covector whose dual velocity points along v.

    Strict convexity makes the fiber Gauss map a circle homeomorphism, so a
    bracketed angular root solve is reliable.
    """
    from scipy.optimize import brentq

    v = np.asarray(v, dtype=float)
    target = np.arctan2(v[1], v[0])

    def mismatch(psi):
        arr = np.array([theta, phi, np.cos(psi), np.sin(psi)])[None, :]
        arr = metric.normalize(arr, np.array([chart]))
        vel = np.real(metric.velocity(arr, np.array([chart])))[0]
        d = np.arctan2(vel[1], vel[0]) - target
        return np.pi - np.mod(np.pi - d, 2.0 * np.pi)

    psis = np.linspace(-np.pi, np.pi, n_scan, endpoint=False)
    scan = np.column_stack(
        [np.full(n_scan, theta), np.full(n_scan, phi), np.cos(psis), np.sin(psis)]
    )
    scan_charts = np.full(n_scan, chart)
    scan = metric.normalize(scan, scan_charts)
    vels = np.real(metric.velocity(scan, scan_charts))
    d = np.arctan2(vels[:, 1], vels[:, 0]) - target
    vals = np.pi - np.mod(np.pi - d, 2.0 * np.pi)
    idx = int(np.argmin(np.abs(vals)))
    if abs(vals[idx]) < 1e-14:
        root = psis[idx]
    else:
        root = None
        for k in range(n_scan):
            a, b = psis[k], psis[(k + 1) % n_scan] + (2.0 * np.pi if k + 1 == n_scan else 0.0)
            fa, fb = vals[k], vals[(k + 1) % n_scan]
            if fa * fb < 0.0 and abs(fa - fb) < np.pi:  # avoid the wrap discontinuity
                root = brentq(mismatch, a, b, xtol=1e-14)
                break
        if root is None:
            raise NumericalBreakdown("velocity direction solve failed to bracket")
    arr = np.array([theta, phi, np.cos(root), np.sin(root)])[None, :]
    arr = metric.normalize(arr, np.array([chart]))
    return arr[0, 2], arr[0, 3]


def primal_norm(metric: Metric, theta, phi, v, chart=CHART_Z) -> float:
    """F(v) for any metric variant, via the supporting unit covector."""
    pt, pf = covector_of_velocity(metric, theta, phi, v, chart)
    return float(pt * v[0] + pf * v[1])


def legendre_primal_to_dual(metric: Metric, theta, phi, v, chart=CHART_Z):
    """Forward Legendre transform D(1/2 F^2): velocity -> covector."""
    pt, pf = covector_of_velocity(metric, theta, phi, v, chart)
    f = pt * v[0] + pf * v[1]
    return f * pt, f * pf


# -- serialization -----------------------------------------------------------


def metric_config(metric: Metric) -> dict:
    if isinstance(metric, RoundMetric):
        return {"variant": "round"}
    if isinstance(metric, KatokMetric):
        return {"variant": "katok", "alpha": metric.alpha}
    if isinstance(metric, ChainMetric):
        return {"variant": "chain", "base": metric_config(metric.base), "alpha": metric.alpha}
    if metric.variant == "perturbed":
        return {"variant": "perturbed", "params": metric.params.to_dict()}
    raise ValueError(f"unknown metric variant {metric.variant!r}")


def make_metric(config: dict) -> Metric:
    variant = config["variant"].lower()
    if variant == "round":
        return RoundMetric()
    if variant == "katok":
        return KatokMetric(float(config["alpha"]))
    if variant == "chain":
        return ChainMetric(make_metric(config["base"]), float(config["alpha"]))
    if variant == "perturbed":
        from .counterexample import CounterexampleParams, PerturbedMetric

        params = config.get("params", {})
        if not isinstance(params, CounterexampleParams):
            params = CounterexampleParams(**params)
        return PerturbedMetric(params)
    raise ValueError(f"unknown metric variant {variant!r}")


def equatorial_covector(metric: Metric, phi=0.0, eastward=True) -> PhaseState:
    """Unit covector tangent to the equator (the exceptional orbits' seeds)."""
    pf = 1.0 if eastward else -1.0
    arr = metric.normalize(
        np.array([[0.0, phi, 0.0, pf]]), np.array([CHART_Z])
    )[0]
    return PhaseState.from_array(arr, ChartId.ZPOLAR)
