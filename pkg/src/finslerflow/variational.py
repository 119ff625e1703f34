"""Linearized flow along orbits: Jacobi-type transverse solutions, conjugate
times, and the flag-curvature profile they encode.

The linearization of Hamilton's equations of F* is integrated together with
the orbit; the initial perturbation is vertical (fiber direction), tangent
to the energy level, and scaled so the transverse displacement has unit
initial rate.  The scalar displacement y(t) is measured in the fundamental
tensor norm at the orbit velocity: g^v is the inverse of the fiber Hessian
of (1/2)(F*)^2 at the dual covector, and y is the g^v-component of the base
projection of the solution along the g^v-unit normal to the velocity (the
parallel transverse frame in dimension 2).

For constant flag curvature 1 the scalar satisfies y'' + y = 0, so y = sin t
and the first conjugate time is pi.  K(t) = -y''(t)/y(t) recovers the flag
curvature along the orbit away from zeros of y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import charts as ch
from .errors import NotNormalized
from .flow import IntegratorOptions, NORMALIZED_TOL
from .integrator import check_step, dp_step, error_norm, next_step
from .metrics import Metric

CS_STEP = 1e-20  # complex-step size; derivatives exact to machine precision


def dual_hessian(metric: Metric, states, charts):
    """4x4 Hessians of F* per row.

    Uses a metric-specific override when present (the perturbed variant),
    otherwise complex-step differentiation of the analytic gradient.
    """
    custom = getattr(metric, "dual_hessian_states", None)
    if custom is not None:
        return custom(states, charts)
    return dual_hessian_cs(metric, states, charts)


def dual_hessian_cs(metric: Metric, states, charts, h=CS_STEP):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = states.shape[0]
    out = np.empty((n, 4, 4))
    for j in range(4):
        zp = states.astype(complex)
        zp[:, j] += 1j * h
        _, g = metric.dual_grad(zp, charts)
        out[:, :, j] = g.imag / h
    return 0.5 * (out + np.transpose(out, (0, 2, 1)))


def fiber_hessian_q(metric: Metric, states, charts):
    """Fiber Hessian of (1/2)(F*)^2 per row: g_p g_p^T + F* H_pp."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    vals, g = metric.dual_grad(states, charts)
    hess = dual_hessian(metric, states, charts)
    gp = g[:, 2:4]
    return gp[:, :, None] * gp[:, None, :] + vals[:, None, None] * hess[:, 2:4, 2:4]


def _transverse_frame(metric, states, charts):
    """Velocity v, metric g = (fiber Hessian)^{-1}, and g-unit normal n.

    Where the fiber Hessian fails to be positive definite (possible inside
    the transition shell of the perturbed variant) the fundamental tensor is
    undefined; those rows come back NaN and downstream consumers skip them.
    """
    states = np.atleast_2d(states)
    vel = np.real(metric.velocity(states, charts))
    gq = fiber_hessian_q(metric, states, charts)
    det = gq[:, 0, 0] * gq[:, 1, 1] - gq[:, 0, 1] * gq[:, 1, 0]
    bad = (det <= 0.0) | (gq[:, 0, 0] + gq[:, 1, 1] <= 0.0)
    det = np.where(bad, np.nan, det)
    g = np.empty_like(gq)
    g[:, 0, 0] = gq[:, 1, 1] / det
    g[:, 1, 1] = gq[:, 0, 0] / det
    g[:, 0, 1] = -gq[:, 0, 1] / det
    g[:, 1, 0] = -gq[:, 1, 0] / det
    gv = np.einsum("nij,nj->ni", g, vel)
    n_raw = np.stack([-gv[:, 1], gv[:, 0]], axis=-1)
    with np.errstate(invalid="ignore"):
        norms = np.sqrt(np.einsum("ni,nij,nj->n", n_raw, g, n_raw))
    return vel, g, n_raw / norms[:, None]


@dataclass
class JacobiRecord:
    """Transverse variational data along one orbit."""

    times: np.ndarray
    y: np.ndarray
    conjugate_times: list
    K_times: np.ndarray
    K: np.ndarray

    @property
    def first_conjugate_time(self):
        return self.conjugate_times[0] if self.conjugate_times else None


def _seed_perturbation(metric, state_arr, chart):
    """Vertical, energy-tangent seed with unit transverse rate."""
    from .errors import NumericalBreakdown

    states = state_arr[None, :]
    charts = np.array([chart])
    vel, g, n = _transverse_frame(metric, states, charts)
    v = vel[0]
    dp0 = np.array([-v[1], v[0]])
    hess = dual_hessian(metric, states, charts)[0]
    w = hess[2:4, 2:4] @ dp0  # initial transverse rate dq'(0)
    with np.errstate(invalid="ignore"):
        scale = np.sqrt(w @ g[0] @ w)
    if not np.isfinite(scale) or scale <= 0.0:
        raise NumericalBreakdown(
            "fundamental tensor not positive at the initial covector; "
            "cannot normalize the transverse seed"
        )
    dp0 = dp0 / scale
    w = w / scale
    if w @ g[0] @ n[0] < 0.0:
        dp0, w = -dp0, -w
    return np.concatenate([np.zeros(2), dp0])


def variational_flow(
    metric: Metric,
    init: ch.PhaseState,
    horizon: float,
    opts: IntegratorOptions | None = None,
    seed=None,
) -> JacobiRecord:
    """Integrate orbit + linearization and extract the transverse scalar.

    Returns a JacobiRecord with y sampled at opts.sample_interval, refined
    conjugate times (zeros of y after t = 0), and the curvature profile
    K = -y''/y evaluated on a centered 5-point stencil where |y| > 0.05.
    """
    recs = variational_flow_batch(metric, init.as_array()[None, :], np.array([int(init.chart)]), horizon, opts, seeds=None if seed is None else [seed])
    return recs[0]


def variational_flow_batch(metric, inits, charts, horizon, opts=None, seeds=None):
    """Batched variational integration; one JacobiRecord per row."""
    opts = opts or IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    charts = np.array(np.atleast_1d(charts), dtype=int).copy()
    n = inits.shape[0]
    vals = np.real(metric.dual(inits, charts))
    if np.any(np.abs(vals - 1.0) > NORMALIZED_TOL):
        raise NotNormalized("variational flow requires unit-level initial covectors")

    y8 = np.empty((n, 8))
    y8[:, :4] = inits
    for i in range(n):
        y8[i, 4:] = (
            _seed_perturbation(metric, inits[i], charts[i])
            if seeds is None
            else np.asarray(seeds[i], dtype=float)
        )

    def rhs(_t, yy):
        z, dz = yy[..., :4], yy[..., 4:]
        f = metric.hamilton_rhs(z, charts)
        hess = dual_hessian(metric, np.real(z), charts)
        hdz = np.einsum("nij,nj->ni", hess, dz)
        df = np.empty_like(dz)
        df[..., 0] = hdz[..., 2]
        df[..., 1] = hdz[..., 3]
        df[..., 2] = -hdz[..., 0]
        df[..., 3] = -hdz[..., 1]
        return np.concatenate([f, df], axis=-1)

    sample_t = [0.0]
    samples = [y8.copy()]
    sample_charts = [charts.copy()]
    t = 0.0
    h = min(opts.sample_interval, opts.max_step)
    next_sample = opts.sample_interval
    while t < horizon - 1e-13:
        h = min(h, opts.max_step, horizon - t, max(next_sample - t, 1e-13))
        y5, err = dp_step(rhs, t, y8, h)
        en = error_norm(err, y8, y5, opts.rel_tol, opts.abs_tol)
        if en <= 1.0:
            t += h
            y8 = y5
            vals = np.real(metric.dual(y8[:, :4], charts))
            y8[:, 2] /= vals
            y8[:, 3] /= vals
            switch = np.abs(y8[:, 0]) > opts.chart_switch_threshold
            for i in np.nonzero(switch)[0]:
                other = ch.CHART_X if charts[i] == ch.CHART_Z else ch.CHART_Z
                jac = ch.conversion_jacobian(y8[i, :4], charts[i], other)
                y8[i, :4] = ch.convert(y8[i, :4][None, :], np.array([charts[i]]), other)[0]
                y8[i, 4:] = jac @ y8[i, 4:]
                charts[i] = other
            if t >= next_sample - 1e-12:
                sample_t.append(t)
                samples.append(y8.copy())
                sample_charts.append(charts.copy())
                next_sample += opts.sample_interval
        h = next_step(h, en)
        check_step(h, t)

    times = np.array(sample_t)
    blocks = np.stack(samples)  # (M, n, 8)
    chs = np.stack(sample_charts)  # (M, n)
    records = []
    for i in range(n):
        z = blocks[:, i, :4]
        dq = blocks[:, i, 4:6]
        _, g, nvec = _transverse_frame(metric, z, chs[:, i])
        y = np.einsum("mi,mij,mj->m", dq, g, nvec)
        records.append(_build_record(times, y, opts.sample_interval))
    return records


def _build_record(times, y, dt) -> JacobiRecord:
    conj = _refine_zeros(times, y, t_min=0.5)
    with np.errstate(invalid="ignore"):
        mask = np.abs(y) > 0.05
    mask[:2] = False
    mask[-2:] = False
    idx = np.nonzero(mask)[0]
    ypp = np.full(len(y), np.nan)
    for k in idx:
        ypp[k] = (-y[k - 2] + 16 * y[k - 1] - 30 * y[k] + 16 * y[k + 1] - y[k + 2]) / (
            12.0 * dt ** 2
        )
    K = -ypp[idx] / y[idx]
    finite = np.isfinite(K)
    return JacobiRecord(
        times=times, y=y, conjugate_times=conj, K_times=times[idx][finite], K=K[finite]
    )


def _refine_zeros(times, y, t_min=0.5):
    """Zeros of the sampled scalar: bisection brackets refined by secant.

    Works on a local cubic interpolant through the four samples around each
    sign change; the interpolant is accurate to O(dt^4), far below the
    refinement target.
    """
    zeros = []
    with np.errstate(invalid="ignore"):
        sign_change = np.nonzero((y[:-1] * y[1:] < 0.0) & (times[:-1] >= t_min))[0]
    for k in sign_change:
        lo = max(k - 1, 0)
        hi = min(k + 3, len(times))
        ts, ys = times[lo:hi], y[lo:hi]
        if not np.all(np.isfinite(ys)):
            continue
        coeff = np.polyfit(ts - ts[0], ys, deg=min(3, len(ts) - 1))
        a, b = times[k] - ts[0], times[k + 1] - ts[0]
        fa, fb = np.polyval(coeff, a), np.polyval(coeff, b)
        for _ in range(8):  # bisection to localize
            mid = 0.5 * (a + b)
            fm = np.polyval(coeff, mid)
            if fa * fm <= 0.0:
                b, fb = mid, fm
            else:
                a, fa = mid, fm
        x0, x1, f0, f1 = a, b, fa, fb
        for _ in range(60):  # secant to 1e-10
            if f1 == f0:
                break
            x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
            x0, f0, x1 = x1, f1, x2
            f1 = np.polyval(coeff, x1)
            if abs(x1 - x0) < 1e-10:
                break
        zeros.append(float(x1 + ts[0]))
    return zeros
