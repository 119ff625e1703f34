"""The perturbed metric with exactly two disjoint closed geodesics.

Construction: start from a deformed metric whose normalized rotation angle
is irrational, so the equatorial orbits (eastward and westward lifts) are
its only closed geodesics.  A compactly supported Hamiltonian that equals
+p_theta near the eastward lift and -p_theta near the westward lift
generates a symplectic map Phi_t whose plateau action is the pure latitude
shift (theta, phi, p) -> (theta +- t, phi, p).  The new dual norm is the
degree-1 homogenization of G o Phi_{t0} (G the base dual norm): F_bar(p) is
the unique r > 0 with G(Phi_{t0}(p / r)) = 1.  Its unit-level flow has
exactly two closed orbits, the transported equatorial lifts, whose base
curves are the latitude circles theta = -t0 (eastward) and theta = +t0
(westward): disjoint.

The perturbation Hamiltonian used here is the product-bump extension

    H = sign(p_phi) * p_theta * B(theta/w_theta)
        * B(p_theta/(w_p |p_phi|)) * B((G - 1)/w_energy),

with B a C-infinity plateau bump.  The momentum-tube factor is scaled by
|p_phi| so the support stays away from p_phi = 0, and the energy factor
confines H to a shell around the unit level; H vanishes identically outside
the two tubes, so Phi_t is the identity there and the perturbed norm equals
the base norm exactly.

Orbits of the perturbed flow are produced two ways: the transport path
(exact closed-form base flow composed with Phi, the construction itself)
and direct integration of F_bar with gradients from the implicit root
equation.  The two are cross-checked in the test suite.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import charts as ch
from .errors import RootBracketFailure
from .flow import IntegratorOptions, IntegratorStats, Trajectory
from .metrics import KatokMetric, Metric

SQRT2 = math.sqrt(2.0)


@dataclass
class CounterexampleParams:
    base_alpha: float = SQRT2 - 1.0
    t0: float = 0.05
    w_theta: float = 0.15
    w_p: float = 0.15
    w_energy: float = 0.25
    plateau: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.plateau < 1.0:
            raise ValueError("plateau fraction must lie in (0, 1)")
        for name in ("w_theta", "w_p", "w_energy"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not abs(self.base_alpha) < 1.0:
            raise ValueError("base deformation parameter must satisfy |alpha| < 1")
        if self.t0 < 0.0:
            raise ValueError("deformation time must be nonnegative")
        if self.t0 >= self.plateau * self.w_theta:
            raise ValueError(
                f"t0 = {self.t0} must stay below plateau * w_theta = "
                f"{self.plateau * self.w_theta}: the deformed orbits must "
                "remain inside the bump plateau"
            )

    def to_dict(self):
        return {
            "base_alpha": self.base_alpha,
            "t0": self.t0,
            "w_theta": self.w_theta,
            "w_p": self.w_p,
            "w_energy": self.w_energy,
            "plateau": self.plateau,
        }


# ---------------------------------------------------------------------------
# bump machinery (complex-safe: branch on real parts, smooth arithmetic)


def _mollifier(s):
    return cmath.exp(-1.0 / s) if s.real > 0.0 else 0.0


def _sigma(s):
    fs = _mollifier(complex(s))
    f1 = _mollifier(complex(1.0 - s))
    return fs / (fs + f1)


def _sigma_d(s):
    s = complex(s)
    fs = _mollifier(s)
    f1 = _mollifier(1.0 - s)
    if fs == 0.0 or f1 == 0.0:
        return (fs / (fs + f1) if (fs + f1) != 0.0 else 0.0), 0.0
    dfs = fs / s ** 2
    df1 = f1 / (1.0 - s) ** 2
    tot = fs + f1
    return fs / tot, (dfs * f1 + fs * df1) / tot ** 2


def bump(u, plateau: float = 0.5):
    """C-infinity cutoff: 1 on |u| <= plateau, 0 on |u| >= 1, monotone between."""
    arr = np.asarray(u)
    if arr.ndim == 0:
        val = _bump_scalar(complex(u), plateau)
        return val if isinstance(u, complex) else float(val.real)
    out = np.zeros(arr.shape, dtype=complex if np.iscomplexobj(arr) else float)
    res = out.ravel()
    for i, val in enumerate(arr.ravel()):
        b = _bump_scalar(complex(val), plateau)
        res[i] = b if np.iscomplexobj(arr) else b.real
    return out


def _bump_scalar(u: complex, plateau: float) -> complex:
    au = u if u.real >= 0.0 else -u
    if au.real <= plateau:
        return 1.0 + 0.0j
    if au.real >= 1.0:
        return 0.0 + 0.0j
    return _sigma((1.0 - au) / (1.0 - plateau))


def _bump_scalar_d(u: complex, plateau: float):
    """(value, d/du) of the bump."""
    sign = 1.0 if u.real >= 0.0 else -1.0
    au = sign * u
    if au.real <= plateau:
        return 1.0 + 0.0j, 0.0 + 0.0j
    if au.real >= 1.0:
        return 0.0 + 0.0j, 0.0 + 0.0j
    val, dv = _sigma_d((1.0 - au) / (1.0 - plateau))
    return val, -sign * dv / (1.0 - plateau)


# ---------------------------------------------------------------------------
# perturbation Hamiltonian and its flow (z-polar chart)


def _base_norm_scalar(alpha, th, pt, pf):
    c = cmath.cos(th)
    f0 = cmath.sqrt(pt * pt + (pf / c) ** 2)
    return f0 + alpha * pf


def _base_norm_grad_scalar(alpha, th, pt, pf):
    """(G, G_theta, G_ptheta, G_pphi) of the base dual norm."""
    c = cmath.cos(th)
    f0 = cmath.sqrt(pt * pt + (pf / c) ** 2)
    g_th = pf * pf * cmath.sin(th) / (c ** 3 * f0)
    return f0 + alpha * pf, g_th, pt / f0, pf / (c * c * f0) + alpha


def perturbation_hamiltonian_scalar(th, pt, pf, params: CounterexampleParams):
    if pf.real == 0.0:
        return 0.0 + 0.0j
    s = 1.0 if pf.real > 0.0 else -1.0
    apf = s * pf
    if abs(pt.real) >= params.w_p * apf.real:
        return 0.0 + 0.0j
    b_th = _bump_scalar(th / params.w_theta, params.plateau)
    if b_th == 0.0:
        return 0.0 + 0.0j
    b_p = _bump_scalar(pt / (params.w_p * apf), params.plateau)
    if b_p == 0.0:
        return 0.0 + 0.0j
    g = _base_norm_scalar(params.base_alpha, th, pt, pf)
    b_e = _bump_scalar((g - 1.0) / params.w_energy, params.plateau)
    return s * pt * b_th * b_p * b_e


def _hamiltonian_grad_scalar(th, pt, pf, params: CounterexampleParams):
    """(H_theta, H_ptheta, H_pphi); H has no phi dependence."""
    if pf.real == 0.0:
        return 0.0 + 0.0j, 0.0 + 0.0j, 0.0 + 0.0j
    s = 1.0 if pf.real > 0.0 else -1.0
    apf = s * pf
    if abs(pt.real) >= params.w_p * apf.real or abs(th.real) >= params.w_theta:
        return 0.0 + 0.0j, 0.0 + 0.0j, 0.0 + 0.0j
    b_th, db_th = _bump_scalar_d(th / params.w_theta, params.plateau)
    b_p, db_p = _bump_scalar_d(pt / (params.w_p * apf), params.plateau)
    if b_th == 0.0 or b_p == 0.0:
        return 0.0 + 0.0j, 0.0 + 0.0j, 0.0 + 0.0j
    g, g_th, g_pt, g_pf = _base_norm_grad_scalar(params.base_alpha, th, pt, pf)
    b_e, db_e = _bump_scalar_d((g - 1.0) / params.w_energy, params.plateau)
    if b_e == 0.0:
        return 0.0 + 0.0j, 0.0 + 0.0j, 0.0 + 0.0j
    core = b_th * b_p * b_e
    h_th = s * pt * (db_th / params.w_theta * b_p * b_e + b_th * b_p * db_e * g_th / params.w_energy)
    h_pt = s * (
        core
        + pt * b_th * db_p * b_e / (params.w_p * apf)
        + pt * b_th * b_p * db_e * g_pt / params.w_energy
    )
    h_pf = s * pt * (
        b_th * db_p * b_e * (-s * pt / (params.w_p * pf * pf))
        + b_th * b_p * db_e * g_pf / params.w_energy
    )
    return h_th, h_pt, h_pf


def _phi_rhs_scalar(state, params, direction):
    th, ph, pt, pf = state
    h_th, h_pt, h_pf = _hamiltonian_grad_scalar(th, pt, pf, params)
    return (direction * h_pt, direction * h_pf, -direction * h_th, 0.0 + 0.0j)


PHI_SUBSTEP = 0.001  # keeps the fixed-substep RK4 map accurate to ~1e-9


def phi_flow_scalar(state, t, params: CounterexampleParams, substep=PHI_SUBSTEP):
    """Fixed-substep RK4 flow of the perturbation Hamiltonian (complex-safe).

    Stationary outside the support, exact latitude shift on the plateau; the
    substep is far below the smoothness scale of the bump, which keeps the
    map accurate to ~1e-10 over |t| <= 0.1.
    """
    if t == 0.0:
        return tuple(complex(v) for v in state)
    z = tuple(complex(v) for v in state)
    if _outside_support_scalar(z[0], z[2], z[3], params):
        return z
    direction = 1.0 if t > 0 else -1.0
    n = max(12, int(math.ceil(abs(t) / substep)))
    h = abs(t) / n
    for _ in range(n):
        k1 = _phi_rhs_scalar(z, params, direction)
        z2 = tuple(z[i] + 0.5 * h * k1[i] for i in range(4))
        k2 = _phi_rhs_scalar(z2, params, direction)
        z3 = tuple(z[i] + 0.5 * h * k2[i] for i in range(4))
        k3 = _phi_rhs_scalar(z3, params, direction)
        z4 = tuple(z[i] + h * k3[i] for i in range(4))
        k4 = _phi_rhs_scalar(z4, params, direction)
        z = tuple(z[i] + (h / 6.0) * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(4))
    return z


def _outside_support_scalar(th, pt, pf, params):
    if pf.real == 0.0:
        return True
    return (
        abs(th.real) >= params.w_theta
        or abs(pt.real) >= params.w_p * abs(pf.real)
    )


def _bump_d_np(u, plateau):
    """Vectorized (value, d/du) of the bump; real or complex arrays."""
    sign = np.where(np.real(u) >= 0.0, 1.0, -1.0)
    au = sign * u
    val = np.ones_like(u)
    dv = np.zeros_like(u)
    re = np.real(au)
    val[re >= 1.0] = 0.0
    trans = (re > plateau) & (re < 1.0)
    if np.any(trans):
        s = (1.0 - au[trans]) / (1.0 - plateau)
        fs = np.exp(-1.0 / s)
        f1 = np.exp(-1.0 / (1.0 - s))
        tot = fs + f1
        val[trans] = fs / tot
        dsig = (fs / s ** 2 * f1 + fs * f1 / (1.0 - s) ** 2) / tot ** 2
        dv[trans] = -sign[trans] * dsig / (1.0 - plateau)
    return val, dv


def _phi_rhs_batch(states, params, direction):
    """Vectorized Hamiltonian vector field of the bump Hamiltonian."""
    th, pt, pf = states[..., 0], states[..., 2], states[..., 3]
    out = np.zeros_like(states)
    re = np.real
    active = (
        (re(pf) != 0.0)
        & (np.abs(re(pt)) < params.w_p * np.abs(re(pf)))
        & (np.abs(re(th)) < params.w_theta)
    )
    if not np.any(active):
        return out
    th, pt, pf = th[active], pt[active], pf[active]
    s = np.where(re(pf) > 0.0, 1.0, -1.0)
    apf = s * pf
    b_th, db_th = _bump_d_np(th / params.w_theta, params.plateau)
    b_p, db_p = _bump_d_np(pt / (params.w_p * apf), params.plateau)
    alpha = params.base_alpha
    c = np.cos(th)
    f0 = np.sqrt(pt * pt + (pf / c) ** 2)
    g = f0 + alpha * pf
    g_th = pf * pf * np.sin(th) / (c ** 3 * f0)
    g_pt = pt / f0
    g_pf = pf / (c * c * f0) + alpha
    b_e, db_e = _bump_d_np((g - 1.0) / params.w_energy, params.plateau)
    core = b_th * b_p * b_e
    h_th = s * pt * (db_th / params.w_theta * b_p * b_e + b_th * b_p * db_e * g_th / params.w_energy)
    h_pt = s * (
        core
        + pt * b_th * db_p * b_e / (params.w_p * apf)
        + pt * b_th * b_p * db_e * g_pt / params.w_energy
    )
    h_pf = s * pt * (
        b_th * db_p * b_e * (-s * pt / (params.w_p * pf * pf))
        + b_th * b_p * db_e * g_pf / params.w_energy
    )
    out[active, 0] = direction * h_pt
    out[active, 1] = direction * h_pf
    out[active, 2] = -direction * h_th
    return out


def phi_flow_batch(states, t, params: CounterexampleParams, substep=PHI_SUBSTEP):
    """Vectorized fixed-substep RK4 of the bump-Hamiltonian flow."""
    z = np.array(states, copy=True)
    if t == 0.0 or z.shape[0] == 0:
        return z
    direction = 1.0 if t > 0 else -1.0
    n = max(12, int(math.ceil(abs(t) / substep)))
    h = abs(t) / n
    for _ in range(n):
        k1 = _phi_rhs_batch(z, params, direction)
        k2 = _phi_rhs_batch(z + 0.5 * h * k1, params, direction)
        k3 = _phi_rhs_batch(z + 0.5 * h * k2, params, direction)
        k4 = _phi_rhs_batch(z + h * k3, params, direction)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


# -- public spec-surface wrappers -------------------------------------------


def perturbation_hamiltonian(state: ch.PhaseState, params: CounterexampleParams) -> float:
    """Value of the compactly supported deformation Hamiltonian."""
    if state.chart != ch.ChartId.ZPOLAR:
        state = ch.convert_state(state, ch.CHART_Z)
    return float(
        perturbation_hamiltonian_scalar(
            complex(state.theta), complex(state.p_theta), complex(state.p_phi), params
        ).real
    )


def deformation_map(state: ch.PhaseState, t: float, params: CounterexampleParams) -> ch.PhaseState:
    """Time-t map of the deformation flow (symplectic up to integrator error)."""
    if state.chart != ch.ChartId.ZPOLAR:
        state = ch.convert_state(state, ch.CHART_Z)
    out = phi_flow_scalar(
        (state.theta, state.phi, state.p_theta, state.p_phi), t, params
    )
    return ch.PhaseState(ch.ChartId.ZPOLAR, out[0].real, out[1].real, out[2].real, out[3].real)


# ---------------------------------------------------------------------------
# the perturbed metric


class PerturbedMetric(Metric):
    """Degree-1 homogenization of (base dual norm) o Phi_{t0}.

    Evaluation strategy per state (z-polar):
      * the scale ray lies outside the support of the bump Hamiltonian
        (scale-invariant test on theta and p_theta/p_phi): Phi fixes every
        scaling, so the norm equals the base norm exactly;
      * the ray sits in the bump plateau: Phi is the exact latitude shift,
        so the norm is the base norm at theta + t0 * sign(p_phi);
      * otherwise: bracketed root solve of G(Phi_{t0}(p/r)) = 1, with
        gradients from the implicit-function formula and the tangent map of
        Phi (complex-step through the flow).
    States in the x-polar chart are always outside the support.
    """

    variant = "perturbed"

    def __init__(self, params: CounterexampleParams, gradient_mode="implicit"):
        self.params = params if isinstance(params, CounterexampleParams) else CounterexampleParams(**params)
        self.base = KatokMetric(self.params.base_alpha)
        if gradient_mode not in ("implicit", "fd"):
            raise ValueError("gradient_mode must be 'implicit' or 'fd'")
        self.gradient_mode = gradient_mode
        self.fd_step = 1e-5
        # warm-start data for consecutive root solves along an orbit
        # (single slot; evaluation is sequential within a flow)
        self._root_hint = None

    @property
    def lambda_raw(self) -> float:
        # rotation angle of the unperturbed base family (the perturbed
        # metric itself is not of constant flag curvature)
        return self.base.lambda_raw

    # -- region tests (scale-invariant, so they classify the whole ray) ----

    def _ray_outside(self, states, charts):
        th, pt, pf = states[:, 0], states[:, 2], states[:, 3]
        outside = (charts == ch.CHART_X) | (np.abs(th) >= self.params.w_theta)
        with np.errstate(invalid="ignore"):
            outside |= np.abs(pt) >= self.params.w_p * np.abs(pf)
        return outside

    def _ray_plateau(self, states, charts):
        p = self.params
        th, pt, pf = states[:, 0], states[:, 2], states[:, 3]
        ok = (charts == ch.CHART_Z) & (np.abs(th) + p.t0 <= 0.98 * p.plateau * p.w_theta)
        with np.errstate(invalid="ignore"):
            ok &= np.abs(pt) <= 0.98 * p.plateau * p.w_p * np.abs(pf)
        return ok

    def _shifted(self, states):
        out = np.array(states, copy=True)
        out[:, 0] = out[:, 0] + self.params.t0 * np.sign(out[:, 3])
        return out

    # -- norm and gradient ---------------------------------------------------

    def dual(self, states, charts):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        charts = np.broadcast_to(np.asarray(charts), states.shape[:-1])
        out = np.empty(states.shape[0])
        outside = self._ray_outside(states, charts)
        plateau = ~outside & self._ray_plateau(states, charts)
        tube = ~outside & ~plateau
        if np.any(outside):
            out[outside] = np.real(self.base.dual(states[outside], charts[outside]))
        if np.any(plateau):
            out[plateau] = np.real(
                self.base.dual(self._shifted(states[plateau]), charts[plateau])
            )
        n_tube = int(np.count_nonzero(tube))
        if n_tube > 2:
            out[tube] = self._dual_roots_batch(states[tube])
        else:
            for i in np.nonzero(tube)[0]:
                out[i] = self._dual_root(states[i])
        return out

    def _dual_roots_batch(self, states, max_iter=80):
        """Vectorized scaling roots via bracketed Illinois iteration."""
        p = self.params
        n = states.shape[0]

        def g(r):
            scaled = states.copy()
            scaled[:, 2] /= r
            scaled[:, 3] /= r
            w = phi_flow_batch(scaled, p.t0, p)
            c = np.cos(w[:, 0])
            return np.sqrt(w[:, 2] ** 2 + (w[:, 3] / c) ** 2) + p.base_alpha * w[:, 3] - 1.0

        r0 = np.real(self.base.dual(self._shifted(states), np.full(n, ch.CHART_Z)))
        lo, hi = 0.8 * r0, 1.3 * r0
        glo, ghi = g(lo), g(hi)
        for _ in range(12):
            bad_lo = glo <= 0.0
            bad_hi = ghi >= 0.0
            if not (bad_lo.any() or bad_hi.any()):
                break
            lo[bad_lo] *= 0.75
            hi[bad_hi] *= 1.35
            glo, ghi = g(lo), g(hi)
        else:
            raise RootBracketFailure("batched scaling-root bracketing failed")
        # Illinois false position: stale-side halving keeps convergence
        # superlinear, one batched g-evaluation per sweep
        side = np.zeros(n)
        for _ in range(max_iter):
            with np.errstate(divide="ignore", invalid="ignore"):
                mid = (glo * hi - ghi * lo) / (glo - ghi)
            mid = np.where(np.isfinite(mid), mid, 0.5 * (lo + hi))
            mid = np.clip(mid, lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo))
            gm = g(mid)
            up = gm > 0.0
            ghi = np.where(up, np.where(side > 0, 0.5 * ghi, ghi), gm)
            glo = np.where(up, gm, np.where(side < 0, 0.5 * glo, glo))
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
            side = np.where(up, 1.0, -1.0)
            if np.max((hi - lo) / lo) < 5e-14:
                break
        return 0.5 * (lo + hi)

    def _dual_root(self, state_z):
        p = self.params
        th, phv, pt, pf = (float(v) for v in state_z)

        def g(r):
            w = phi_flow_scalar((th, phv, pt / r, pf / r), p.t0, p)
            return _base_norm_scalar(p.base_alpha, w[0], w[2], w[3]).real - 1.0

        r0 = float(np.real(self.base.dual(self._shifted(state_z[None, :]), np.array([ch.CHART_Z]))[0]))
        # quasi-Newton from the last solve: consecutive evaluations along an
        # orbit move the root slowly, and the radial slope is cached by the
        # gradient path
        hint = self._root_hint
        if hint is not None and abs(hint[0] - r0) < 0.05 * r0 and hint[1] < 0.0:
            r, slope = r0 if abs(hint[0] / r0 - 1.0) > 0.02 else hint[0], hint[1]
            for _ in range(8):
                val = g(r)
                if abs(val) < 1e-13:
                    self._root_hint = (r, slope)
                    return float(r)
                step = -val / slope
                if abs(step) > 0.1 * r:
                    break
                r += step
        lo, hi = 0.7 * r0, 1.4 * r0
        glo, ghi = g(lo), g(hi)
        for _ in range(12):
            if glo > 0.0 > ghi:
                break
            if glo <= 0.0:
                lo *= 0.7
                glo = g(lo)
            if ghi >= 0.0:
                hi *= 1.4
                ghi = g(hi)
        else:
            raise RootBracketFailure(
                f"could not bracket the scaling root near r ~ {r0} (state {state_z})"
            )
        root = float(brentq(g, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200))
        slope = (g(root * (1.0 + 1e-6)) - g(root * (1.0 - 1e-6))) / (2e-6 * root)
        if slope < 0.0:
            self._root_hint = (root, slope)
        return root

    def _dual_grad_tube(self, state_z, cs_step=1e-20, tangent_substep=0.002):
        """Implicit-function gradient of the homogenized norm at one state.

        The tangent map of the deformation flow is taken by complex step at
        a coarser substep: gradient targets are ~1e-6, far above the map's
        tangent map truncation there.
        """
        p = self.params
        r = self._dual_root(state_z)
        th, phv, pt, pf = (float(v) for v in state_z)
        z = (th, phv, pt / r, pf / r)
        w = phi_flow_scalar(z, p.t0, p)
        _, g_th, g_pt, g_pf = _base_norm_grad_scalar(p.base_alpha, w[0], w[2], w[3])
        dg_w = np.array([g_th.real, 0.0, g_pt.real, g_pf.real])
        m = np.empty((4, 4))
        for j in range(4):
            zc = list(complex(v) for v in z)
            zc[j] += 1j * cs_step
            wc = phi_flow_scalar(tuple(zc), p.t0, p, substep=tangent_substep)
            m[:, j] = [v.imag / cs_step for v in wc]
        a = dg_w @ m  # d(G o Phi)/dz at the scaled state
        denom = a[2] * z[2] + a[3] * z[3]  # radial momentum pairing, = O(1)
        if not np.isfinite(denom) or abs(denom) < 1e-6:
            from .errors import NumericalBreakdown

            raise NumericalBreakdown("level set not star-shaped at the probed ray")
        self._root_hint = (r, -denom / r)  # radial slope of the root equation
        grad = np.empty(4)
        grad[0] = r * a[0] / denom
        grad[1] = r * a[1] / denom
        grad[2] = a[2] / denom
        grad[3] = a[3] / denom
        return r, grad

    def _dual_grad_fd(self, state_z):
        """Central differences on the homogenized norm (step self.fd_step)."""
        h = self.fd_step
        grad = np.empty(4)
        for j in range(4):
            sp = np.array(state_z, dtype=float)
            sm = sp.copy()
            sp[j] += h
            sm[j] -= h
            grad[j] = (
                self.dual(sp[None, :], np.array([ch.CHART_Z]))[0]
                - self.dual(sm[None, :], np.array([ch.CHART_Z]))[0]
            ) / (2 * h)
        return float(self.dual(np.asarray(state_z)[None, :], np.array([ch.CHART_Z]))[0]), grad

    def _grad_at(self, state_z):
        """Gradient of the norm at one z-polar state, any region."""
        s = np.asarray(state_z, dtype=float)[None, :]
        c = np.array([ch.CHART_Z])
        if self._ray_outside(s, c)[0]:
            _, g = self.base.dual_grad(s, c)
            return np.real(g[0])
        if self._ray_plateau(s, c)[0]:
            _, g = self.base.dual_grad(self._shifted(s), c)
            return np.real(g[0])
        if self.gradient_mode == "fd":
            return self._dual_grad_fd(state_z)[1]
        return self._dual_grad_tube(state_z)[1]

    def dual_grad(self, states, charts):
        states = np.atleast_2d(np.asarray(states))
        if np.iscomplexobj(states):
            raise TypeError("perturbed dual norm accepts real states only")
        charts = np.broadcast_to(np.asarray(charts), states.shape[:-1])
        vals = np.empty(states.shape[0])
        grads = np.empty_like(states)
        outside = self._ray_outside(states, charts)
        plateau = ~outside & self._ray_plateau(states, charts)
        tube = ~outside & ~plateau
        if np.any(outside):
            v, g = self.base.dual_grad(states[outside], charts[outside])
            vals[outside] = np.real(v)
            grads[outside] = np.real(g)
        if np.any(plateau):
            v, g = self.base.dual_grad(self._shifted(states[plateau]), charts[plateau])
            vals[plateau] = np.real(v)
            grads[plateau] = np.real(g)
        for i in np.nonzero(tube)[0]:
            if self.gradient_mode == "fd":
                vals[i], grads[i] = self._dual_grad_fd(states[i])
            else:
                vals[i], grads[i] = self._dual_grad_tube(states[i])
        return vals, grads

    def dual_hessian_states(self, states, charts, h=1e-4):
        """4x4 Hessians of F_bar: base complex-step off the tube, gradient
        differences inside it."""
        from .variational import dual_hessian_cs

        states = np.atleast_2d(np.asarray(states, dtype=float))
        charts = np.broadcast_to(np.asarray(charts), states.shape[:-1])
        out = np.empty((states.shape[0], 4, 4))
        outside = self._ray_outside(states, charts)
        plateau = ~outside & self._ray_plateau(states, charts)
        tube = ~outside & ~plateau
        if np.any(outside):
            out[outside] = dual_hessian_cs(self.base, states[outside], charts[outside])
        if np.any(plateau):
            out[plateau] = dual_hessian_cs(
                self.base, self._shifted(states[plateau]), charts[plateau]
            )
        for i in np.nonzero(tube)[0]:
            hess = np.empty((4, 4))
            for j in range(4):
                sp = states[i].copy()
                sm = states[i].copy()
                sp[j] += h
                sm[j] -= h
                hess[:, j] = (self._grad_at(sp) - self._grad_at(sm)) / (2 * h)
            out[i] = 0.5 * (hess + hess.T)
        return out

    # -- transport path (the construction itself) ---------------------------

    def pushforward_samples(self, init_state, init_chart, length, interval=0.01):
        t, states, charts = self._pushforward_path(init_state, init_chart, length, interval)
        return states, charts

    def pushforward_trajectory(self, init: ch.PhaseState, length, opts=None) -> Trajectory:
        opts = opts or IntegratorOptions()
        t, states, charts = self._pushforward_path(
            init.as_array(), int(init.chart), length, opts.sample_interval
        )
        phi_z = ch.phi_z_of(states, charts)
        dphi = ch.wrap_pi(np.diff(phi_z))
        phi_hat = np.concatenate([[phi_z[0]], phi_z[0] + np.cumsum(dphi)])
        stats = IntegratorStats(
            steps=len(t) - 1,
            max_energy_drift=self._drift_estimate(states, charts),
            chart_switches=int(np.count_nonzero(np.diff(charts))),
        )
        return Trajectory(
            metric=self,
            t=t,
            states=states,
            charts=charts,
            phi_unwrapped=phi_hat,
            stats=stats,
        )

    def pushforward_endpoints(self, states, charts, t):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        charts = np.atleast_1d(np.asarray(charts, dtype=int))
        out = np.empty_like(states)
        out_charts = np.empty_like(charts)
        for i in range(states.shape[0]):
            _, ss, cc = self._pushforward_path(states[i], int(charts[i]), t, max(t / 64.0, 0.01))
            out[i] = ss[-1]
            out_charts[i] = cc[-1]
        return out, out_charts

    def _drift_estimate(self, states, charts, stride=37):
        idx = np.arange(0, states.shape[0], stride)
        vals = self.dual(states[idx], charts[idx])
        return float(np.max(np.abs(vals - 1.0)))

    def _pushforward_path(self, init_state, init_chart, length, interval):
        """Arc-length-sampled orbit via the transport construction.

        The base-flow parameter s and the arc length t of the homogenized
        norm agree except inside the transition shell of the bump, where
        dt/ds is the radial derivative of G o Phi_{t0} along the orbit;
        t(s) is accumulated on a support-refined grid and inverted.
        """
        from .flow import oracle_katok_states

        p = self.params
        z0 = np.asarray(init_state, dtype=float)
        if init_chart != ch.CHART_Z:
            z0 = ch.convert(z0[None, :], np.array([init_chart]), ch.CHART_Z)[0]
        w0 = phi_flow_scalar(tuple(z0), p.t0, p)
        w0 = np.array([v.real for v in w0])

        # accumulate t(s) in blocks until the target arc length is covered
        block = max(64.0 * interval, 8.0)
        s_grid = [np.array([0.0])]
        t_grid = [np.array([0.0])]
        s_hi = 0.0
        t_hi = 0.0
        while t_hi < length + 1e-9:
            s_new = np.arange(s_hi, s_hi + block + 0.5 * interval, interval)
            s_new[0] = s_hi
            ws, _ = oracle_katok_states(p.base_alpha, w0, ch.CHART_Z, s_new, chart_threshold=10.0)
            mask = self._w_in_support(ws)
            if np.any(mask):
                refined = [s_new]
                hits = np.nonzero(mask)[0]
                for k in hits:
                    lo = s_new[max(k - 1, 0)]
                    hi = s_new[min(k + 1, len(s_new) - 1)]
                    refined.append(np.linspace(lo, hi, 17))
                s_new = np.unique(np.concatenate(refined))
                ws, _ = oracle_katok_states(p.base_alpha, w0, ch.CHART_Z, s_new, chart_threshold=10.0)
                mask = self._w_in_support(ws)
            integrand = np.ones(len(s_new))
            if np.any(mask):
                integrand[mask] = self._rate_batch(ws[mask])
            seg_t = np.concatenate(
                [[t_hi], t_hi + np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(s_new))]
            )
            s_grid.append(s_new[1:])
            t_grid.append(seg_t[1:])
            s_hi = s_new[-1]
            t_hi = seg_t[-1]
            if s_hi > 10.0 * length + 100.0:
                raise RootBracketFailure("arc-length accumulation failed to progress")
        s_all = np.concatenate(s_grid)
        t_all = np.concatenate(t_grid)

        t_samples = np.arange(0.0, length + 0.5 * interval, interval)
        if t_samples[-1] < length - 1e-12:
            t_samples = np.append(t_samples, length)
        else:
            t_samples[-1] = length
        s_samples = np.interp(t_samples, t_all, s_all)
        ws, _ = oracle_katok_states(p.base_alpha, w0, ch.CHART_Z, s_samples, chart_threshold=10.0)
        zs = ws.copy()
        mask = self._w_in_support(ws)
        if np.any(mask):
            zs[mask] = phi_flow_batch(ws[mask], -p.t0, p)
        charts_out = np.where(np.abs(zs[:, 0]) > 1.0, ch.CHART_X, ch.CHART_Z)
        states_out = zs.copy()
        for cid in (ch.CHART_X,):
            m = charts_out == cid
            if np.any(m):
                states_out[m] = ch.convert(zs[m], np.full(int(m.sum()), ch.CHART_Z), cid)
        return t_samples, states_out, charts_out

    def _w_in_support(self, ws):
        p = self.params
        with np.errstate(invalid="ignore"):
            return (np.abs(ws[:, 0]) < p.w_theta) & (
                np.abs(ws[:, 2]) < p.w_p * np.abs(ws[:, 3])
            )

    def _rate_batch(self, ws, cs_step=1e-20, substep=0.004):
        """dt/ds at transported points: dG(w) . DPhi_{t0}(z) (0, p_z).

        The coarser substep is adequate: the rate only enters the t(s)
        reparametrization, whose target accuracy is ~1e-6.
        """
        p = self.params
        zs = phi_flow_batch(ws, -p.t0, p, substep=substep)
        zc = zs.astype(complex)
        zc[:, 2] += 1j * cs_step * zs[:, 2]
        zc[:, 3] += 1j * cs_step * zs[:, 3]
        wc = phi_flow_batch(zc, p.t0, p, substep=substep)
        dw = wc.imag / cs_step
        _, g = self.base.dual_grad(ws, np.full(len(ws), ch.CHART_Z))
        return np.einsum("ij,ij->i", np.real(g), dw)


# ---------------------------------------------------------------------------
# the spec-surface norm wrapper


def perturbed_dual_norm(state: ch.PhaseState, params: CounterexampleParams) -> float:
    """Homogenized deformed dual norm at one state."""
    metric = PerturbedMetric(params)
    return metric.dual_state(state)


# ---------------------------------------------------------------------------
# end-to-end verification


@dataclass
class CheckResult:
    check: str
    passed: bool
    value: float
    threshold: float
    comparator: str

    def to_dict(self):
        return {
            "check": self.check,
            "pass": bool(self.passed),
            "value": float(self.value),
            "threshold": float(self.threshold),
            "comparator": self.comparator,
        }


@dataclass
class VerificationReport:
    params: CounterexampleParams
    seed: int
    checks: list
    closed_records: list = None  # analysis records of the two closed geodesics

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "seed": self.seed,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _sample_unit_covectors(rng, n, metric, avoid_records=(), min_dist=0.05, theta_cap=1.3):
    out = []
    while len(out) < n:
        th = rng.uniform(-theta_cap, theta_cap)
        phv = rng.uniform(0.0, 2.0 * np.pi)
        psi = rng.uniform(0.0, 2.0 * np.pi)
        arr = metric.normalize(
            np.array([[th, phv, np.cos(psi), np.sin(psi)]]), np.array([ch.CHART_Z])
        )[0]
        near = False
        for rec in avoid_records:
            if float(ch.phase_distance(rec.states, rec.charts, arr, ch.CHART_Z).min()) < min_dist:
                near = True
                break
        if not near:
            out.append(arr)
    return np.array(out)


def _recurrence_floor(metric, init_z, horizon, interval=0.01, coarse=0.05, zoom=0.02, zoom_step=2e-4):
    """Min refined recurrence distance of one orbit (transport path)."""
    from .flow import oracle_katok_states

    p = metric.params
    states, charts = metric.pushforward_samples(init_z, ch.CHART_Z, horizon, interval)
    d = ch.phase_distance(states, charts, init_z, ch.CHART_Z)
    t = np.arange(len(d)) * interval
    best = np.inf
    for k in range(1, len(d) - 1):
        if t[k] <= 0.5 or d[k] >= coarse:
            continue
        if not (d[k] <= d[k - 1] and d[k] < d[k + 1]):
            continue
        # local zoom along the base-flow parameter around the candidate
        z_k = states[k]
        if charts[k] != ch.CHART_Z:
            z_k = ch.convert(z_k[None, :], np.array([charts[k]]), ch.CHART_Z)[0]
        w_k = phi_flow_scalar(tuple(z_k), p.t0, p)
        w_k = np.array([v.real for v in w_k])
        ss = np.arange(-zoom, zoom + 0.5 * zoom_step, zoom_step)
        ws, _ = oracle_katok_states(p.base_alpha, w_k, ch.CHART_Z, ss, chart_threshold=10.0)
        zs = ws.copy()
        mask = metric._w_in_support(ws)
        if np.any(mask):
            zs[mask] = phi_flow_batch(ws[mask], -p.t0, p)
        dz = ch.phase_distance(zs, np.full(len(zs), ch.CHART_Z), init_z, ch.CHART_Z)
        best = min(best, float(dz.min()))
    if not np.isfinite(best):
        best = float(d[t > 0.5].min()) if np.any(t > 0.5) else float("inf")
    return best


def verify_counterexample(
    params: CounterexampleParams | None = None,
    seed: int = 42,
    n_other: int = 50,
    other_horizon: float = 300.0,
    residual_floor: float = 1e-2,
    n_conjugate: int = 20,
    hessian_grid=(20, 20, 40),
) -> VerificationReport:
    """Run the five counterexample checks and report named pass/fail entries.

    (1) the two transported equatorial orbits close with small residual and
    stay pinned to the latitudes -+t0; (2) they are disjoint: zero polyline
    intersections and spherical separation >= 2 t0; (3) seeded random other
    orbits show no recurrence below the residual floor within the horizon;
    (4) the dual norm is fiberwise strictly convex on a sampled grid, and
    conjugate times / curvature profiles stay near the unperturbed values;
    (5) both closed geodesics fail geodesic reversibility.

    Check failures are reported, not raised.
    """
    from .analysis import count_intersections, detect_closure, reversibility_defect
    from .flow import integrate
    from .metrics import fiber_hessian_min_eigen_batch
    from .variational import variational_flow_batch

    params = params or CounterexampleParams()
    metric = PerturbedMetric(params)
    alpha, t0 = params.base_alpha, params.t0
    opts = IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    checks = []

    # -- (i) the two closed geodesics ----------------------------------------
    east = ch.PhaseState(ch.ChartId.ZPOLAR, -t0, 0.0, 0.0, 1.0 / (1.0 + alpha))
    west = ch.PhaseState(ch.ChartId.ZPOLAR, t0, 0.0, 0.0, -1.0 / (1.0 - alpha))
    recs = []
    for init, l_expect in ((east, 2 * np.pi / (1 + alpha)), (west, 2 * np.pi / (1 - alpha))):
        traj = integrate(metric, init, 1.3 * l_expect, opts)
        recs.append(detect_closure(traj, tol=1e-7, opts=opts))
    n_found = sum(r is not None for r in recs)
    checks.append(CheckResult("two_closed_geodesics_found", n_found == 2, n_found, 2, "=="))
    rec_e = rec_w = None
    if n_found == 2:
        rec_e, rec_w = recs
        worst_resid = max(rec_e.residual, rec_w.residual)
        checks.append(CheckResult("closed_geodesic_residual", worst_resid <= 1e-6, worst_resid, 1e-6, "<="))
        pin = max(
            float(np.max(np.abs(rec_e.samples[:, 0] + t0))),
            float(np.max(np.abs(rec_w.samples[:, 0] - t0))),
        )
        checks.append(CheckResult("theta_pinned_to_pm_t0", pin <= 1e-4, pin, 1e-4, "<="))
        n_int = count_intersections(rec_e, rec_w)
        checks.append(CheckResult("intersection_count", n_int == 0, n_int, 0, "=="))
        dots = np.clip(rec_e.xyz @ rec_w.xyz.T, -1.0, 1.0)
        sep = float(np.arccos(dots).min())
        checks.append(
            CheckResult("spherical_separation", sep >= 2 * t0 - 1e-3, sep, 2 * t0 - 1e-3, ">=")
        )

    # -- (ii) no other closures ----------------------------------------------
    rng = np.random.default_rng(seed)
    others = _sample_unit_covectors(rng, n_other, metric, avoid_records=[r for r in recs if r])
    floor_val = np.inf
    for row in others:
        floor_val = min(floor_val, _recurrence_floor(metric, row, other_horizon))
    checks.append(
        CheckResult(
            "no_other_closure_floor", floor_val >= residual_floor, floor_val, residual_floor, ">="
        )
    )

    # -- (iii) fiberwise convexity on a grid ---------------------------------
    nt, nph, nd = hessian_grid
    thetas = np.linspace(-1.35, 1.35, nt)
    phis = np.linspace(0.0, 2.0 * np.pi, nph, endpoint=False)
    dirs = np.linspace(0.0, 2.0 * np.pi, nd, endpoint=False)
    tt, pp, aa = np.meshgrid(thetas, phis, dirs, indexing="ij")
    grid = np.column_stack(
        [tt.ravel(), pp.ravel(), np.cos(aa).ravel(), np.sin(aa).ravel()]
    )
    grid_charts = np.full(len(grid), ch.CHART_Z)
    grid = metric.normalize(grid, grid_charts)
    min_eig = float(np.min(fiber_hessian_min_eigen_batch(metric, grid, grid_charts)))
    checks.append(CheckResult("fiber_hessian_min_eigenvalue", min_eig > 0.0, min_eig, 0.0, ">"))

    # -- (iv) conjugate times and curvature window ---------------------------
    conj_inits = _sample_unit_covectors(rng, n_conjugate, metric)
    jrecs = variational_flow_batch(
        metric,
        conj_inits,
        np.full(len(conj_inits), ch.CHART_Z),
        np.pi + 0.35,
        opts=IntegratorOptions(rel_tol=1e-9, abs_tol=1e-11),
    )
    conj_dev = 0.0
    k_dev = 0.0
    conj_ok = True
    for jr in jrecs:
        if jr.first_conjugate_time is None:
            conj_ok = False
            continue
        conj_dev = max(conj_dev, abs(jr.first_conjugate_time - np.pi))
        if len(jr.K):
            k_dev = max(k_dev, float(np.max(np.abs(jr.K - 1.0))))
    checks.append(
        CheckResult("first_conjugate_time_window", conj_ok and conj_dev <= 0.3, conj_dev, 0.3, "<=")
    )
    checks.append(CheckResult("curvature_profile_window", k_dev <= 0.5, k_dev, 0.5, "<="))

    # -- (v) non-reversibility of the closed pair ----------------------------
    if rec_e is not None and rec_w is not None:
        defect = min(
            reversibility_defect(metric, rec_e, opts), reversibility_defect(metric, rec_w, opts)
        )
        checks.append(CheckResult("reversibility_defect", defect > 1e-2, defect, 1e-2, ">"))
    else:
        checks.append(CheckResult("reversibility_defect", False, float("nan"), 1e-2, ">"))

    return VerificationReport(params=params, seed=seed, checks=checks, closed_records=recs)
