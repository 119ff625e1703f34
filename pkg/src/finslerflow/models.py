"""Orthogonal normal form of the geodesic flow on RP^3 and its conjugacy
invariants.

Up to conjugation, the unit-cotangent flow of a constant-flag-curvature-1
metric with rotation angle lam acts on RP^3 = S^3/{+-1} as the block
rotation t -> diag(R(a t), R(b t)) with {a, b} = {1 - lam, lam}.  Such a
homomorphism is characterized by its smallest minimal periods pi/a and
pi/b, which coincide with the two exceptional geodesic lengths pi/(1-lam)
and pi/lam.  The flow class is therefore decided by comparing shortest
closed-geodesic lengths; no conjugating diffeomorphism is constructed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TorusModelSpec:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a >= self.b > 0.0):
            raise ValueError("require a >= b > 0")
        if abs(self.a + self.b - 1.0) > 1e-12:
            raise ValueError("require a + b = 1")

    @classmethod
    def from_rotation_angle(cls, lam: float) -> "TorusModelSpec":
        if not 0.0 < lam <= 0.5:
            raise ValueError("rotation angle must lie in (0, 1/2]")
        return cls(a=1.0 - lam, b=lam)


def model_flow(spec: TorusModelSpec, t, point):
    """Block rotation R(a t) on coordinates (1,2), R(b t) on (3,4).

    Points are unit 4-vectors understood up to global sign; compare images
    with `rp3_distance`.
    """
    point = np.asarray(point, dtype=float)
    if abs(np.linalg.norm(point) - 1.0) > 1e-9:
        raise ValueError("model flow acts on unit 4-vectors")
    ca, sa = np.cos(spec.a * t), np.sin(spec.a * t)
    cb, sb = np.cos(spec.b * t), np.sin(spec.b * t)
    out = np.empty(4)
    out[0] = ca * point[0] - sa * point[1]
    out[1] = sa * point[0] + ca * point[1]
    out[2] = cb * point[2] - sb * point[3]
    out[3] = sb * point[2] + cb * point[3]
    return out


def rp3_distance(u, v) -> float:
    """Distance of unit 4-vectors up to global sign."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(min(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def conjugacy_invariants(lam: float):
    """Complete invariant pair of the flow class: (pi/(1-lam), pi/lam)."""
    if not 0.0 < lam <= 0.5:
        raise ValueError("rotation angle must lie in (0, 1/2]")
    return np.pi / (1.0 - lam), np.pi / lam


def deform_to_closed(lam: float) -> float:
    """Deformation parameter closing all geodesics at prime length 2*pi.

    Adding alpha = 1 - 2*lam to the rotation angle's raw value moves it to
    1/2; the sign is resolved against the raw angle by the caller (the raw
    angle may sit on either side of 1/2).
    """
    if not 0.0 < lam <= 0.5:
        raise ValueError("rotation angle must lie in (0, 1/2]")
    return 1.0 - 2.0 * lam


def model_minimal_period(spec: TorusModelSpec, point, t_max=None, coarse=5e-3):
    """Minimal period of a model orbit by recurrence detection.

    Scans rp3_distance(flow_t(p), p) for its first deep local minimum and
    refines by golden-section; the flow is closed form, so the result is
    accurate to ~1e-12.
    """
    point = np.asarray(point, dtype=float)
    if t_max is None:
        t_max = 1.05 * np.pi / spec.b
    ts = np.arange(coarse, t_max, coarse)
    d = np.array([rp3_distance(model_flow(spec, t, point), point) for t in ts])
    k = None
    for i in range(1, len(d) - 1):
        if d[i] < 0.02 and d[i] <= d[i - 1] and d[i] < d[i + 1]:
            k = i
            break
    if k is None:
        raise ValueError("no recurrence below threshold within t_max")
    lo, hi = ts[k - 1], ts[k + 1]
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    f = lambda t: rp3_distance(model_flow(spec, t, point), point)
    x1 = hi - gr * (hi - lo)
    x2 = lo + gr * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(120):
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - gr * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + gr * (hi - lo)
            f2 = f(x2)
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def conjugacy_verdict(length_a: float, length_b: float, tol: float = 1e-5) -> str:
    """Flows are conjugate iff their shortest closed-geodesic lengths agree."""
    return "conjugate" if abs(length_a - length_b) <= tol else "not conjugate"
