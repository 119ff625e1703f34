"""Embedded Dormand-Prince 5(4) tableau and step-size control.

The co-geodesic flow lives on a compact energy level, so no structure
preservation is attempted; accuracy comes from tight tolerances plus a
projective rescaling of the covector back onto the unit level after each
accepted step (done by the callers, not here).
"""

from __future__ import annotations

import numpy as np

from .errors import ToleranceFailure

# Dormand-Prince RK5(4)7M coefficients.
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
DP_E = DP_B5 - DP_B4

MIN_STEP = 1e-13
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


def dp_step(rhs, t, y, h):
    """One Dormand-Prince trial step on a (..., D) state block.

    Returns (y5, err) where err is the embedded 4th/5th difference.
    """
    k = [rhs(t, y)]
    for i in range(1, 7):
        yi = y + h * np.tensordot(DP_A[i], np.stack(k[: i]), axes=1)
        k.append(rhs(t + DP_C[i] * h, yi))
    ks = np.stack(k)
    y5 = y + h * np.tensordot(DP_B5, ks, axes=1)
    err = h * np.tensordot(DP_E, ks, axes=1)
    return y5, err


def error_norm(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.max(np.abs(err) / scale))


def next_step(h, err_norm_val):
    if err_norm_val == 0.0:
        return h * MAX_FACTOR
    return h * min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err_norm_val ** -0.2))


def check_step(h, t):
    if abs(h) < MIN_STEP:
        raise ToleranceFailure(f"step controller underflow at t = {t}")
