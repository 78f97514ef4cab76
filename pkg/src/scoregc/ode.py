"""Adaptive Dormand-Prince 5(4) integrator for batches of independent ODEs.

The state is a ``(B, m)`` array of B independent systems advanced with a
shared step size.  The step is accepted only if the scaled RMS error of
every row is below one, so each row individually meets (rtol, atol).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Butcher tableau, Hairer/Norsett/Wanner vol. I p. 178
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = B5 - B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class IntegrationError(RuntimeError):
    pass


@dataclass
class OdeStats:
    n_steps: int = 0
    n_rejected: int = 0
    n_fev: int = 0


def dopri5(fun, t0: float, y0, t1: float, rtol: float = 1e-5, atol: float = 1e-5,
           h0: float = 1e-3, max_steps: int = 100_000):
    """Integrate dy/dt = fun(t, y) from t0 to t1 (t1 > t0).

    Returns ``(y(t1), OdeStats)``.  Raises IntegrationError on step-size
    underflow, too many steps or a non-finite state.
    """
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    y = np.array(y0, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    stats = OdeStats()
    t = float(t0)
    h = min(h0, t1 - t0)
    k1 = fun(t, y)
    stats.n_fev += 1
    if not np.all(np.isfinite(k1)):
        raise IntegrationError(f"non-finite derivative at t={t}")

    while t < t1:
        if stats.n_steps + stats.n_rejected >= max_steps:
            raise IntegrationError(f"exceeded {max_steps} steps at t={t}")
        last = t + h >= t1
        if last:
            h = t1 - t
        if h <= 1e-14 * max(1.0, abs(t)):
            raise IntegrationError(f"step size underflow at t={t}")

        ks = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(A[i], ks) if a != 0.0)
            ks.append(fun(t1 if (last and C[i] == 1.0) else t + C[i] * h, yi))
        stats.n_fev += 6
        y_new = yi  # stage 7 point is the 5th-order solution (FSAL)
        err = h * sum(e * k for e, k in zip(E, ks) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(invalid="ignore", over="ignore"):
            row_err = np.sqrt(np.mean((err / scale) ** 2, axis=-1))
            err_norm = float(np.max(row_err))

        if not np.isfinite(err_norm):
            # treat as a failed step; shrink hard
            stats.n_rejected += 1
            h *= MIN_FACTOR
            continue

        if err_norm <= 1.0:
            t = t1 if last else t + h
            y = y_new
            k1 = ks[6]
            stats.n_steps += 1
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state at t={t}")
            factor = MAX_FACTOR if err_norm == 0 else min(MAX_FACTOR, SAFETY * err_norm**-0.2)
            h *= factor
        else:
            stats.n_rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err_norm**-0.2)
    return y, stats
