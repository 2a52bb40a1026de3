"""Batched fixed-step Runge-Kutta integration.

The hot paths of this package integrate many similar ODE trajectories at
once (families of unperturbed orbits, Monte-Carlo sweeps of the perturbed
system).  A fixed-step 8th-order scheme vectorized over the batch axis is
both much faster than per-trajectory adaptive stepping in Python and
bitwise reproducible, which the experiment drivers rely on.

States are arrays of shape (n, d): n trajectories, d state components.
Each trajectory may carry its own step size.
"""

from __future__ import annotations

import numpy as np

from ._rk8_tableau import A, B, C, N_STAGES


def rk8_step(f, t, y, dt):
    """One fixed step of the 8th-order core for the whole batch.

    Parameters
    ----------
    f : callable
        f(t, y) -> dy/dt with t of shape (n,) and y of shape (n, d).
    t : ndarray (n,)
    y : ndarray (n, d)
    dt : ndarray (n,) or scalar

    Returns (y_new, k0) where k0 = f(t, y) is reusable for dense output.
    """
    K = np.empty((N_STAGES,) + y.shape)
    K[0] = f(t, y)
    dt_col = np.asarray(dt)[..., None] if np.ndim(dt) else dt
    for i in range(1, N_STAGES):
        yi = y + dt_col * np.einsum("s,s...->...", A[i, :i], K[:i])
        K[i] = f(t + C[i] * np.asarray(dt), yi)
    y_new = y + dt_col * np.einsum("s,s...->...", B, K)
    return y_new, K[0]


def hermite_root(g0, g1, dg0, dg1):
    """Root fraction s in [0, 1] of a cubic Hermite model of a scalar g.

    g0, g1 are endpoint values with a sign change between them; dg0, dg1
    are endpoint derivatives with respect to the step fraction s.  All
    arguments broadcast; safeguarded Newton from the secant guess.
    """
    a = 2 * (g0 - g1) + dg0 + dg1
    b = g1 - g0 - dg0 - a
    c = dg0
    e = g0
    denom = np.where(g0 != g1, g0 - g1, 1.0)
    s = np.clip(g0 / denom, 0.0, 1.0)
    for _ in range(40):
        val = ((a * s + b) * s + c) * s + e
        der = (3 * a * s + 2 * b) * s + c
        der = np.where(der != 0, der, 1.0)
        s_new = np.clip(s - val / der, 0.0, 1.0)
        if np.all(np.abs(s_new - s) < 1e-15):
            return s_new
        s = s_new
    return s


def hermite_eval(y0, y1, f0, f1, dt, s):
    """Cubic Hermite state interpolation on one step at fraction s.

    y0, y1, f0, f1 have shape (..., d); s broadcasts against the leading
    axes; dt is scalar or shaped like s.
    """
    s = np.asarray(s)[..., None]
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    dt_col = np.asarray(dt)[..., None] if np.ndim(dt) else dt
    return h00 * y0 + h10 * dt_col * f0 + h01 * y1 + h11 * dt_col * f1
