"""Separatrix loops and the energy-loss coefficients Theta.

The two homoclinic loops of the figure eight are traced from points
offset by delta_sad along the unstable eigendirections.  Loop 2 is the
loop the flow enters right after crossing the phi = 0 transversal (the
loop traversed for 0 < phi < pi); loop 1 is the other one.

    Theta_i(w) = - integral over loop i of f_h(.., w, eps=0) dt,
    Theta_3 = Theta_1 + Theta_2.

The integrand vanishes at the saddle and decays exponentially along the
tails, so truncating at the closest approach contributes an estimated
tail of |f_h| / lam at each end, reported but not added.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .chart import orbit, saddle
from .errors import LoopNotClosed, NonPositiveTheta
from .systems import SystemDef, f_h_qp


@dataclass
class Loop:
    """Sampled separatrix loop from saddle exit to saddle re-approach."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    duration: float
    closest_approach: float
    turning_q: float


@dataclass
class SeparatrixSet:
    w: np.ndarray
    loop1: Loop
    loop2: Loop
    theta1: float
    theta2: float
    lam: float
    delta_sad: float
    tail_estimate: float

    @property
    def theta3(self) -> float:
        return self.theta1 + self.theta2


def _trace_branch(sys, w, y0, lam, r_guard, quad_eps, t_budget, n_samples):
    """Integrate one branch until closest approach to the saddle.

    Augments the flow with the running integral of f_h at eps = 0.
    """
    sad = saddle(sys, w)

    def rhs(t, y):
        q, p = y[0], y[1]
        hp, hq, _ = sys.grad_H(p, q, w)
        return [hp, -hq, f_h_qp(sys, p, q, w, quad_eps)]

    def ev(t, y):
        dq, dp = y[0] - sad.q, y[1] - sad.p
        if dq * dq + dp * dp > r_guard**2:
            return -1.0
        hp, hq, _ = sys.grad_H(y[1], y[0], w)
        return dq * hp + dp * (-hq)
    ev.terminal = True
    ev.direction = 1.0

    leg1 = solve_ivp(rhs, (0.0, 1.5 / lam), [y0[0], y0[1], 0.0],
                     rtol=1e-13, atol=1e-15, method="DOP853",
                     dense_output=True)
    leg2 = solve_ivp(rhs, (leg1.t[-1], t_budget), leg1.y[:, -1],
                     rtol=1e-13, atol=1e-15, method="DOP853",
                     dense_output=True, events=ev)
    if not leg2.t_events[0].size:
        raise LoopNotClosed(
            f"branch from {y0} did not re-approach the saddle "
            f"within t = {t_budget}")
    t_end = leg2.t_events[0][0]
    ts = np.linspace(0.0, t_end, n_samples)
    ys = np.empty((3, n_samples))
    m1 = ts <= leg1.t[-1]
    ys[:, m1] = leg1.sol(ts[m1])
    ys[:, ~m1] = leg2.sol(ts[~m1])
    y_end = leg2.sol(t_end)
    d_close = float(np.hypot(y_end[0] - sad.q, y_end[1] - sad.p))
    loop = Loop(t=ts, q=ys[0], p=ys[1], duration=float(t_end),
                closest_approach=d_close,
                turning_q=float(ys[0][np.argmax(np.abs(ys[0] - sad.q))]))
    return loop, float(y_end[2]), y_end


def trace_loops(sys: SystemDef, w, delta_sad: float = 1e-7,
                r_guard: float = 0.05, t_budget: float = 500.0,
                n_samples: int = 2000) -> SeparatrixSet:
    """Trace both separatrix loops and compute the Theta integrals."""
    w = np.atleast_1d(np.asarray(w, float))
    sad = saddle(sys, w)
    d = sad.bisector_outer
    # branch orientation: the flow right after the transversal exits along
    # the unstable ray it rotates toward
    probe = sad.qp + 1e-3 * d
    hp, hq, _ = sys.grad_H(probe[1], probe[0], w)
    flow = np.array([hp, -hq])
    sgn = 1.0 if float(flow @ sad.unstable_dir) > 0 else -1.0
    u_plus = sgn * sad.unstable_dir

    loops = {}
    thetas = {}
    tails = []
    for label, s in (("l2", +1.0), ("l1", -1.0)):
        start = sad.qp + s * delta_sad * u_plus
        loop, G, y_end = _trace_branch(sys, w, start, sad.lam, r_guard,
                                       0.0, t_budget, n_samples)
        loops[label] = loop
        thetas[label] = -G
        fh_start = abs(f_h_qp(sys, start[1], start[0], w, 0.0))
        fh_end = abs(f_h_qp(sys, y_end[1], y_end[0], w, 0.0))
        tails.append((fh_start + fh_end) / sad.lam)

    return SeparatrixSet(w=w, loop1=loops["l1"], loop2=loops["l2"],
                         theta1=thetas["l1"], theta2=thetas["l2"],
                         lam=sad.lam, delta_sad=delta_sad,
                         tail_estimate=float(max(tails)))


_theta_cache = {}


def compute_theta(sys: SystemDef, w, delta_sad: float = 1e-7,
                  tol: float = 1e-12):
    """(Theta_1, Theta_2, Theta_3) at parameter w; cached.

    Raises NonPositiveTheta if either loop coefficient is <= tol, which
    breaks the standing assumption of the whole construction.
    """
    w = np.atleast_1d(np.asarray(w, float))
    key = (sys.token, tuple(w.tolist()), delta_sad)
    if key not in _theta_cache:
        ss = trace_loops(sys, w, delta_sad=delta_sad)
        _theta_cache[key] = ss
    ss = _theta_cache[key]
    if ss.theta1 <= tol or ss.theta2 <= tol:
        raise NonPositiveTheta(
            f"Theta_1 = {ss.theta1:.3e}, Theta_2 = {ss.theta2:.3e} at w={w}")
    return ss.theta1, ss.theta2, ss.theta3


def separatrix_set(sys: SystemDef, w, delta_sad: float = 1e-7):
    """The cached SeparatrixSet (loops + thetas) at parameter w."""
    w = np.atleast_1d(np.asarray(w, float))
    key = (sys.token, tuple(w.tolist()), delta_sad)
    if key not in _theta_cache:
        _theta_cache[key] = trace_loops(sys, w, delta_sad=delta_sad)
    return _theta_cache[key]


def theta_limit_check(sys: SystemDef, w, h_grid=(0.1, 0.03, 0.01, 0.003)):
    """Convergence report of the closed-orbit energy-loss integral.

    For each h, the per-turn loss -T(h) <f_h>_phi should approach
    Theta_3(w) with deviation O(h ln(1/h)).  Passes when the deviation
    decreases along the grid and the deviation / (h ln(1/h)) ratio stays
    bounded.
    """
    from .chart import f_components_grid

    w = np.atleast_1d(np.asarray(w, float))
    th1, th2, th3 = compute_theta(sys, w)
    rows = []
    for h in h_grid:
        orb = orbit(sys, h, w)
        fh, _, _ = f_components_grid(sys, orb, 0.0)
        value = -orb.T * float(np.mean(fh))
        dev = abs(value - th3)
        scale = h * np.log(1.0 / h)
        rows.append({"h": float(h), "value": value, "deviation": dev,
                     "ratio": dev / scale})
    devs = [r["deviation"] for r in rows]
    passed = all(devs[i + 1] < devs[i] for i in range(len(devs) - 1))
    return {"theta3": th3, "rows": rows, "passed": bool(passed),
            "max_ratio": float(max(r["ratio"] for r in rows))}
