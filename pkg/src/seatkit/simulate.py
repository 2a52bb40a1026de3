"""Direct integration of the perturbed system: the measurement oracle.

Provides an adaptive single-trajectory integrator with event location
(transversal crossings and the H = 0 separatrix crossing), the
pseudo-phase measurement h_{-1} / (eps Theta_3), capture classification
into the loop domains, and a batched fixed-step engine for Monte-Carlo
sweeps (bitwise reproducible; no adaptivity, no wall-clock dependence).

The transversal is the outer-bisector ray of the saddle evaluated at the
initial parameter value; crossings are accepted only with the correct
orientation and on the outer side of the saddle.  Moving saddles
C(z) != const are supported by the interface but untested.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import rk
from .chart import saddle
from .errors import AmbiguousCapture, EventMissed, NoCrossing, StepFailure
from .separatrix import compute_theta, separatrix_set
from .systems import SystemDef, f_h_qp


@dataclass
class CrossingLog:
    """Transversal crossings of one trajectory, in time order."""

    t: np.ndarray
    h: np.ndarray
    w: np.ndarray           # (n_cross, k)
    direction: np.ndarray   # +1 for the oriented (phi = 0) crossing

    @property
    def h_m1(self) -> float:
        pos = self.h > 0
        if not pos.any():
            raise NoCrossing("no transversal crossing with h > 0")
        return float(self.h[pos][-1])

    def last_positive(self, back: int = 1):
        """(t, h, w) of the back-th positive-h crossing from the end."""
        pos = np.where(self.h > 0)[0]
        if len(pos) < back:
            raise NoCrossing(f"fewer than {back} positive-h crossings")
        i = pos[-back]
        return float(self.t[i]), float(self.h[i]), self.w[i]


@dataclass
class CaptureResult:
    domain: int                      # 1 or 2
    crossing_time: float
    final_point: np.ndarray          # (q, p, z...)
    measured_pseudo_phase: float
    h_m1: float
    guard_band_applied: bool
    eps: float
    theta3_used: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class PerturbedSolution:
    sol: object                      # scipy dense OdeSolution
    t_end: float
    crossings: CrossingLog
    t_separatrix: float | None
    state_separatrix: np.ndarray | None


def _perturbed_rhs_single(sys, eps):
    def f(t, y):
        q, p = y[0], y[1]
        z = y[2:]
        hp, hq, _ = sys.grad_H(p, q, z)
        fq, fp, fz = sys.perturbation(p, q, z, eps)
        return np.concatenate([[hp + eps * fq], [-hq + eps * fp],
                               eps * np.asarray(fz, float).reshape(-1)])
    return f


def integrate_perturbed(sys: SystemDef, x0, eps: float, t_max: float = None,
                        h_stop: float = 0.0, rtol: float = 1e-10,
                        atol: float = 1e-12) -> PerturbedSolution:
    """Adaptive integration with transversal and separatrix events.

    x0 may be a PhasePoint or an array (q, p, z...).  Stops at
    H = h_stop (set h_stop=None to disable) or at t_max.
    """
    if hasattr(x0, "q"):
        y0 = np.concatenate([[x0.q], [x0.p], np.atleast_1d(x0.z)])
    else:
        y0 = np.asarray(x0, float)
    w0 = y0[2:]
    sad = saddle(sys, w0)
    d = sad.bisector_outer
    nrm = np.array([-d[1], d[0]])
    c = sad.qp
    f = _perturbed_rhs_single(sys, eps)
    # crossing orientation of the unperturbed flow on the outer ray
    probe = c + max(1e-3, 1e-3) * d
    hp, hq, _ = sys.grad_H(probe[1], probe[0], w0)
    sig = 1.0 if float(np.array([hp, -hq]) @ nrm) > 0 else -1.0

    def ev_trans(t, y):
        return sig * ((y[0] - c[0]) * nrm[0] + (y[1] - c[1]) * nrm[1])
    ev_trans.direction = 1.0

    events = [ev_trans]
    if h_stop is not None:
        def ev_sep(t, y):
            return sys.hamiltonian(y[1], y[0], y[2:]) - h_stop
        ev_sep.direction = -1.0
        ev_sep.terminal = True
        events.append(ev_sep)

    if t_max is None:
        if h_stop is None:
            raise ValueError("need t_max or h_stop")
        h0 = float(sys.hamiltonian(y0[1], y0[0], w0))
        th3 = compute_theta(sys, w0)[2]
        t_max = 8.0 * max(h0, 0.05) / (abs(eps) * th3) * 30.0 \
            if eps != 0 else 1e5

    sol = solve_ivp(f, (0.0, t_max), y0, method="DOP853", rtol=rtol,
                    atol=atol, dense_output=True, events=events)
    if not sol.success:
        raise StepFailure(sol.message)

    tc = sol.t_events[0]
    states = sol.sol(tc) if tc.size else np.zeros((len(y0), 0))
    along = (states[0] - c[0]) * d[0] + (states[1] - c[1]) * d[1]
    keep = along > 0
    tc = tc[keep]
    states = states[:, keep]
    hs = np.array([float(sys.hamiltonian(states[1, i], states[0, i],
                                         states[2:, i]))
                   for i in range(states.shape[1])])
    log = CrossingLog(t=tc, h=hs, w=states[2:].T.copy(),
                      direction=np.ones_like(tc))
    t_sep = None
    x_sep = None
    if h_stop is not None and sol.t_events[1].size:
        t_sep = float(sol.t_events[1][0])
        x_sep = sol.y_events[1][0]
    return PerturbedSolution(sol=sol.sol, t_end=float(sol.t[-1]),
                             crossings=log, t_separatrix=t_sep,
                             state_separatrix=x_sep)


def _point_in_loop(loop, saddle_qp, q, p):
    """Even-odd ray casting against the loop polygon, closed through the
    saddle and back to the first sample."""
    qs = np.concatenate([loop.q, [saddle_qp[0], loop.q[0]]])
    ps = np.concatenate([loop.p, [saddle_qp[1], loop.p[0]]])
    x1, y1 = qs[:-1], ps[:-1]
    x2, y2 = qs[1:], ps[1:]
    cond = (y1 > p) != (y2 > p)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_int = x1 + (p - y1) * (x2 - x1) / np.where(y2 != y1, y2 - y1, 1.0)
    crossings = np.sum(cond & (x_int > q))
    return crossings % 2 == 1


def classify_capture(sys: SystemDef, point, w=None) -> int:
    """1 or 2: which loop domain contains the post-crossing point.

    point is (q, p, z...) or (q, p) with w supplied separately.
    Raises AmbiguousCapture when the containment test is inconsistent.
    """
    point = np.asarray(point, float)
    if w is None:
        w = point[2:]
    w = np.atleast_1d(np.asarray(w, float))
    q, p = float(point[0]), float(point[1])
    h = float(sys.hamiltonian(p, q, w))
    if h >= 0:
        raise AmbiguousCapture(f"H = {h:.3e} >= 0; not inside a loop")
    ss = separatrix_set(sys, w)
    sad_qp = saddle(sys, w).qp
    in1 = _point_in_loop(ss.loop1, sad_qp, q, p)
    in2 = _point_in_loop(ss.loop2, sad_qp, q, p)
    if in1 == in2:
        raise AmbiguousCapture(
            f"containment test inconsistent at (q, p) = ({q:.4g}, {p:.4g})")
    return 1 if in1 else 2


def measure_pseudo_phase(sys: SystemDef, x0, eps: float, c1: float = 1.0,
                         settle: float = 25.0, rtol: float = 1e-10,
                         max_settle_rounds: int = 4) -> CaptureResult:
    """Measured pseudo-phase and capture domain of one trajectory.

    h_{-1} is the energy at the last transversal crossing with h > 0;
    if h_{-1} < c1 eps^{3/2} the previous crossing is substituted and
    the guard flag set.  Theta_3 is evaluated at the parameter value of
    the crossing used.
    """
    ps = integrate_perturbed(sys, x0, eps, h_stop=0.0, rtol=rtol)
    if ps.t_separatrix is None:
        raise EventMissed("trajectory never reached H = 0")
    log = ps.crossings
    if not (log.h > 0).any():
        raise NoCrossing("no transversal crossing before separatrix")
    guard = False
    back = 1
    _, h_sel, w_sel = log.last_positive(1)
    if h_sel < c1 * eps ** 1.5:
        guard = True
        back = 2
        _, h_sel, w_sel = log.last_positive(2)
    th3 = compute_theta(sys, w_sel)[2]
    measured = (h_sel / (eps * th3)) % 1.0

    # continue past the crossing and classify, re-testing once
    y = ps.state_separatrix
    f = _perturbed_rhs_single(sys, eps)
    t = ps.t_separatrix
    domain = None
    for _ in range(max_settle_rounds):
        s2 = solve_ivp(f, (t, t + settle), y, method="DOP853",
                       rtol=rtol, atol=1e-12)
        y = s2.y[:, -1]
        t = float(s2.t[-1])
        try:
            d1 = classify_capture(sys, y)
            y_mid = s2.y[:, len(s2.t) // 2]
            d2 = classify_capture(sys, y_mid) \
                if sys.hamiltonian(y_mid[1], y_mid[0], y_mid[2:]) < 0 else d1
            if d1 == d2:
                domain = d1
                break
        except AmbiguousCapture:
            continue
    if domain is None:
        raise AmbiguousCapture("classification did not stabilize")
    return CaptureResult(domain=domain, crossing_time=ps.t_separatrix,
                         final_point=y, measured_pseudo_phase=float(measured),
                         h_m1=float(h_sel), guard_band_applied=guard,
                         eps=eps, theta3_used=float(th3),
                         diagnostics={"n_crossings": len(log.t),
                                      "back_index": back})


# ---------------------------------------------------------------------
# batched fixed-step engine
# ---------------------------------------------------------------------

@dataclass
class BatchResult:
    h_m1: np.ndarray
    h_m2: np.ndarray
    w_m1: np.ndarray           # (n, k)
    t_sep: np.ndarray
    domain: np.ndarray         # 1 or 2 (0 = unresolved)
    measured: np.ndarray
    guard: np.ndarray
    n_crossings: np.ndarray


def _perturbed_rhs_batch(sys, eps_arr):
    def f(t, y):
        q, p = y[..., 0], y[..., 1]
        z = y[..., 2:].T
        hp, hq, _ = sys.grad_H(p, q, z)
        fq, fp, fz = sys.perturbation(p, q, z, eps_arr)
        fz = np.asarray(fz).reshape(z.shape)
        out = np.empty_like(y)
        out[..., 0] = hp + eps_arr * fq
        out[..., 1] = -hq + eps_arr * fp
        out[..., 2:] = (eps_arr * fz).T
        return out
    return f


def run_measure_batch(sys: SystemDef, x0s, eps, dt: float = 0.02,
                      c1: float = 1.0, settle: float = 25.0,
                      t_max: float = None) -> BatchResult:
    """Batched measurement: h_{-1}, h_{-2}, capture domain per trajectory.

    Fixed-step RK8 with Hermite event refinement; fully deterministic.
    x0s: (n, 2 + k) rows (q, p, z...); eps: scalar or (n,).
    Parameters are assumed effectively frozen for Theta_3 lookups (the
    adaptive path handles drifting parameters exactly).
    """
    x0s = np.asarray(x0s, float)
    n, dim = x0s.shape
    k = dim - 2
    eps_arr = np.broadcast_to(np.asarray(eps, float), (n,)).copy()
    w0 = x0s[0, 2:]
    sad = saddle(sys, w0)
    d, c = sad.bisector_outer, sad.qp
    nrm = np.array([-d[1], d[0]])
    probe = c + 1e-3 * d
    hp, hq, _ = sys.grad_H(probe[1], probe[0], w0)
    sig = 1.0 if float(np.array([hp, -hq]) @ nrm) > 0 else -1.0
    th3_0 = compute_theta(sys, w0)[2]
    if t_max is None:
        h0s = np.array([sys.hamiltonian(x0s[i, 1], x0s[i, 0], x0s[i, 2:])
                        for i in range(n)])
        t_max = float(np.max(5.0 * np.maximum(h0s, 0.05)
                             / (eps_arr * th3_0) * 40.0)) + 10 * settle

    y = x0s.copy()
    t = 0.0
    h_m1 = np.full(n, np.nan)
    h_m2 = np.full(n, np.nan)
    w_m1 = np.tile(w0, (n, 1))
    n_cross = np.zeros(n, int)
    t_sep = np.full(n, np.nan)
    settle_until = np.full(n, np.inf)
    stage = np.zeros(n, int)          # 0 outer, 1 settling, 2 done
    final = np.empty_like(y)
    # the settle-window mean sits near the captured loop's center, far
    # from the loop boundary: robust to small parameter offsets of the
    # reference loops used for classification
    settle_sum = np.zeros_like(y)
    settle_cnt = np.zeros(n, int)

    def H_of(yy):
        return sys.hamiltonian(yy[..., 1], yy[..., 0], yy[..., 2:].T)

    def s_of(yy):
        return sig * ((yy[..., 0] - c[0]) * nrm[0]
                      + (yy[..., 1] - c[1]) * nrm[1])

    H_prev = np.asarray(H_of(y), float)
    s_prev = s_of(y)
    max_steps = int(np.ceil(t_max / dt)) + 1
    for _ in range(max_steps):
        act = stage < 2
        if not act.any():
            break
        ia = np.where(act)[0]
        ya = y[ia]
        eps_a = eps_arr[ia]
        fa = _perturbed_rhs_batch(sys, eps_a)
        y_new, k0 = rk.rk8_step(fa, np.full(len(ia), t), ya, dt)
        k1 = fa(np.full(len(ia), t + dt), y_new)
        H_new = np.asarray(H_of(y_new), float)
        s_new = s_of(y_new)
        outer = stage[ia] == 0

        # transversal crossings (only in the outer stage, h > 0)
        hit = outer & (s_prev[ia] < 0) & (s_new >= 0)
        if hit.any():
            jj = np.where(hit)[0]
            ds0 = sig * (k0[jj, 0] * nrm[0] + k0[jj, 1] * nrm[1]) * dt
            ds1 = sig * (k1[jj, 0] * nrm[0] + k1[jj, 1] * nrm[1]) * dt
            s_frac = rk.hermite_root(s_prev[ia][jj], s_new[jj], ds0, ds1)
            y_c = rk.hermite_eval(ya[jj], y_new[jj], k0[jj], k1[jj],
                                  dt, s_frac)
            along = (y_c[:, 0] - c[0]) * d[0] + (y_c[:, 1] - c[1]) * d[1]
            h_c = np.asarray(H_of(y_c), float)
            ok = (along > 0) & (h_c > 0)
            gi = ia[jj[ok]]
            h_m2[gi] = h_m1[gi]
            h_m1[gi] = h_c[ok]
            w_m1[gi] = y_c[ok][:, 2:]
            n_cross[gi] += 1

        # separatrix crossing H = 0 (downward)
        sep = outer & (H_prev[ia] > 0) & (H_new <= 0)
        if sep.any():
            jj = np.where(sep)[0]
            fh0 = eps_a[jj] * np.asarray(
                f_h_qp(sys, ya[jj, 1], ya[jj, 0], ya[jj, 2:].T, eps_a[jj]),
                float) * dt
            fh1 = eps_a[jj] * np.asarray(
                f_h_qp(sys, y_new[jj, 1], y_new[jj, 0], y_new[jj, 2:].T,
                       eps_a[jj]), float) * dt
            s_frac = rk.hermite_root(H_prev[ia][jj], H_new[jj], fh0, fh1)
            gi = ia[jj]
            t_sep[gi] = t + s_frac * dt
            stage[gi] = 1
            settle_until[gi] = t + s_frac * dt + settle

        settling = np.where(stage[ia] == 1)[0]
        if settling.size:
            gi = ia[settling]
            settle_sum[gi] += y_new[settling]
            settle_cnt[gi] += 1

        # settled trajectories freeze
        fin = (stage[ia] == 1) & (t + dt >= settle_until[ia])
        if fin.any():
            gi = ia[np.where(fin)[0]]
            final[gi] = y_new[np.where(fin)[0]]
            stage[gi] = 2

        y[ia] = y_new
        H_prev[ia] = H_new
        s_prev[ia] = s_new
        t += dt

    if (stage < 2).any():
        raise EventMissed(
            f"{int((stage < 2).sum())} trajectories unresolved at "
            f"t_max = {t_max}")

    # classification against the frozen-parameter loops, using the
    # settle-window mean point (near the captured loop's center)
    ss = separatrix_set(sys, w0)
    sad_qp = sad.qp
    domain = np.zeros(n, int)
    redo = []
    means = np.where(settle_cnt[:, None] > 0,
                     settle_sum / np.maximum(settle_cnt, 1)[:, None], final)
    for i in range(n):
        in1 = _point_in_loop(ss.loop1, sad_qp, means[i, 0], means[i, 1])
        in2 = _point_in_loop(ss.loop2, sad_qp, means[i, 0], means[i, 1])
        if in1 == in2:
            redo.append(i)
        else:
            domain[i] = 1 if in1 else 2
    # rare ambiguous cases: continue individually with the adaptive engine
    for i in redo:
        f1 = _perturbed_rhs_single(sys, eps_arr[i])
        s2 = solve_ivp(f1, (0.0, 3 * settle), final[i], method="DOP853",
                       rtol=1e-10, atol=1e-12)
        domain[i] = classify_capture(sys, s2.y[:, -1])

    guard = h_m1 < c1 * eps_arr ** 1.5
    h_sel = np.where(guard & np.isfinite(h_m2), h_m2, h_m1)
    measured = (h_sel / (eps_arr * th3_0)) % 1.0
    return BatchResult(h_m1=h_m1, h_m2=h_m2, w_m1=w_m1, t_sep=t_sep,
                       domain=domain, measured=measured, guard=guard,
                       n_crossings=n_cross)
