"""Energy-angle chart (h, w, phi) of the outer domain.

For each energy h > 0 and parameter value w the unperturbed orbit is
computed once on a uniform time grid over one period, starting from the
transversal: the ray from the saddle along the outer bisector.  The
angle is phi = 2 pi t / T(h, w).

Alongside the orbit we transport the adjoint covector m(t) = grad t of
the time-from-transversal function (mdot = -DF^T m along the flow, with
m(0) fixed by the transversal geometry).  This gives the angle component
of the perturbation,

    f_phi = (2 pi / T) m . f - (2 pi t / T^2) (T_h f_h + T_w . f_w),

exactly (to integrator tolerance), avoiding finite differences of the
angle map across the near-saddle region.  The period gradient follows
from the monodromy identity m(T) - m(0) = grad T.

Orbits are cached (LRU, thread-safe); all results are pure functions of
(system, h, w) and never depend on cache state.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
import numpy as np
from scipy.optimize import brentq

from . import rk
from .errors import (EnergyDrift, EventNotFound, NoIntersection,
                     OutsideChart, StepUnderflow)
from .systems import H_FLOOR, PhasePoint, SaddleData, SystemDef, find_saddle

N_NODES_DEFAULT = 512
_N_SUB = 4             # integration substeps between stored nodes
_CACHE_MAX = 4096


@dataclass(frozen=True)
class AnglePoint:
    """Chart coordinates: energy h > 0, parameters w, angle phi in [0, 2pi)."""

    h: float
    w: np.ndarray
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, float)))
        object.__setattr__(self, "phi", float(self.phi) % (2 * np.pi))
        if self.h <= 0:
            raise OutsideChart(f"h = {self.h} is not positive")


@dataclass
class ChartPartials:
    """Finite-difference partials of omega and T at one (h, w)."""

    dom_dh: float
    dom_dw: np.ndarray
    dT_dh: float
    dT_dw: np.ndarray
    step_h: float
    step_w: float


class OrbitSample:
    """One unperturbed orbit: uniform time grid over a single period.

    Node arrays have length n; node j sits at t = j T / n, i.e. at angle
    phi = 2 pi j / n.  m holds grad t (components q, p, z_1..z_k).
    """

    def __init__(self, h, w, T, t_nodes, q, p, m, grad_T, T_h, T_w,
                 energy_drift, period_defect):
        self.h = float(h)
        self.w = np.asarray(w, float)
        self.T = float(T)
        self.omega = 2 * np.pi / self.T
        self.t_nodes = t_nodes
        self.q = q
        self.p = p
        self.m = m
        self.grad_T = grad_T
        self.T_h = float(T_h)
        self.T_w = np.asarray(T_w, float)
        self.energy_drift = float(energy_drift)
        self.period_defect = float(period_defect)
        self.n_nodes = len(t_nodes)
        self._fft = {}

    # -- trigonometric interpolation -----------------------------------

    def _coeff(self, key, values):
        if key not in self._fft:
            self._fft[key] = np.fft.fft(values) / self.n_nodes
        return self._fft[key]

    def interp(self, key, values, t, derivative=False):
        """Spectral evaluation of a T-periodic node series at times t."""
        c = self._coeff(key, values)
        n = self.n_nodes
        mm = np.fft.fftfreq(n, d=1.0 / n)
        om = 2 * np.pi / self.T
        t = np.asarray(t, float)
        ph = np.exp(1j * np.multiply.outer(t, mm * om))
        if derivative:
            return np.real(ph @ (c * (1j * mm * om)))
        return np.real(ph @ c)

    def state_at(self, t):
        """(q, p) at time t from the transversal (t folded mod T)."""
        t = np.asarray(t, float) % self.T
        return self.interp("q", self.q, t), self.interp("p", self.p, t)

    def m_at(self, t):
        """grad t at time t.  m is not periodic (it gains grad T over one
        period), so the sawtooth part is split off before interpolating."""
        t = np.asarray(t, float) % self.T
        per = np.stack([
            self.interp(("m_per", i),
                        self.m[i] - (self.t_nodes / self.T) * self.grad_T[i],
                        t)
            for i in range(self.m.shape[0])])
        ramp = np.multiply.outer(self.grad_T, t / self.T)
        return per + ramp.reshape(per.shape)


class _OrbitCache:
    def __init__(self, maxsize=_CACHE_MAX):
        self._data = OrderedDict()
        self._lock = threading.RLock()
        self.maxsize = maxsize

    def key(self, sys, h, w, n):
        return (sys.token, float(h), tuple(np.atleast_1d(w).tolist()), int(n))

    def get(self, key):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        return None

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def clear(self):
        with self._lock:
            self._data.clear()


_cache = _OrbitCache()
_saddle_cache = _OrbitCache(maxsize=512)


def clear_caches():
    _cache.clear()
    _saddle_cache.clear()


def saddle(sys: SystemDef, w) -> SaddleData:
    w = np.atleast_1d(np.asarray(w, float))
    key = (sys.token, tuple(w.tolist()))
    hit = _saddle_cache.get(key)
    if hit is None:
        hit = find_saddle(sys, w)
        _saddle_cache.put(key, hit)
    return hit


def transversal_point(sys: SystemDef, h, w) -> PhasePoint:
    """Intersection of the level set H = h with the outer bisector ray."""
    h = float(h)
    if not (H_FLOOR <= h <= sys.h_max):
        raise NoIntersection(
            f"h = {h} outside chart range [{H_FLOOR}, {sys.h_max}]")
    w = np.atleast_1d(np.asarray(w, float))
    sad = saddle(sys, w)
    d = sad.bisector_outer  # (q, p) components

    def g(s):
        return sys.hamiltonian(sad.p + s * d[1], sad.q + s * d[0], w) - h

    s_hi = np.sqrt(2 * h)  # exact for a unit-eigenvalue quadratic saddle
    it = 0
    while g(s_hi) < 0:
        s_hi *= 1.6
        it += 1
        if it > 60:
            raise NoIntersection(f"bisector ray never reaches H = {h}")
    s0 = brentq(g, 0.0, s_hi, xtol=1e-15, rtol=1e-15)
    return PhasePoint(p=sad.p + s0 * d[1], q=sad.q + s0 * d[0], z=w)


def _transversal_qp(sys, h, w):
    x = transversal_point(sys, h, w)
    return np.array([x.q, x.p])


def _adjoint_init(sys: SystemDef, h, w):
    """m(0) = grad t at the transversal point of the orbit (h, w).

    Solves m . dgamma/dh = 0, m . dgamma/dw_i = 0, m . X_H = 1 where
    gamma(h, w) is the transversal map; gamma derivatives by central
    differences of the ray/level-set solve.
    """
    w = np.atleast_1d(np.asarray(w, float))
    k = len(w)
    dim = 2 + k
    M = np.zeros((dim, dim))
    dh = 1e-6 * h
    qp_p = _transversal_qp(sys, h + dh, w)
    if h - dh >= H_FLOOR:
        qp_m = _transversal_qp(sys, h - dh, w)
        M[0, :2] = (qp_p - qp_m) / (2 * dh)
    else:
        # at the chart floor: one-sided difference
        M[0, :2] = (qp_p - _transversal_qp(sys, h, w)) / dh
    for i in range(k):
        dwi = 1e-6 * max(1.0, abs(w[i]))
        e = np.zeros(k)
        e[i] = dwi
        qp_p = _transversal_qp(sys, h, w + e)
        qp_m = _transversal_qp(sys, h, w - e)
        M[1 + i, :2] = (qp_p - qp_m) / (2 * dwi)
        M[1 + i, 2 + i] = 1.0
    x0 = transversal_point(sys, h, w)
    hp, hq, _ = sys.grad_H(x0.p, x0.q, w)
    M[-1, 0] = hp          # dq/dt
    M[-1, 1] = -hq         # dp/dt
    rhs = np.zeros(dim)
    rhs[-1] = 1.0
    return np.linalg.solve(M, rhs), np.array([x0.q, x0.p])


def _flow_rhs(sys, w):
    """Unperturbed flow for batched states y = (q, p)."""
    def f(t, y):
        q, p = y[..., 0], y[..., 1]
        hp, hq, _ = sys.grad_H(p, q, w[:, None] if w.ndim == 1 else w)
        return np.stack([hp, -hq], axis=-1)
    return f


def _aug_rhs(sys, w):
    """Flow plus adjoint transport: y = (q, p, m_q, m_p, m_z1..)."""
    k = len(w)

    def f(t, y):
        q, p = y[..., 0], y[..., 1]
        m = y[..., 2:]
        zcol = w[:, None]
        hp, hq, _ = sys.grad_H(p, q, zcol)
        J = sys.grad_H_jac_eval(p, q, zcol)   # (2, 2+k, n)
        out = np.empty_like(y)
        out[..., 0] = hp
        out[..., 1] = -hq
        # mdot_a = -(J[0, a] m_q - J[1, a] m_p)
        for a in range(2 + k):
            out[..., 2 + a] = -(J[0, a] * m[..., 0] - J[1, a] * m[..., 1])
        return out
    return f


def _find_periods(sys, w, starts, dt=0.01, t_max=400.0):
    """Batched period search: first oriented return to the transversal ray.

    starts: (n, 2) transversal points.  Returns periods (n,).
    """
    sad = saddle(sys, w)
    d = sad.bisector_outer
    nrm = np.array([-d[1], d[0]])  # normal to the ray in (q, p)
    c = sad.qp

    f = _flow_rhs(sys, w)
    n = starts.shape[0]
    y = starts.copy()
    t = np.zeros(n)
    k0 = f(t, y)
    # orientation of the crossing at the start
    sig = np.sign(k0 @ nrm)
    g_prev = np.zeros(n)  # exactly on the section
    T = np.full(n, np.nan)
    done = np.zeros(n, bool)
    steps = int(np.ceil(t_max / dt))
    for _ in range(steps):
        y_new, k_start = rk.rk8_step(f, t, y, dt)
        g_new = sig * ((y_new - c) @ nrm)
        along = (y_new - c) @ d
        hit = (~done) & (g_prev < 0) & (g_new >= 0) & (along > 0)
        if hit.any():
            idx = np.where(hit)[0]
            k_end = f(t + dt, y_new)
            s = rk.hermite_root(
                g_prev[idx], g_new[idx],
                sig[idx] * (k_start[idx] @ nrm) * dt,
                sig[idx] * (k_end[idx] @ nrm) * dt)
            # Newton polish with single RK8 steps from the step start
            for _ in range(3):
                y_c, _ = rk.rk8_step(f, t[idx], y[idx], s * dt)
                g_c = sig[idx] * ((y_c - c) @ nrm)
                gd = sig[idx] * (f(t[idx], y_c) @ nrm)
                s = s - g_c / (gd * dt)
            T[idx] = t[idx] + s * dt
            done[idx] = True
        if done.all():
            break
        g_prev = g_new
        y = y_new
        t = t + dt
    if not done.all():
        raise EventNotFound(
            f"no transversal return within t_max={t_max} for "
            f"{int((~done).sum())} orbit(s)")
    return T


def build_orbits(sys: SystemDef, hs, w, n_nodes=None):
    """Compute (and cache) orbits for all energies hs at parameter w."""
    if n_nodes is None:
        n_nodes = N_NODES_DEFAULT
    w = np.atleast_1d(np.asarray(w, float))
    hs = np.atleast_1d(np.asarray(hs, float))
    missing = [h for h in hs
               if _cache.get(_cache.key(sys, h, w, n_nodes)) is None]
    if not missing:
        return [
            _cache.get(_cache.key(sys, h, w, n_nodes)) for h in hs]
    hs_new = np.array(sorted(set(float(h) for h in missing)))
    for h in hs_new:
        if not (H_FLOOR <= h <= sys.h_max):
            raise OutsideChart(f"h = {h} outside [{H_FLOOR}, {sys.h_max}]")

    starts = np.stack([_transversal_qp(sys, h, w) for h in hs_new])
    lam = saddle(sys, w).lam
    T = _find_periods(sys, w, starts, dt=0.01 / max(lam, 0.25))

    # phase 2: fixed-step augmented integration on the per-orbit grid
    n = len(hs_new)
    k = len(w)
    m0 = np.empty((n, 2 + k))
    for i, h in enumerate(hs_new):
        m0[i], _ = _adjoint_init(sys, h, w)
    y = np.concatenate([starts, m0], axis=1)
    f = _aug_rhs(sys, w)
    dt = T / (n_nodes * _N_SUB)
    nodes = np.empty((n_nodes, n, 4 + k))  # (q, p, m_q, m_p, m_z...)
    t = np.zeros(n)
    for j in range(n_nodes * _N_SUB):
        if j % _N_SUB == 0:
            nodes[j // _N_SUB] = y
        y, _ = rk.rk8_step(f, t, y, dt)
        t = t + dt
    y_end = y

    out = []
    samples = {}
    for i, h in enumerate(hs_new):
        q = nodes[:, i, 0].copy()
        p = nodes[:, i, 1].copy()
        m = nodes[:, i, 2:].T.copy()
        grad_T = y_end[i, 2:] - m0[i]
        x0q, x0p = starts[i]
        hp, hq, hz = sys.grad_H(x0p, x0q, w)
        gqp = np.array([hq, hp])  # grad H in (q, p) order
        T_h = float((grad_T[:2] @ gqp) / (gqp @ gqp))
        T_w = grad_T[2:] - T_h * np.asarray(hz).reshape(-1)
        Hn = sys.hamiltonian(p, q, w[:, None])
        drift = float(np.max(np.abs(Hn - h)))
        defect = float(np.hypot(*(y_end[i, :2] - starts[i])))
        tol = 1e-9 * max(1.0, h)
        if drift > tol:
            raise EnergyDrift(f"|H - h| = {drift:.2e} > {tol:.2e} at h={h}")
        ts = np.arange(n_nodes) * (T[i] / n_nodes)
        sample = OrbitSample(h, w, T[i], ts, q, p, m, grad_T, T_h, T_w,
                             drift, defect)
        samples[float(h)] = sample
        _cache.put(_cache.key(sys, h, w, n_nodes), sample)
    for h in hs:
        got = _cache.get(_cache.key(sys, h, w, n_nodes))
        out.append(got if got is not None else samples[float(h)])
    return out


def orbit(sys: SystemDef, h, w, n_nodes=None) -> OrbitSample:
    """The cached orbit at (h, w); computed on demand.

    n_nodes defaults to the module-level N_NODES_DEFAULT (read at call
    time, so quadrature-convergence checks can vary it).
    """
    if n_nodes is None:
        n_nodes = N_NODES_DEFAULT
    w = np.atleast_1d(np.asarray(w, float))
    hit = _cache.get(_cache.key(sys, h, w, n_nodes))
    if hit is not None:
        return hit
    return build_orbits(sys, [h], w, n_nodes)[0]


def to_angle(sys: SystemDef, x: PhasePoint) -> AnglePoint:
    """Chart coordinates of a phase point in the outer domain."""
    h = float(sys.hamiltonian(x.p, x.q, x.z))
    if not (H_FLOOR <= h <= sys.h_max):
        raise OutsideChart(f"H(x) = {h} outside [{H_FLOOR}, {sys.h_max}]")
    orb = orbit(sys, h, x.z)
    d2 = (orb.q - x.q) ** 2 + (orb.p - x.p) ** 2
    t = orb.t_nodes[int(np.argmin(d2))]
    # Newton on the stationarity of |r(t) - x|^2 (x lies on this orbit)
    for _ in range(8):
        qt, pt = orb.state_at(t)
        dq = orb.interp("q", orb.q, t % orb.T, derivative=True)
        dp = orb.interp("p", orb.p, t % orb.T, derivative=True)
        num = (qt - x.q) * dq + (pt - x.p) * dp
        den = dq * dq + dp * dp
        step = num / den
        t = t - step
        if abs(step) < 1e-14 * orb.T:
            break
    qt, pt = orb.state_at(t)
    if np.hypot(qt - x.q, pt - x.p) > 1e-6 * max(1.0, np.hypot(x.q, x.p)):
        raise OutsideChart("point does not lie on the charted orbit")
    return AnglePoint(h=h, w=x.z, phi=2 * np.pi * (float(t) % orb.T) / orb.T)


def from_angle(sys: SystemDef, a: AnglePoint) -> PhasePoint:
    """Inverse chart map via spectral interpolation of the stored orbit."""
    orb = orbit(sys, a.h, a.w)
    t = a.phi * orb.T / (2 * np.pi)
    q, p = orb.state_at(t)
    return PhasePoint(p=float(p), q=float(q), z=a.w)


def f_components_grid(sys: SystemDef, orb: OrbitSample, eps: float = 0.0):
    """(f_h, f_w, f_phi) sampled on the orbit's angle grid.

    f_w has shape (k, n).  The adjoint route for f_phi is exact up to
    integration tolerance; see the module docstring.
    """
    w = orb.w
    zcol = w[:, None]
    q, p = orb.q, orb.p
    fq, fp, fz = sys.perturbation(p, q, zcol, eps)
    fz = np.asarray(fz).reshape(len(w), -1)
    hp, hq, hz = sys.grad_H(p, q, zcol)
    hz = np.asarray(hz).reshape(len(w), -1)
    fh = fq * hq + fp * hp + np.sum(fz * hz, axis=0)
    m_dot_f = orb.m[0] * fq + orb.m[1] * fp + np.sum(orb.m[2:] * fz, axis=0)
    gradT_dot_f = orb.T_h * fh + np.sum(orb.T_w[:, None] * fz, axis=0)
    fphi = (2 * np.pi / orb.T) * m_dot_f \
        - (2 * np.pi * orb.t_nodes / orb.T**2) * gradT_dot_f
    return fh, fz, fphi


def f_components(sys: SystemDef, a: AnglePoint, eps: float = 0.0):
    """(f_h, f_w, f_phi) at a single chart point."""
    orb = orbit(sys, a.h, a.w)
    t = a.phi * orb.T / (2 * np.pi)
    q, p = (float(v) for v in orb.state_at(t))
    w = a.w
    fq, fp, fz = sys.perturbation(p, q, w, eps)
    fz = np.atleast_1d(np.asarray(fz, float)).reshape(-1)
    hp, hq, hz = sys.grad_H(p, q, w)
    hz = np.atleast_1d(np.asarray(hz, float)).reshape(-1)
    fh = float(fq * hq + fp * hp + fz @ hz)
    m = orb.m_at(t).reshape(-1)
    m_dot_f = m[0] * fq + m[1] * fp + m[2:] @ fz
    gradT_dot_f = orb.T_h * fh + orb.T_w @ fz
    fphi = (2 * np.pi / orb.T) * m_dot_f \
        - (2 * np.pi * t / orb.T**2) * gradT_dot_f
    return fh, fz, float(fphi)


def chart_partials(sys: SystemDef, h, w, rel_step_h=1e-4,
                   step_w=1e-5) -> ChartPartials:
    """Central finite differences of omega and T in h and each w_i."""
    w = np.atleast_1d(np.asarray(w, float))
    dh = rel_step_h * h
    if h - dh <= H_FLOOR:
        raise StepUnderflow(f"h = {h} too small for step {dh}")
    o_p, o_m = build_orbits(sys, [h + dh, h - dh], w)
    dom_dh = (o_p.omega - o_m.omega) / (2 * dh)
    dT_dh = (o_p.T - o_m.T) / (2 * dh)
    k = len(w)
    dom_dw = np.empty(k)
    dT_dw = np.empty(k)
    for i in range(k):
        e = np.zeros(k)
        e[i] = step_w
        op = orbit(sys, h, w + e)
        om = orbit(sys, h, w - e)
        dom_dw[i] = (op.omega - om.omega) / (2 * step_w)
        dT_dw[i] = (op.T - om.T) / (2 * step_w)
    return ChartPartials(dom_dh=float(dom_dh), dom_dw=dom_dw,
                         dT_dh=float(dT_dh), dT_dw=dT_dw,
                         step_h=dh, step_w=step_w)
