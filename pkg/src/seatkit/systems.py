"""Perturbed one-degree-of-freedom Hamiltonian systems.

A system is the unperturbed Hamiltonian H(p, q, z) with a parameter vector
z (dimension k >= 1), together with the perturbation field
(f_q, f_p, f_z) multiplying the small parameter eps:

    dq/dt = dH/dp + eps * f_q,
    dp/dt = -dH/dq + eps * f_p,
    dz/dt = eps * f_z.

H is normalized so that H = 0 at the saddle for every z, and H > 0 in
the outer domain.  The energy change rate along the perturbed flow is
eps * f_h with f_h = f_q dH/dq + f_p dH/dp + f_z . dH/dz.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateSaddle, NoConvergence

H_FLOOR = 1e-6  # minimum charted energy; chart operations refuse below


@dataclass(frozen=True)
class PhasePoint:
    """A point (p, q, z) of the extended phase space."""

    p: float
    q: float
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, float)))
        if not (np.isfinite(self.p) and np.isfinite(self.q)
                and np.all(np.isfinite(self.z))):
            raise ValueError("PhasePoint components must be finite")


@dataclass(frozen=True)
class SystemDef:
    """Definition of a perturbed 1-DOF Hamiltonian system.

    All callables take (p, q, z) with p, q scalars or equal-shape arrays
    and z an array of shape (k,) or (k,) + shape(p); they must broadcast.

    grad_H returns (dH/dp, dH/dq, dH/dz);  grad_H_jac returns the
    Jacobian of (dH/dp, dH/dq) with respect to (q, p, z_1..z_k) as an
    array of shape (2, 2 + k) (+ broadcast trailing axes), which the
    adjoint transport of the angle chart needs.  perturbation returns
    (f_q, f_p, f_z) at the given eps; perturbation_div returns
    Div f = df_q/dq + df_p/dp + sum_i df_{z_i}/dz_i.  perturbation_deps
    (optional) returns df/deps at eps = 0; by default it is obtained by
    central differences in eps.
    """

    name: str
    params: tuple
    param_dim: int
    hamiltonian: Callable
    grad_H: Callable
    perturbation: Callable
    saddle_guess: tuple
    grad_H_jac: Optional[Callable] = None
    perturbation_div: Optional[Callable] = None
    perturbation_deps: Optional[Callable] = None
    has_param_drift: bool = True
    h_max: float = 2.0
    default_z: np.ndarray = field(default=None)

    def __post_init__(self):
        z0 = self.default_z
        if z0 is None:
            z0 = np.zeros(self.param_dim)
        object.__setattr__(self, "default_z", np.atleast_1d(np.asarray(z0, float)))

    @property
    def token(self):
        """Hashable content identity used as an orbit-cache key component."""
        return (self.name, self.params, self.param_dim)

    # -- derivative fallbacks ------------------------------------------

    def grad_H_jac_eval(self, p, q, z):
        if self.grad_H_jac is not None:
            return self.grad_H_jac(p, q, z)
        return _fd_grad_H_jac(self, p, q, z)

    def perturbation_div_eval(self, p, q, z, eps):
        if self.perturbation_div is not None:
            return self.perturbation_div(p, q, z, eps)
        return _fd_perturbation_div(self, p, q, z, eps)

    def perturbation_deps_eval(self, p, q, z):
        if self.perturbation_deps is not None:
            return self.perturbation_deps(p, q, z)
        de = 1e-4
        fp_ = self.perturbation(p, q, z, de)
        fm_ = self.perturbation(p, q, z, -de)
        return tuple((a - b) / (2 * de) for a, b in zip(fp_, fm_))


@dataclass(frozen=True)
class SaddleData:
    """Saddle location and local geometry.

    Direction vectors are unit 2-vectors in (q, p) component order.
    bisector_outer bisects the separatrix branches and points into the
    outer domain (H > 0); it defines the phi = 0 transversal ray.
    """

    p: float
    q: float
    z: np.ndarray
    lam: float
    unstable_dir: np.ndarray
    stable_dir: np.ndarray
    bisector_outer: np.ndarray

    @property
    def location(self):
        return (self.p, self.q)

    @property
    def qp(self):
        return np.array([self.q, self.p])


def _fd_step(x):
    return 1e-5 * max(1.0, abs(float(x)))


def _fd_grad_H_jac(sys: SystemDef, p, q, z):
    """4th-order central differences of (H_p, H_q) in (q, p, z)."""
    k = sys.param_dim
    z = np.asarray(z, float)
    shp = np.shape(np.asarray(p) + np.asarray(q) + z[0])
    out = np.empty((2, 2 + k) + shp)

    def g(pp, qq, zz):
        gp, gq, _ = sys.grad_H(pp, qq, zz)
        b = np.broadcast_arrays(gp, gq)
        return np.stack([b[0], b[1]])

    def d4(fun, h):
        return (fun(-2 * h) - 8 * fun(-h) + 8 * fun(h) - fun(2 * h)) / (12 * h)

    hq = _fd_step(np.max(np.abs(q)) if np.ndim(q) else q)
    out[:, 0] = d4(lambda s: g(p, q + s, z), hq)
    hp = _fd_step(np.max(np.abs(p)) if np.ndim(p) else p)
    out[:, 1] = d4(lambda s: g(p + s, q, z), hp)
    for i in range(k):
        e = np.zeros(k)
        e[i] = 1.0
        e = e.reshape((k,) + (1,) * (z.ndim - 1))
        hz = _fd_step(np.max(np.abs(z[i])))
        out[:, 2 + i] = d4(lambda s: g(p, q, z + s * e), hz)
    return out


def _fd_perturbation_div(sys: SystemDef, p, q, z, eps):
    z = np.asarray(z, float)
    k = sys.param_dim

    def comp(i, pp, qq, zz):
        return sys.perturbation(pp, qq, zz, eps)[i]

    hq = _fd_step(np.max(np.abs(q)) if np.ndim(q) else q)
    hp = _fd_step(np.max(np.abs(p)) if np.ndim(p) else p)
    div = (comp(0, p, q + hq, z) - comp(0, p, q - hq, z)) / (2 * hq)
    div = div + (comp(1, p + hp, q, z) - comp(1, p - hp, q, z)) / (2 * hp)
    for i in range(k):
        e = np.zeros(k)
        e[i] = 1.0
        e = e.reshape((k,) + (1,) * (z.ndim - 1))
        hz = _fd_step(np.max(np.abs(z[i])))
        fz_p = sys.perturbation(p, q, z + hz * e, eps)[2]
        fz_m = sys.perturbation(p, q, z - hz * e, eps)[2]
        div = div + (np.asarray(fz_p)[i] - np.asarray(fz_m)[i]) / (2 * hz)
    return div


def make_duffing_eight(z0: float = 0.0, gamma: float = 1.0,
                       nu: float = 0.0) -> SystemDef:
    """Duffing-type figure eight with damping and parameter drift.

        H = p^2/2 - q^2/2 + z q^3 + q^4/4,   k = 1,
        f = (f_q, f_p, f_z) = (0, -gamma p, nu).

    The saddle sits at (0, 0) with H = 0 for every z; the outer domain is
    H > 0.  z0 is the default parameter value used by experiments.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")

    def hamiltonian(p, q, z):
        return 0.5 * p * p - 0.5 * q * q + z[0] * q**3 + 0.25 * q**4

    def grad_H(p, q, z):
        hp = p
        hq = -q + 3 * z[0] * q * q + q**3
        hz = np.stack([q**3 + np.zeros_like(z[0])])
        return hp, hq, hz

    def grad_H_jac(p, q, z):
        shp = np.shape(np.asarray(p) + np.asarray(q) + z[0])
        J = np.zeros((2, 3) + shp)
        J[0, 1] = 1.0                                   # d H_p / d p
        J[1, 0] = -1.0 + 6 * z[0] * q + 3 * q * q       # d H_q / d q
        J[1, 2] = 3 * q * q                             # d H_q / d z
        return J

    def perturbation(p, q, z, eps):
        zero = np.zeros_like(np.asarray(p, float))
        return zero, -gamma * p, np.stack([nu + zero])

    def perturbation_div(p, q, z, eps):
        return -gamma + np.zeros_like(np.asarray(p, float))

    def perturbation_deps(p, q, z):
        zero = np.zeros_like(np.asarray(p, float))
        return zero, zero, np.stack([zero])

    return SystemDef(
        name="duffing_eight",
        params=(float(z0), float(gamma), float(nu)),
        param_dim=1,
        hamiltonian=hamiltonian,
        grad_H=grad_H,
        grad_H_jac=grad_H_jac,
        perturbation=perturbation,
        perturbation_div=perturbation_div,
        perturbation_deps=perturbation_deps,
        saddle_guess=(0.0, 0.0),
        has_param_drift=(nu != 0.0),
        h_max=2.0,
        default_z=np.array([float(z0)]),
    )


def find_saddle(sys: SystemDef, z, tol: float = 1e-12,
                max_iter: int = 60) -> SaddleData:
    """Locate the saddle C(z) by Newton iteration on grad_{p,q} H = 0.

    Returns the saddle position, the positive eigenvalue lam of the
    linearized flow, the unit eigen-directions, and the outer bisector.
    Raises NoConvergence or DegenerateSaddle.
    """
    z = np.atleast_1d(np.asarray(z, float))
    p, q = float(sys.saddle_guess[0]), float(sys.saddle_guess[1])
    for _ in range(max_iter):
        hp, hq, _ = sys.grad_H(p, q, z)
        J = sys.grad_H_jac_eval(p, q, z)
        # rows: d(H_p, H_q)/d(q, p); solve for the (dq, dp) Newton step
        M = np.array([[J[0, 0], J[0, 1]], [J[1, 0], J[1, 1]]], float)
        try:
            dqp = np.linalg.solve(M, [-hp, -hq])
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(f"singular Jacobian at ({p}, {q})") from exc
        q += dqp[0]
        p += dqp[1]
        if np.hypot(hp, hq) < tol and np.hypot(*dqp) < tol:
            break
    else:
        raise NoConvergence(f"saddle Newton did not converge from "
                            f"{sys.saddle_guess}")

    J = sys.grad_H_jac_eval(p, q, z)
    h_pq, h_pp = float(J[0, 0]), float(J[0, 1])
    h_qq, h_qp = float(J[1, 0]), float(J[1, 1])
    det_hess = h_pp * h_qq - h_pq * h_qp
    if det_hess >= 0:
        raise DegenerateSaddle(
            f"Hessian eigenvalues not of opposite sign at ({p}, {q})")
    # linearization of (dq/dt, dp/dt) = (H_p, -H_q) in (q, p)
    Aq = np.array([[h_pq, h_pp], [-h_qq, -h_qp]])
    evals, evecs = np.linalg.eig(Aq)
    lam = float(np.max(evals.real))
    unstable = evecs[:, np.argmax(evals.real)].real
    stable = evecs[:, np.argmin(evals.real)].real
    unstable = unstable / np.linalg.norm(unstable)
    stable = stable / np.linalg.norm(stable)

    bis = None
    for cand in (unstable + stable, unstable - stable):
        nrm = np.linalg.norm(cand)
        if nrm < 1e-12:
            continue
        cand = cand / nrm
        for sgn in (1.0, -1.0):
            d = sgn * cand
            probe = 1e-3
            val = sys.hamiltonian(p + probe * d[1], q + probe * d[0], z) \
                - sys.hamiltonian(p, q, z)
            if val > 0:
                # canonical choice: positive p-component, then positive q
                if bis is None or (d[1], d[0]) > (bis[1], bis[0]):
                    bis = d
    if bis is None:
        raise DegenerateSaddle("no outward bisector with H > 0 found")
    return SaddleData(p=float(p), q=float(q), z=z, lam=lam,
                      unstable_dir=unstable, stable_dir=stable,
                      bisector_outer=bis)


def f_h(sys: SystemDef, x: PhasePoint, eps: float = 0.0) -> float:
    """Energy change rate of the perturbed flow divided by eps."""
    return float(f_h_qp(sys, x.p, x.q, x.z, eps))


def f_h_qp(sys: SystemDef, p, q, z, eps=0.0):
    """Vectorized f_h = f_q H_q + f_p H_p + f_z . H_z."""
    hp, hq, hz = sys.grad_H(p, q, z)
    fq, fp, fz = sys.perturbation(p, q, z, eps)
    return fq * hq + fp * hp + np.sum(np.asarray(fz) * np.asarray(hz), axis=0)
