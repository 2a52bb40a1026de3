"""First-order averaging kernels and first/second-order means.

The kernel u_{a,1} for a in {h, w_1..w_k} solves the homological
equation  omega * du/dphi = f_a - <f_a>_phi  with zero phi-mean,
equivalently the shift-integral

    u_{a,1}(h, w, t0) = (1/T) int_0^T (t - T/2) f_a(t + t0) dt.

On the uniform angle grid this operator is realized in Fourier space
(divide the nonzero modes of f_a by i m omega m); the (t - T/2) kernel
is discontinuous at the period wrap, so plain trapezoid summation of the
written integral would lose both spectral accuracy and the exact
zero-mean property, while the Fourier form preserves both.

Second-order means use the integration-by-parts form

    2 pi fbar_{h,2} = int (Div f - sum_i d f_{w_i}/d w_i
                           - sum_i (T_{w_i}/T) f_{w_i}) u_h
                      + sum_i (d f_h / d w_i) u_{w_i} dphi
                      - omega^{-1} sum_i (d omega/d w_i) int f_h u_{w_i} dphi,

and its w-component analogue with the omega d/dh (int f_a u_h dt) term.
The (T_w/T) f_w contributions enter through the divergence identity in
the chart (the angle-chart volume density is the period, whose w-gradient
matters once f_w varies along the orbit); they vanish for phi-independent
f_w.  The direct form <df_a/dh u_h + df_a/dw u_w + df_a/dphi u_phi>_phi
is kept as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chart import (build_orbits, chart_partials, f_components_grid,
                    orbit)
from .errors import StepUnderflow
from .systems import H_FLOOR, SystemDef


def _antiderivative(values, T):
    """Zero-mean periodic antiderivative of (values - mean) on the grid."""
    n = len(values)
    c = np.fft.fft(values) / n
    m = np.fft.fftfreq(n, d=1.0 / n)
    om = 2 * np.pi / T
    denom = 1j * m * om
    denom[0] = 1.0
    cu = c / denom
    cu[0] = 0.0
    return np.fft.ifft(cu * n).real


def _antiderivative_at(values, T, t0):
    """The same antiderivative evaluated at an arbitrary time offset t0."""
    n = len(values)
    c = np.fft.fft(values) / n
    m = np.fft.fftfreq(n, d=1.0 / n)
    om = 2 * np.pi / T
    denom = 1j * m * om
    denom[0] = 1.0
    cu = c / denom
    cu[0] = 0.0
    return float(np.real(np.sum(cu * np.exp(1j * m * om * t0))))


@dataclass
class AveragingKernelSample:
    """u_{h,1}, u_{w,1}, u_{phi,1} on the uniform angle grid at one (h, w)."""

    h: float
    w: np.ndarray
    eps: float
    phi: np.ndarray
    u_h1: np.ndarray
    u_w1: np.ndarray          # (k, n)
    u_phi1: np.ndarray
    omega1: float
    n_phi: int


@dataclass
class AveragedCoefficients:
    """Coefficients of the averaged system of order 2 at one (h, w)."""

    h: float
    w: np.ndarray
    fbar_h1: float
    fbar_w1: np.ndarray
    omega1: float
    fbar_h2: float
    fbar_w2: np.ndarray
    fhat_h2: float
    fhat_w2: np.ndarray
    u_h1_at0: float
    I_diag: float             # int_0^{2pi} t f0_h dphi
    n_phi: int
    err_est: dict = field(default_factory=dict)


def kernel_samples(sys: SystemDef, h, w, eps: float = 0.0) -> AveragingKernelSample:
    """All first-order kernels at (h, w) for the field at the given eps."""
    w = np.atleast_1d(np.asarray(w, float))
    orb = orbit(sys, h, w)
    fh, fw, fphi = f_components_grid(sys, orb, eps)
    u_h1 = _antiderivative(fh, orb.T)
    k = len(w)
    u_w1 = np.stack([_antiderivative(fw[i], orb.T) for i in range(k)])
    cp = chart_partials(sys, h, w)
    Y_phi = fphi + cp.dom_dh * u_h1 \
        + np.sum(cp.dom_dw[:, None] * u_w1, axis=0)
    omega1 = float(np.mean(Y_phi))
    u_phi1 = _antiderivative(Y_phi, orb.T)
    phi = 2 * np.pi * np.arange(orb.n_nodes) / orb.n_nodes
    return AveragingKernelSample(h=float(h), w=w, eps=eps, phi=phi,
                                 u_h1=u_h1, u_w1=u_w1, u_phi1=u_phi1,
                                 omega1=omega1, n_phi=orb.n_nodes)


def u1(sys: SystemDef, a, h, w, phi0: float, eps: float = 0.0) -> float:
    """u_{a,1}(h, w, phi0) for a = "h" or ("w", i) or an integer w-index."""
    w = np.atleast_1d(np.asarray(w, float))
    orb = orbit(sys, h, w)
    fh, fw, _ = f_components_grid(sys, orb, eps)
    if a == "h":
        g = fh
    else:
        idx = a[1] if isinstance(a, tuple) else int(a)
        g = fw[idx]
    t0 = (float(phi0) % (2 * np.pi)) * orb.T / (2 * np.pi)
    return _antiderivative_at(g, orb.T, t0)


def fbar1(sys: SystemDef, a, h, w, eps: float = 0.0):
    """phi-average of a field component: a = "h", "phi", ("w", i)."""
    w = np.atleast_1d(np.asarray(w, float))
    orb = orbit(sys, h, w)
    fh, fw, fphi = f_components_grid(sys, orb, eps)
    if a == "h":
        return float(np.mean(fh))
    if a == "phi":
        return float(np.mean(fphi))
    idx = a[1] if isinstance(a, tuple) else int(a)
    return float(np.mean(fw[idx]))


def omega1(sys: SystemDef, h, w) -> float:
    """omega_1 = <f0_phi + domega/dv . u0_{v,1}>_phi (the u-terms average
    to zero exactly; they are kept for fidelity to the defining form)."""
    return kernel_samples(sys, h, w, eps=0.0).omega1


def u_phi1(sys: SystemDef, h, w) -> np.ndarray:
    """u_{phi,1} on the angle grid (zero mean)."""
    return kernel_samples(sys, h, w, eps=0.0).u_phi1


def _w_derivatives(sys, h, w, eps, dw=1e-5):
    """Chart derivatives d f_h/d w_i and d f_{w_j}/d w_j on the grid."""
    w = np.atleast_1d(np.asarray(w, float))
    k = len(w)
    n = orbit(sys, h, w).n_nodes
    dfh_dw = np.empty((k, n))
    dfw_dw = np.empty((k, n))
    for i in range(k):
        e = np.zeros(k)
        e[i] = dw
        op = orbit(sys, h, w + e)
        om = orbit(sys, h, w - e)
        fh_p, fw_p, _ = f_components_grid(sys, op, eps)
        fh_m, fw_m, _ = f_components_grid(sys, om, eps)
        dfh_dw[i] = (fh_p - fh_m) / (2 * dw)
        dfw_dw[i] = (fw_p[i] - fw_m[i]) / (2 * dw)
    return dfh_dw, dfw_dw


def _J_fw_uh(sys, h, w, eps):
    """J_i(h) = int_0^T f_{w_i} u_{h,1} dt = T <f_{w_i} u_h>_phi."""
    orb = orbit(sys, h, w)
    fh, fw, _ = f_components_grid(sys, orb, eps)
    uh = _antiderivative(fh, orb.T)
    return orb.T * np.mean(fw * uh[None, :], axis=1)


def fbar2(sys: SystemDef, h, w, eps: float = 0.0, rel_step_h: float = 1e-3,
          dw: float = 1e-5):
    """(fbar_h2, fbar_w2) by the integration-by-parts formulas.

    The h-derivative in the w-component is a central difference with
    relative step rel_step_h, Richardson-extrapolated once.
    """
    w = np.atleast_1d(np.asarray(w, float))
    k = len(w)
    orb = orbit(sys, h, w)
    fh, fw, _ = f_components_grid(sys, orb, eps)
    uh = _antiderivative(fh, orb.T)
    uw = np.stack([_antiderivative(fw[i], orb.T) for i in range(k)])
    zcol = w[:, None]
    divf = np.broadcast_to(
        np.asarray(sys.perturbation_div_eval(orb.p, orb.q, zcol, eps), float),
        fh.shape)

    if sys.has_param_drift:
        dfh_dw, dfw_dw = _w_derivatives(sys, h, w, eps, dw)
        cp = chart_partials(sys, h, w)
        dom_dw = cp.dom_dw
    else:
        # f_z vanishes identically: u_w = 0 and all w-derivative terms drop
        dfh_dw = np.zeros((k, orb.n_nodes))
        dfw_dw = np.zeros((k, orb.n_nodes))
        dom_dw = np.zeros(k)

    # the period's w-gradient enters the divergence alongside its
    # h-gradient; for f_w independent of phi these terms average to zero
    sum_dfw = np.sum(dfw_dw, axis=0)
    sum_Tw_fw = np.sum((orb.T_w[:, None] / orb.T) * fw, axis=0)
    fbar_h2 = float(np.mean((divf - sum_dfw - sum_Tw_fw) * uh)
                    + np.mean(np.sum(dfh_dw * uw, axis=0))
                    - np.sum(dom_dw * np.mean(fh[None, :] * uw, axis=1))
                    / orb.omega)

    if not sys.has_param_drift:
        return fbar_h2, np.zeros(k)

    # w-components: (1/T) dJ/dh - omega^{-1} sum_j domega/dw_j <f_w u_wj> 2pi/(2pi)
    # + <Div f u_w + sum_j (df_w/dw_j u_wj - df_wj/dw_j u_w)>
    if h - 2 * rel_step_h * h <= H_FLOOR:
        raise StepUnderflow(f"h = {h} too small for fbar2 h-derivative")

    def D(delta):
        Jp = _J_fw_uh(sys, h + delta, w, eps)
        Jm = _J_fw_uh(sys, h - delta, w, eps)
        return (Jp - Jm) / (2 * delta)

    d1 = D(rel_step_h * h)
    d2 = D(0.5 * rel_step_h * h)
    dJ_dh = (4 * d2 - d1) / 3

    dfw_dwi_full = np.empty((k, k, orb.n_nodes))  # d f_{w_a} / d w_j
    for j in range(k):
        e = np.zeros(k)
        e[j] = dw
        _, fw_p, _ = f_components_grid(sys, orbit(sys, h, w + e), eps)
        _, fw_m, _ = f_components_grid(sys, orbit(sys, h, w - e), eps)
        dfw_dwi_full[:, j] = (fw_p - fw_m) / (2 * dw)

    fbar_w2 = np.empty(k)
    for a in range(k):
        cross = np.mean(np.sum(dfw_dwi_full[a] * uw, axis=0))
        term3 = float(np.mean(divf * uw[a]) + cross
                      - np.mean(sum_dfw * uw[a])
                      - np.mean(sum_Tw_fw * uw[a]))
        term2 = float(np.sum(dom_dw * np.mean(fw[a][None, :] * uw, axis=1))
                      / orb.omega)
        fbar_w2[a] = dJ_dh[a] / orb.T - term2 + term3
    return fbar_h2, fbar_w2


def fbar2_direct(sys: SystemDef, h, w, eps: float = 0.0,
                 rel_step_h: float = 1e-4, dw: float = 1e-5):
    """Cross-check form: <df_a/dh u_h + df_a/dw . u_w + df_a/dphi u_phi>.

    Independent of fbar2 in both formula and required derivatives.
    Returns (fbar_h2, fbar_w2).
    """
    w = np.atleast_1d(np.asarray(w, float))
    k = len(w)
    ks = kernel_samples(sys, h, w, eps)
    orb = orbit(sys, h, w)
    dh = rel_step_h * h
    if h - dh <= H_FLOOR:
        raise StepUnderflow(f"h = {h} too small for step {dh}")
    op, om_ = build_orbits(sys, [h + dh, h - dh], w)
    fh_p, fw_p, _ = f_components_grid(sys, op, eps)
    fh_m, fw_m, _ = f_components_grid(sys, om_, eps)
    dfh_dh = (fh_p - fh_m) / (2 * dh)
    dfw_dh = (fw_p - fw_m) / (2 * dh)
    fh, fw, _ = f_components_grid(sys, orb, eps)
    # d/dphi along the grid, spectral
    n = orb.n_nodes
    mm = np.fft.fftfreq(n, d=1.0 / n)
    dfh_dphi = np.fft.ifft(np.fft.fft(fh) * (1j * mm)).real
    dfw_dphi = np.stack([np.fft.ifft(np.fft.fft(fw[i]) * (1j * mm)).real
                         for i in range(k)])
    if sys.has_param_drift:
        dfh_dw, _ = _w_derivatives(sys, h, w, eps, dw)
        dfw_dw_full = np.empty((k, k, n))
        for j in range(k):
            e = np.zeros(k)
            e[j] = dw
            _, fwp, _ = f_components_grid(sys, orbit(sys, h, w + e), eps)
            _, fwm, _ = f_components_grid(sys, orbit(sys, h, w - e), eps)
            dfw_dw_full[:, j] = (fwp - fwm) / (2 * dw)
    else:
        dfh_dw = np.zeros((k, n))
        dfw_dw_full = np.zeros((k, k, n))

    fbar_h2 = float(np.mean(dfh_dh * ks.u_h1)
                    + np.mean(np.sum(dfh_dw * ks.u_w1, axis=0))
                    + np.mean(dfh_dphi * ks.u_phi1))
    fbar_w2 = np.empty(k)
    for a in range(k):
        fbar_w2[a] = (np.mean(dfw_dh[a] * ks.u_h1)
                      + np.mean(np.sum(dfw_dw_full[a] * ks.u_w1, axis=0))
                      + np.mean(dfw_dphi[a] * ks.u_phi1))
    return fbar_h2, fbar_w2


def hat_coefficients(sys: SystemDef, h, w) -> AveragedCoefficients:
    """Averaged-system coefficients: hat-f1 = fbar0_1, plus second-order
    means corrected by the eps-slope of the perturbation field."""
    w = np.atleast_1d(np.asarray(w, float))
    orb = orbit(sys, h, w)
    fh0, fw0, fphi0 = f_components_grid(sys, orb, 0.0)
    fbar_h1 = float(np.mean(fh0))
    fbar_w1 = np.mean(fw0, axis=1)
    ks = kernel_samples(sys, h, w, eps=0.0)
    fbar_h2, fbar_w2 = fbar2(sys, h, w, eps=0.0)

    # <f1_h>, <f1_w> from the eps-slope of the field
    zcol = w[:, None]
    f1q, f1p, f1z = sys.perturbation_deps_eval(orb.p, orb.q, zcol)
    hp, hq, hz = sys.grad_H(orb.p, orb.q, zcol)
    f1z = np.asarray(f1z).reshape(len(w), -1)
    hz = np.asarray(hz).reshape(len(w), -1)
    f1_h = f1q * hq + f1p * hp + np.sum(f1z * hz, axis=0)
    fhat_h2 = fbar_h2 + float(np.mean(f1_h))
    fhat_w2 = fbar_w2 + np.mean(f1z, axis=1)

    I_diag = float(2 * np.pi * np.mean(orb.t_nodes * fh0))
    # subsampled-grid deltas as quadrature error estimates
    err = {
        "fbar_h1": abs(float(np.mean(fh0[::2])) - fbar_h1),
        "omega1": abs(float(np.mean(fphi0[::2])) - float(np.mean(fphi0))),
    }
    return AveragedCoefficients(
        h=float(h), w=w, fbar_h1=fbar_h1, fbar_w1=fbar_w1,
        omega1=ks.omega1, fbar_h2=fbar_h2, fbar_w2=fbar_w2,
        fhat_h2=fhat_h2, fhat_w2=fhat_w2,
        u_h1_at0=float(ks.u_h1[0]), I_diag=I_diag,
        n_phi=orb.n_nodes, err_est=err)


def omega1_I_diagnostic(sys: SystemDef, h, w, rel_step_h: float = 1e-3):
    """(1/T) dI/dh with I(h, w) = int_0^{2pi} t f0_h dphi (central FD).

    Approximates omega_1 as h -> 0; used as an independent diagnostic.
    """
    w = np.atleast_1d(np.asarray(w, float))

    def I_of(hh):
        orb = orbit(sys, hh, w)
        fh, _, _ = f_components_grid(sys, orb, 0.0)
        return 2 * np.pi * np.mean(orb.t_nodes * fh)

    dh = rel_step_h * h
    if h - dh <= H_FLOOR:
        raise StepUnderflow(f"h = {h} too small for step {dh}")
    val = (I_of(h + dh) - I_of(h - dh)) / (2 * dh)
    return float(val / orbit(sys, h, w).T)


def shift_initial(sys: SystemDef, v0, phi0: float, eps: float):
    """hat-v0 = v0 - eps * u0_{v,1}(v0, phi0), componentwise in (h, w)."""
    h0, w0 = v0
    w0 = np.atleast_1d(np.asarray(w0, float))
    if eps == 0.0:
        return float(h0), w0.copy()
    h_hat = float(h0) - eps * u1(sys, "h", h0, w0, phi0, eps=0.0)
    w_hat = np.array([w0[i] - eps * u1(sys, ("w", i), h0, w0, phi0, eps=0.0)
                      for i in range(len(w0))])
    return h_hat, w_hat
