import numpy as np
import pytest

from seatkit import chart, errors, flow, simulate
from seatkit.averaging import shift_initial
from seatkit.flow import (compare_to_true, default_h_cut, get_table,
                          integrate_averaged, phase_integral,
                          predict_pseudo_phase)
from seatkit.separatrix import compute_theta
from seatkit.systems import SystemDef, make_duffing_eight

from conftest import circ, make_zero_perturbation

# recorded baseline: order-2 averaged crossing time for
# duffing_eight(0, 1, 0), eps = 1e-3, hat-h0 = 0.5 (tight-tolerance run)
TAU_STAR_REFERENCE = 0.9699762374758549
# recorded baseline: measured pseudo-phase from the transversal at h0 = 0.5
MEASURED_REFERENCE = 0.6837173800934243


def test_w_frozen_trajectory(duffing_asym):
    traj = integrate_averaged(duffing_asym, 2, (0.5, [0.1]), 1e-3)
    assert np.max(np.abs(traj.w - 0.1)) < 1e-12
    assert np.all(np.diff(traj.h) < 0)
    assert np.all(np.diff(traj.tau) > 0)


def test_dtau_dh_ratio_trend(duffing_sym):
    """(dtau/dh) Theta_3 / (-T) -> 1 monotonically as h -> 0."""
    th3 = compute_theta(duffing_sym, [0.0])[2]
    tab = get_table(duffing_sym, [0.0], 1e-3, 0.7)
    ratios = []
    for h in (0.1, 0.03, 0.01):
        T = tab.period(h, [0.0])
        ratios.append(th3 / (abs(tab.fh_rhs(h, [0.0], 1e-3, 2)) * T))
    assert ratios[0] < ratios[1] < ratios[2] < 1.05


def test_tau_star_regression(duffing_sym):
    traj = integrate_averaged(duffing_sym, 2, (0.5, [0.0]), 1e-3)
    assert traj.tau_star == pytest.approx(TAU_STAR_REFERENCE, rel=1e-6)


def test_order2_converges_to_order1(cubic_damping):
    """sup |h_2(tau) - h_1(tau)| = O(eps) for the order-2 flow."""
    tab = get_table(cubic_damping, [0.1], 2e-3, 0.7)
    t1 = integrate_averaged(cubic_damping, 1, (0.5, [0.1]), 1e-9,
                            h_cut=0.01, table=tab)
    sups = []
    for eps in (4e-3, 2e-3):
        t2 = integrate_averaged(cubic_damping, 2, (0.5, [0.1]), eps,
                                h_cut=0.01, table=tab)
        hq = np.linspace(0.012, 0.45, 40)
        tau1 = np.interp(hq, t1.h[::-1], t1.tau[::-1])
        tau2 = np.interp(hq, t2.h[::-1], t2.tau[::-1])
        sups.append(np.max(np.abs(tau1 - tau2)))
    assert sups[1] < 0.65 * sups[0]
    assert sups[1] < 0.05


def test_cutoff_too_large(duffing_sym):
    with pytest.raises(errors.CutoffTooLarge):
        integrate_averaged(duffing_sym, 2, (0.05, [0.0]), 1e-3, h_cut=0.1)


def test_theta_sign_error():
    sys_ = make_duffing_eight(0.0, 1.0, 0.0)
    antidamped = SystemDef(**{
        **sys_.__dict__,
        "name": "antidamped",
        "perturbation": lambda p, q, z, e: (
            np.zeros_like(np.asarray(p, float)), 1.0 * p,
            np.stack([np.zeros_like(np.asarray(p, float))])),
        "perturbation_div": lambda p, q, z, e:
            1.0 + np.zeros_like(np.asarray(p, float)),
        "perturbation_deps": None,
    })
    with pytest.raises(errors.ThetaSignError):
        integrate_averaged(antidamped, 1, (0.3, [0.0]), 1e-3, h_cut=0.01)


def test_phase_integral_hcut_consistency(duffing_sym):
    """Halving h_cut changes the tail-corrected total by < 1e-3 |total|."""
    eps = 1e-3
    tab = get_table(duffing_sym, [0.0], 5e-4, 0.7)
    vals = []
    for hc in (default_h_cut(eps), default_h_cut(eps) / 2):
        traj = integrate_averaged(duffing_sym, 2, (0.5, [0.0]), eps,
                                  h_cut=hc, table=tab)
        vals.append(phase_integral(duffing_sym, traj, eps, table=tab)[0])
    assert abs(vals[0] - vals[1]) < 1e-3 * abs(vals[0])


def test_symmetric_u_star_zero(duffing_sym):
    pred = predict_pseudo_phase(duffing_sym, (0.5, [0.0]), 1.0, 1e-3)
    assert abs(pred.u_star) < 1e-9
    assert abs(pred.u_star_term) < 1e-9


def test_phi0_shift_invariance(duffing_asym):
    p1 = predict_pseudo_phase(duffing_asym, (0.5, [0.1]), 0.7, 2e-3)
    p2 = predict_pseudo_phase(duffing_asym, (0.5, [0.1]),
                              0.7 + 2 * np.pi, 2e-3)
    assert circ(p1.phase_fraction, p2.phase_fraction) < 1e-10


def test_u_star_matches_kernel_limit(duffing_asym):
    """u_* = (Theta_2 - Theta_1)/4 equals the separatrix limit of
    u0_{h,1}(., 0), approached as O(1/ln h)."""
    from seatkit.averaging import u1
    th1, th2, _ = compute_theta(duffing_asym, [0.1])
    u_star = 0.25 * (th2 - th1)
    devs = [abs(u1(duffing_asym, "h", h, [0.1], 0.0) - u_star)
            for h in (1e-2, 1e-4, 1e-6)]
    assert devs[2] < devs[1] < devs[0]
    assert devs[2] < 0.02 * abs(u_star) + 1e-4


def test_prediction_vs_measurement_subset(duffing_asym):
    """Spot check of the full pipeline at eps = 1e-3 (acceptance runs the
    full 20-start sweep)."""
    eps = 1e-3
    rng = np.random.default_rng(11)
    errs = []
    for _ in range(5):
        phi0 = rng.uniform(0, 2 * np.pi)
        h0 = rng.uniform(0.45, 0.55)
        pred = predict_pseudo_phase(duffing_asym, (h0, [0.1]), phi0, eps)
        x0 = chart.from_angle(duffing_asym,
                              chart.AnglePoint(h=h0, w=[0.1], phi=phi0))
        meas = simulate.measure_pseudo_phase(duffing_asym, x0, eps)
        errs.append(circ(pred.phase_fraction, meas.measured_pseudo_phase))
    assert np.median(errs) < 0.03
    assert max(errs) < 0.1


def test_hcut_doubling_stability(duffing_sym):
    eps = 1e-3
    tab = get_table(duffing_sym, [0.0], 5e-4, 0.75)
    rng = np.random.default_rng(4)
    for _ in range(4):
        phi0 = rng.uniform(0, 2 * np.pi)
        p1 = predict_pseudo_phase(duffing_sym, (0.5, [0.0]), phi0, eps,
                                  table=tab)
        p2 = predict_pseudo_phase(duffing_sym, (0.5, [0.0]), phi0, eps,
                                  h_cut=2 * p1.h_cut, table=tab)
        assert circ(p1.phase_fraction, p2.phase_fraction) < 0.01


def test_compare_to_true_zero_perturbation():
    sys_ = make_zero_perturbation()
    rep = compare_to_true(sys_, (0.3, [0.0]), 1.0, 1e-3, h_stop=0.05)
    assert rep["err_norm"] < 1e-8


@pytest.mark.slow
def test_compare_to_true_eps_scaling(duffing_asym):
    """Median error at fixed h_stop scales as eps^2 (ratio in [3, 5]).

    A single start is unusable: the dominant eps^2 term carries the
    phase-dependent second-order kernel, which crosses zero at some
    final phases; the median over a phi0 grid isolates the scale.
    (Acceptance criterion 5 runs this; kept here for module coverage.)
    """
    tab = get_table(duffing_asym, [0.1], 0.01, 0.7)
    phis = 2 * np.pi * np.arange(6) / 6
    med = {}
    for eps in (2e-3, 1e-3):
        errs = [compare_to_true(duffing_asym, (0.5, [0.1]), p, eps,
                                h_stop=0.05, table=tab)["err_norm"]
                for p in phis]
        med[eps] = np.median(errs)
    assert 3.0 < med[2e-3] / med[1e-3] < 5.0


@pytest.mark.slow
def test_order2_not_worse_than_order1(cubic_damping):
    eps = 2e-3
    tab = get_table(cubic_damping, [0.1], 0.01, 0.7)
    e2 = compare_to_true(cubic_damping, (0.5, [0.1]), 0.3, eps,
                         h_stop=0.05, order=2, table=tab)["err_norm"]
    e1 = compare_to_true(cubic_damping, (0.5, [0.1]), 0.3, eps,
                         h_stop=0.05, order=1, table=tab)["err_norm"]
    assert e2 <= e1 * 1.05


@pytest.mark.slow
def test_prediction_with_parameter_drift():
    """nu != 0: hat-w drifts O(1) in slow time; the auto w-axis table
    tracks the coefficient dependence and the prediction still lands
    within the method's error budget."""
    sys_ = make_duffing_eight(0.1, 1.0, 0.05)
    eps = 2e-3
    tab = get_table(sys_, [0.1], 3e-3, 0.55, n_h=36)
    pred = predict_pseudo_phase(sys_, (0.4, [0.1]), 1.1, eps, table=tab)
    assert pred.w_star[0] > 0.12  # the drift actually happened
    x0 = chart.from_angle(sys_, chart.AnglePoint(h=0.4, w=[0.1], phi=1.1))
    meas = simulate.measure_pseudo_phase(sys_,
                                         np.array([x0.q, x0.p, 0.1]), eps)
    assert circ(pred.phase_fraction, meas.measured_pseudo_phase) < 0.08


def test_shift_initial_enters_prediction(duffing_sym):
    # shifting the start by the kernel changes the predicted fraction by
    # O(u/Theta) - the prediction must use hat-v0, not v0
    eps = 2e-3
    pred = predict_pseudo_phase(duffing_sym, (0.5, [0.0]), 1.3, eps)
    h_hat, _ = shift_initial(duffing_sym, (0.5, [0.0]), 1.3, eps)
    assert h_hat != 0.5
    assert 0.0 <= pred.phase_fraction < 1.0
