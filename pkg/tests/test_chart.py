import numpy as np
import pytest
from scipy.integrate import solve_ivp

from seatkit import chart, errors
from seatkit.chart import AnglePoint
from seatkit.systems import PhasePoint, make_duffing_eight

from conftest import make_z_unused, make_zero_perturbation

# independent regression baseline: period at (h=0.1, w=0), recorded from a
# separate adaptive run (scipy DOP853, rtol 1e-13, event location)
T_REFERENCE_H01 = 9.925378693068520


def test_transversal_point_examples(duffing_sym):
    x = chart.transversal_point(duffing_sym, 0.02, [0.0])
    assert x.q == pytest.approx(0.0, abs=1e-14)
    assert x.p == pytest.approx(0.2, abs=1e-12)
    x = chart.transversal_point(duffing_sym, 0.5, [0.0])
    assert x.p == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(errors.NoIntersection):
        chart.transversal_point(duffing_sym, 5.0, [0.0])
    with pytest.raises(errors.NoIntersection):
        chart.transversal_point(duffing_sym, 0.0, [0.0])


def test_orbit_period_identity_and_reference(duffing_sym):
    orb = chart.orbit(duffing_sym, 0.1, [0.0])
    assert orb.T * orb.omega == pytest.approx(2 * np.pi, abs=1e-14)
    assert orb.T == pytest.approx(T_REFERENCE_H01, rel=1e-9)


def test_period_log_slope(duffing_sym):
    # outer orbit passes the saddle twice per period: T ~ (2/lam) ln(1/h)
    hs = np.geomspace(1e-5, 1e-2, 7)
    chart.build_orbits(duffing_sym, hs, [0.0])
    Ts = [chart.orbit(duffing_sym, h, [0.0]).T for h in hs]
    slope = np.polyfit(np.log(1.0 / hs), Ts, 1)[0]
    assert slope == pytest.approx(2.0, rel=0.02)


def test_energy_conservation(duffing_asym):
    for h in (1e-4, 0.01, 0.3):
        orb = chart.orbit(duffing_asym, h, [0.1])
        assert orb.energy_drift < 1e-9 * max(1.0, h)
        assert orb.period_defect < 1e-9


def test_angle_round_trip(duffing_asym):
    rng = np.random.default_rng(5)
    for _ in range(8):
        h = rng.uniform(0.01, 0.5)
        phi = rng.uniform(0, 2 * np.pi)
        a = AnglePoint(h=h, w=[0.1], phi=phi)
        x = chart.from_angle(duffing_asym, a)
        a2 = chart.to_angle(duffing_asym, x)
        dphi = min(abs(a2.phi - phi), 2 * np.pi - abs(a2.phi - phi))
        assert dphi < 1e-8
        assert a2.h == pytest.approx(h, rel=1e-8)


def test_angle_zero_at_transversal(duffing_sym):
    x = chart.transversal_point(duffing_sym, 0.2, [0.0])
    a = chart.to_angle(duffing_sym, x)
    assert min(a.phi, 2 * np.pi - a.phi) < 1e-10


def test_angle_half_period(duffing_sym):
    """Event-located half-period point has phi = pi (symmetric system)."""
    h = 0.15
    x0 = chart.transversal_point(duffing_sym, h, [0.0])

    def ev(t, y):
        return y[0]
    ev.terminal = True
    ev.direction = -1.0  # crossing q = 0 with p < 0: the opposite ray

    def rhs(t, y):
        q, p = y
        return [p, q - q**3]

    s1 = solve_ivp(rhs, (0, 0.5), [x0.q, x0.p], rtol=1e-12, atol=1e-14,
                   method="DOP853")
    s2 = solve_ivp(rhs, (0.5, 100.0), s1.y[:, -1], rtol=1e-12, atol=1e-14,
                   method="DOP853", events=ev, dense_output=True)
    t_half = s2.t_events[0][0]
    y_half = s2.sol(t_half)
    a = chart.to_angle(duffing_sym, PhasePoint(p=y_half[1], q=y_half[0],
                                               z=np.zeros(1)))
    assert a.phi == pytest.approx(np.pi, abs=1e-8)


def test_from_angle_wrap_and_interp_energy(duffing_sym):
    a = AnglePoint(h=0.1, w=[0.0], phi=2 * np.pi - 1e-9)
    x = chart.from_angle(duffing_sym, a)
    x0 = chart.transversal_point(duffing_sym, 0.1, [0.0])
    assert np.hypot(x.q - x0.q, x.p - x0.p) < 1e-6
    rng = np.random.default_rng(1)
    orb = chart.orbit(duffing_sym, 0.1, [0.0])
    ts = rng.uniform(0, orb.T, 40)
    qs, ps = orb.state_at(ts)
    H = duffing_sym.hamiltonian(ps, qs, np.zeros((1, 1)))
    assert np.max(np.abs(H - 0.1)) < 1e-8


def test_f_components_zero_field():
    sys_ = make_zero_perturbation()
    orb = chart.orbit(sys_, 0.1, [0.0])
    fh, fw, fphi = chart.f_components_grid(sys_, orb, 0.0)
    assert np.all(fh == 0) and np.all(fw == 0) and np.all(fphi == 0)


def test_f_h_along_orbit(duffing_sym):
    orb = chart.orbit(duffing_sym, 0.2, [0.0])
    fh, _, _ = chart.f_components_grid(duffing_sym, orb, 0.0)
    assert np.allclose(fh, -orb.p**2, atol=1e-13)


def test_f_phi_matches_fd_gradient(duffing_asym):
    """Adjoint-transport f_phi against finite differences of the angle map."""
    sys_ = duffing_asym
    h, w = 0.1, np.array([0.1])
    orb = chart.orbit(sys_, h, w)
    _, _, fphi = chart.f_components_grid(sys_, orb, 0.0)
    for j in (37, 201, 388):
        q0, p0 = orb.q[j], orb.p[j]
        fq, fp, fz = sys_.perturbation(p0, q0, w, 0.0)
        fz = float(np.asarray(fz).reshape(-1)[0])
        d = 1e-6

        def phi_of(qq, pp, zz):
            a = chart.to_angle(sys_, PhasePoint(p=pp, q=qq, z=[zz]))
            return a.phi, a.h

        phi_p, h_p = phi_of(q0 + d * fq, p0 + d * fp, w[0] + d * fz)
        phi_m, h_m = phi_of(q0 - d * fq, p0 - d * fp, w[0] - d * fz)
        diff = (phi_p - phi_m + np.pi) % (2 * np.pi) - np.pi
        fd = diff / (2 * d)
        assert fphi[j] == pytest.approx(fd, abs=5e-6)


def test_f_phi_periodic_wrap(duffing_asym):
    """The grad-T cancellation makes f_phi smooth across phi = 0."""
    orb = chart.orbit(duffing_asym, 0.05, [0.1])
    _, _, fphi = chart.f_components_grid(duffing_asym, orb, 0.0)
    gaps = np.abs(np.diff(np.concatenate([fphi, fphi[:1]])))
    assert gaps[-1] < 5 * np.median(gaps) + 1e-9


def test_chart_partials_identity(duffing_asym):
    for h in (0.5, 0.1, 0.02):
        orb = chart.orbit(duffing_asym, h, [0.1])
        cp = chart.chart_partials(duffing_asym, h, [0.1])
        resid = cp.dT_dh * orb.omega + orb.T * cp.dom_dh
        assert abs(resid) < 1e-4 * abs(cp.dT_dh * orb.omega)
        # monodromy route agrees with finite differences
        assert cp.dT_dh == pytest.approx(orb.T_h, rel=1e-6)


def test_domega_dh_positive_small_h(duffing_sym):
    cp = chart.chart_partials(duffing_sym, 0.01, [0.0])
    assert cp.dom_dh > 0


def test_domega_dw_zero_for_unused_z():
    sys_ = make_z_unused()
    cp = chart.chart_partials(sys_, 0.1, [0.3])
    assert abs(cp.dom_dw[0]) < 1e-10
    assert abs(cp.dT_dw[0]) < 1e-9


def test_step_underflow():
    sys_ = make_duffing_eight(0.0, 1.0, 0.0)
    with pytest.raises(errors.StepUnderflow):
        chart.chart_partials(sys_, 1.0000001e-6, [0.0])


def test_outside_chart(duffing_sym):
    with pytest.raises(errors.OutsideChart):
        chart.to_angle(duffing_sym, PhasePoint(p=0.0, q=0.01, z=np.zeros(1)))
    with pytest.raises(errors.OutsideChart):
        chart.orbit(duffing_sym, 3.0, [0.0])


def test_orbit_cache_threadsafe(duffing_sym):
    from concurrent.futures import ThreadPoolExecutor
    hs = np.geomspace(0.01, 0.4, 12)

    def work(h):
        return chart.orbit(duffing_sym, h, [0.0]).T

    with ThreadPoolExecutor(max_workers=6) as ex:
        out1 = list(ex.map(work, hs))
    out2 = [chart.orbit(duffing_sym, h, [0.0]).T for h in hs]
    assert out1 == out2
