import numpy as np
import pytest
from scipy.integrate import quad

from seatkit import errors
from seatkit.averaging import fbar1
from seatkit.chart import orbit
from seatkit.separatrix import (compute_theta, separatrix_set,
                                theta_limit_check, trace_loops)
from seatkit.systems import make_duffing_eight

from conftest import make_zero_perturbation


def loop_area_oracle(z, side):
    """Loop area by quadrature of p(q) on H = 0: an independent oracle."""
    def p2(q):
        return q * q - 2 * z * q**3 - 0.5 * q**4

    # turning point: positive root of 1 - 2 z q - q^2/2 = 0 on the side
    roots = np.roots([-0.5, -2 * z, 1.0])
    q_turn = max(roots) if side == 2 else min(roots)
    val = quad(lambda q: np.sqrt(max(p2(q), 0.0)), 0.0, q_turn, limit=200,
               epsabs=1e-13, epsrel=1e-13)[0]
    return 2 * abs(val)


def test_theta_symmetric_ground_truth():
    for gamma in (1.0, 2.0):
        sys_ = make_duffing_eight(0.0, gamma, 0.0)
        th1, th2, th3 = compute_theta(sys_, [0.0])
        assert th1 == pytest.approx(4.0 / 3.0 * gamma, abs=1e-6)
        assert th2 == pytest.approx(4.0 / 3.0 * gamma, abs=1e-6)
        assert th3 == th1 + th2


def test_theta_asymmetric_vs_area_oracle(duffing_asym):
    th1, th2, th3 = compute_theta(duffing_asym, [0.1])
    # gamma = 1: Theta_i = loop area; l2 is the q > 0 loop
    assert th2 == pytest.approx(loop_area_oracle(0.1, 2), rel=1e-8)
    assert th1 == pytest.approx(loop_area_oracle(0.1, 1), rel=1e-8)
    assert th1 > th2  # left loop is larger for z > 0


def test_zero_field_raises():
    with pytest.raises(errors.NonPositiveTheta):
        compute_theta(make_zero_perturbation(), [0.0])


def test_loops_turning_points(duffing_sym):
    ss = separatrix_set(duffing_sym, [0.0])
    for loop, sign in ((ss.loop2, 1), (ss.loop1, -1)):
        j = int(np.argmax(np.abs(loop.q)))
        sl = slice(max(j - 3, 0), j + 4)
        c = np.polyfit(loop.t[sl], loop.q[sl], 4)
        tv = np.roots(np.polyder(c))
        tv = tv[np.isreal(tv)].real
        tv = tv[np.argmin(np.abs(tv - loop.t[j]))]
        q_turn = np.polyval(c, tv)
        assert q_turn == pytest.approx(sign * np.sqrt(2), abs=1e-6)


def test_loops_on_level_set(duffing_asym):
    ss = separatrix_set(duffing_asym, [0.1])
    for loop in (ss.loop1, ss.loop2):
        H = duffing_asym.hamiltonian(loop.p, loop.q, np.array([[0.1]]))
        assert np.max(np.abs(H)) < 1e-9


def test_symmetric_loop_areas_equal(duffing_sym):
    ss = separatrix_set(duffing_sym, [0.0])

    def shoelace(loop):
        return 0.5 * abs(np.sum(loop.q * np.roll(loop.p, -1)
                                - np.roll(loop.q, -1) * loop.p))

    assert abs(shoelace(ss.loop1) - shoelace(ss.loop2)) < 1e-8
    assert abs(ss.theta1 - ss.theta2) < 1e-9


def test_delta_sad_robustness(duffing_asym):
    vals = []
    for ds in (1e-6, 1e-7, 1e-8):
        ss = trace_loops(duffing_asym, [0.1], delta_sad=ds)
        vals.append((ss.theta1, ss.theta2))
    base = vals[1]
    for v in vals:
        assert abs(v[0] - base[0]) / base[0] < 1e-7
        assert abs(v[1] - base[1]) / base[1] < 1e-7


def test_theta_sign_flip_under_mirror(duffing_asym):
    th1, th2, _ = compute_theta(duffing_asym, [0.1])
    m1, m2, _ = compute_theta(duffing_asym, [-0.1])
    # q -> -q exchanges the loops: Theta_1(-z) = Theta_2(z)
    assert m1 == pytest.approx(th2, rel=1e-9)
    assert m2 == pytest.approx(th1, rel=1e-9)
    assert np.sign(th1 - th2) == -np.sign(m1 - m2)


def test_theta_limit_check(duffing_sym):
    rep = theta_limit_check(duffing_sym, [0.0])
    assert rep["passed"]
    devs = [r["deviation"] for r in rep["rows"]]
    assert all(devs[i + 1] < devs[i] for i in range(len(devs) - 1))
    # dissipative field: deviation / (h ln 1/h) bounded along the grid
    assert rep["max_ratio"] < 10.0
    # first entry equals T(0.1) <-f_h> computed independently
    orb = orbit(duffing_sym, 0.1, [0.0])
    two_ways = -orb.T * fbar1(duffing_sym, "h", 0.1, [0.0])
    assert rep["rows"][0]["value"] == pytest.approx(two_ways, abs=1e-10)


def test_tail_estimate_reported(duffing_sym):
    ss = separatrix_set(duffing_sym, [0.0])
    assert 0 <= ss.tail_estimate < 1e-10
    assert ss.loop1.closest_approach < 1e-5
