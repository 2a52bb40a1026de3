import numpy as np
import pytest

from seatkit import errors
from seatkit.systems import (PhasePoint, SystemDef, f_h, f_h_qp, find_saddle,
                             make_duffing_eight)
from seatkit.separatrix import compute_theta

from conftest import make_zero_perturbation


def test_symmetric_thetas_equal(duffing_sym):
    th1, th2, th3 = compute_theta(duffing_sym, [0.0])
    assert abs(th1 - th2) < 1e-9
    assert th3 == th1 + th2


def test_hamiltonian_mirror_symmetry(duffing_sym):
    # q -> -q leaves H and f_h invariant at z = 0
    rng = np.random.default_rng(3)
    for _ in range(20):
        q, p = rng.uniform(-1.5, 1.5, 2)
        z = np.array([0.0])
        assert duffing_sym.hamiltonian(p, q, z) == pytest.approx(
            duffing_sym.hamiltonian(p, -q, z), abs=1e-14)
        assert f_h_qp(duffing_sym, p, q, z) == pytest.approx(
            f_h_qp(duffing_sym, p, -q, z), abs=1e-14)


def test_zero_perturbation_rejected_downstream():
    sys_ = make_zero_perturbation()
    with pytest.raises(errors.NonPositiveTheta):
        compute_theta(sys_, [0.0])


def test_gamma_negative_rejected():
    with pytest.raises(ValueError):
        make_duffing_eight(0.0, -1.0, 0.0)


def test_find_saddle_location_and_lambda(duffing_sym, duffing_asym):
    sad = find_saddle(duffing_sym, [0.0])
    assert abs(sad.p) < 1e-12 and abs(sad.q) < 1e-12
    # lambda = sqrt(-V''(0)) = 1; verify against a numeric Hessian
    d = 1e-6
    vpp = (duffing_sym.hamiltonian(0.0, d, np.zeros(1))
           + duffing_sym.hamiltonian(0.0, -d, np.zeros(1))) / d**2
    assert sad.lam == pytest.approx(np.sqrt(-vpp), rel=1e-6)
    assert sad.lam == pytest.approx(1.0, abs=1e-10)

    sad2 = find_saddle(duffing_asym, [0.1])
    assert abs(sad2.p) < 1e-12 and abs(sad2.q) < 1e-12


def test_find_saddle_idempotent(duffing_asym):
    sad = find_saddle(duffing_asym, [0.1])
    moved = SystemDef(**{**duffing_asym.__dict__,
                         "saddle_guess": (sad.p, sad.q)})
    sad2 = find_saddle(moved, [0.1])
    assert np.hypot(sad2.p - sad.p, sad2.q - sad.q) < 1e-12


def test_find_saddle_degenerate():
    def hamiltonian(p, q, z):
        return 0.5 * p * p + 0.5 * q * q

    def grad_H(p, q, z):
        return p, q, np.stack([np.zeros_like(q + z[0])])

    sys_ = SystemDef(name="minimum", params=(), param_dim=1,
                     hamiltonian=hamiltonian, grad_H=grad_H,
                     perturbation=lambda p, q, z, e: (0.0, 0.0, np.zeros(1)),
                     saddle_guess=(0.0, 0.0))
    with pytest.raises(errors.DegenerateSaddle):
        find_saddle(sys_, [0.0])


def test_saddle_geometry(duffing_sym):
    sad = find_saddle(duffing_sym, [0.0])
    # eigen-directions of the figure eight: (1, 1) and (1, -1) in (q, p)
    assert abs(abs(sad.unstable_dir @ np.array([1, 1]) / np.sqrt(2)) - 1) < 1e-12
    assert abs(abs(sad.stable_dir @ np.array([1, -1]) / np.sqrt(2)) - 1) < 1e-12
    # outer bisector is the +p ray and bisects the eigendirections
    assert np.allclose(sad.bisector_outer, [0.0, 1.0], atol=1e-12)
    c1 = abs(sad.bisector_outer @ sad.unstable_dir)
    c2 = abs(sad.bisector_outer @ sad.stable_dir)
    assert abs(c1 - c2) < 1e-12
    assert abs(np.linalg.norm(sad.bisector_outer) - 1) < 1e-14


def test_f_h_examples(duffing_sym):
    rng = np.random.default_rng(0)
    for _ in range(10):
        q, p = rng.uniform(-1.5, 1.5, 2)
        x = PhasePoint(p=p, q=q, z=np.zeros(1))
        assert f_h(duffing_sym, x) == pytest.approx(-p * p, abs=1e-14)
    assert f_h(duffing_sym, PhasePoint(p=0.0, q=0.0, z=np.zeros(1))) == 0.0

    sys_nu = make_duffing_eight(0.0, 1.0, 0.5)
    val = f_h(sys_nu, PhasePoint(p=0.0, q=1.0, z=np.zeros(1)))
    assert val == pytest.approx(0.5, abs=1e-14)


def test_f_h_definition_consistency(duffing_asym):
    # f_h agrees with grad_H . perturbation composed by hand, and with a
    # finite-difference directional derivative of H along f
    sys_ = make_duffing_eight(0.1, 1.0, 0.7)
    rng = np.random.default_rng(7)
    worst_exact = 0.0
    worst_fd = 0.0
    for _ in range(100):
        q, p = rng.uniform(-1.4, 1.4, 2)
        z = np.array([rng.uniform(-0.1, 0.2)])
        fq, fp, fz = sys_.perturbation(p, q, z, 0.0)
        hp, hq, hz = sys_.grad_H(p, q, z)
        composed = fq * hq + fp * hp + float(np.asarray(fz) @ np.asarray(hz))
        val = f_h_qp(sys_, p, q, z, 0.0)
        worst_exact = max(worst_exact, abs(composed - val))
        d = 1e-6
        plus = sys_.hamiltonian(p + d * fp, q + d * fq, z + d * np.asarray(fz))
        minus = sys_.hamiltonian(p - d * fp, q - d * fq, z - d * np.asarray(fz))
        worst_fd = max(worst_fd, abs((plus - minus) / (2 * d) - val))
    assert worst_exact < 1e-10
    assert worst_fd < 1e-9


def test_saddle_energy_normalized_on_z_grid(duffing_sym):
    for z in np.linspace(-0.2, 0.2, 20):
        sad = find_saddle(duffing_sym, [z])
        assert abs(duffing_sym.hamiltonian(sad.p, sad.q, np.array([z]))) < 1e-12


def test_fd_fallbacks_match_analytic(duffing_asym):
    """The generic finite-difference paths agree with analytic callables."""
    s = duffing_asym
    bare = SystemDef(name="bare", params=s.params, param_dim=1,
                     hamiltonian=s.hamiltonian, grad_H=s.grad_H,
                     perturbation=s.perturbation,
                     saddle_guess=(0.0, 0.0), default_z=s.default_z)
    q, p, z = 0.7, -0.4, np.array([0.1])
    J_fd = bare.grad_H_jac_eval(p, q, z)
    J_an = s.grad_H_jac_eval(p, q, z)
    assert np.max(np.abs(J_fd - J_an)) < 1e-9
    d_fd = bare.perturbation_div_eval(p, q, z, 0.0)
    d_an = s.perturbation_div_eval(p, q, z, 0.0)
    assert abs(d_fd - d_an) < 1e-9
    f1_fd = bare.perturbation_deps_eval(p, q, z)
    assert abs(f1_fd[1]) < 1e-10  # eps-independent field
