"""Shared fixtures: built-in systems plus code-level plugin systems that
exercise the generic (finite-difference) fallbacks and nonzero
second-order means, which the built-in damping family lacks."""

import numpy as np
import pytest

from seatkit.systems import SystemDef, make_duffing_eight


def circ(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


@pytest.fixture(scope="session")
def duffing_sym():
    return make_duffing_eight(0.0, 1.0, 0.0)


@pytest.fixture(scope="session")
def duffing_asym():
    return make_duffing_eight(0.1, 1.0, 0.0)


@pytest.fixture(scope="session")
def duffing_drift():
    return make_duffing_eight(0.1, 1.0, 0.5)


def _duffing_pieces():
    def hamiltonian(p, q, z):
        return 0.5 * p * p - 0.5 * q * q + z[0] * q**3 + 0.25 * q**4

    def grad_H(p, q, z):
        return p, -q + 3 * z[0] * q * q + q**3, np.stack(
            [q**3 + np.zeros_like(z[0])])

    def grad_H_jac(p, q, z):
        shp = np.shape(np.asarray(p) + np.asarray(q) + z[0])
        J = np.zeros((2, 3) + shp)
        J[0, 1] = 1.0
        J[1, 0] = -1.0 + 6 * z[0] * q + 3 * q * q
        J[1, 2] = 3 * q * q
        return J

    return hamiltonian, grad_H, grad_H_jac


def make_cubic_damping(gamma=1.0, gamma3=0.4, force=0.3, z0=0.1):
    """Duffing-eight Hamiltonian, damping -gamma p - gamma3 p^3 + force.

    Div f = -gamma - 3 gamma3 p^2 is non-constant AND the constant force
    breaks the p-parity of f_h, so fbar_{h,2} is genuinely nonzero.
    (With pure odd-in-p damping all second-order means vanish by the
    orbit's time-reversal symmetry.)
    """
    hamiltonian, grad_H, grad_H_jac = _duffing_pieces()

    def perturbation(p, q, z, eps):
        zero = np.zeros_like(np.asarray(p, float))
        return zero, -gamma * p - gamma3 * p**3 + force + zero, \
            np.stack([zero])

    def perturbation_div(p, q, z, eps):
        return -gamma - 3 * gamma3 * p * p

    return SystemDef(
        name="cubic_damping", params=(z0, gamma, gamma3, force), param_dim=1,
        hamiltonian=hamiltonian, grad_H=grad_H, grad_H_jac=grad_H_jac,
        perturbation=perturbation, perturbation_div=perturbation_div,
        saddle_guess=(0.0, 0.0), has_param_drift=False, h_max=2.0,
        default_z=np.array([z0]))


def make_eps_field(gamma=1.0, c=0.3, z0=0.0):
    """f = (0, -gamma p + eps c, 0): linear eps-dependence, f1 = (0, c, 0)."""
    hamiltonian, grad_H, grad_H_jac = _duffing_pieces()

    def perturbation(p, q, z, eps):
        zero = np.zeros_like(np.asarray(p, float))
        return zero, -gamma * p + eps * c + zero, np.stack([zero])

    def perturbation_div(p, q, z, eps):
        return -gamma + np.zeros_like(np.asarray(p, float))

    return SystemDef(
        name="eps_field", params=(z0, gamma, c), param_dim=1,
        hamiltonian=hamiltonian, grad_H=grad_H, grad_H_jac=grad_H_jac,
        perturbation=perturbation, perturbation_div=perturbation_div,
        saddle_guess=(0.0, 0.0), has_param_drift=False, h_max=2.0,
        default_z=np.array([z0]))


def make_q_drift(gamma=1.0, nu=0.4, force=0.3, z0=0.05):
    """f_z = nu q: a parameter drift that varies along the orbit, giving
    nonzero u_{w,1} and second-order w-means; the constant force breaks
    the parities that would otherwise zero them.  FD fallbacks exercised
    (no analytic div or eps-slope supplied)."""
    hamiltonian, grad_H, grad_H_jac = _duffing_pieces()

    def perturbation(p, q, z, eps):
        zero = np.zeros_like(np.asarray(p, float))
        return zero, -gamma * p + force + zero, np.stack([nu * q + zero])

    return SystemDef(
        name="q_drift", params=(z0, gamma, nu, force), param_dim=1,
        hamiltonian=hamiltonian, grad_H=grad_H, grad_H_jac=grad_H_jac,
        perturbation=perturbation, saddle_guess=(0.0, 0.0),
        has_param_drift=True, h_max=2.0, default_z=np.array([z0]))


def make_z_unused(gamma=1.0):
    """H independent of z (k = 1): d omega / d w must vanish."""

    def hamiltonian(p, q, z):
        return 0.5 * p * p - 0.5 * q * q + 0.25 * q**4 + 0.0 * z[0]

    def grad_H(p, q, z):
        return p, -q + q**3, np.stack([np.zeros_like(q + z[0])])

    def grad_H_jac(p, q, z):
        shp = np.shape(np.asarray(p) + np.asarray(q) + z[0])
        J = np.zeros((2, 3) + shp)
        J[0, 1] = 1.0
        J[1, 0] = -1.0 + 3 * q * q
        return J

    def perturbation(p, q, z, eps):
        zero = np.zeros_like(np.asarray(p, float))
        return zero, -gamma * p, np.stack([zero])

    def perturbation_div(p, q, z, eps):
        return -gamma + np.zeros_like(np.asarray(p, float))

    return SystemDef(
        name="z_unused", params=(gamma,), param_dim=1,
        hamiltonian=hamiltonian, grad_H=grad_H, grad_H_jac=grad_H_jac,
        perturbation=perturbation, perturbation_div=perturbation_div,
        saddle_guess=(0.0, 0.0), has_param_drift=False, h_max=2.0)


def make_zero_perturbation():
    """gamma = nu = 0: f identically zero."""
    return make_duffing_eight(0.0, 0.0, 0.0)


@pytest.fixture(scope="session")
def cubic_damping():
    return make_cubic_damping()


@pytest.fixture(scope="session")
def q_drift():
    return make_q_drift()
