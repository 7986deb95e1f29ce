import numpy as np
import pytest
from hypothesis import given, strategies as st

from tracerhom.field import ModeSet, reference_modes
from tracerhom.galerkin import (CellOperators, HermiteBasis, galerkin_diffusivity,
                                galerkin_effective, galerkin_solve, galerkin_theta,
                                gauss_hermite_expectation)
from tracerhom.profiles import Constant, LogisticRidge


def two_modes():
    return ModeSet([(1, 0), (1, 1)], (Constant(1.0), Constant(0.7)),
                   (Constant(0.5), Constant(0.6)), 0.5, 0.25)


def single(alpha=1.0, sigma=1.0):
    return ModeSet([(1, 0)], (alpha if not isinstance(alpha, float) else Constant(alpha),),
                   (sigma if not isinstance(sigma, float) else Constant(sigma),), 0.5, 0.25)


@pytest.fixture(scope="module")
def ops8():
    return CellOperators.build(two_modes(), np.zeros(2), 8)


def test_basis_size_and_units():
    b = HermiteBasis(3, 4)
    assert b.size == 35
    assert b.multi[b.unit(2)].tolist() == [0, 0, 1]


def test_basis_evaluation_orthonormal():
    b = HermiteBasis(2, 3)
    x, w = np.polynomial.hermite_e.hermegauss(6)
    w = w / w.sum()
    u = np.array([[p, q] for p in x for q in x])
    wt = np.array([p * q for p in w for q in w])
    phi = b.evaluate(np.eye(b.size), u)
    gram = phi.T @ (wt[:, None] * phi)
    assert np.allclose(gram, np.eye(b.size), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_generator_annihilates_constants_in_mean(ops8, seed):
    c = np.random.default_rng(seed).normal(size=ops8.basis.size)
    assert abs((ops8.generator @ c)[0]) < 1e-10


@given(st.integers(0, 2**32 - 1))
def test_transport_is_skew(ops8, seed):
    c = np.random.default_rng(seed).normal(size=ops8.basis.size)
    assert abs(c @ (ops8.transport @ c)) < 1e-10 * (1 + c @ c)


def test_spectral_gap_of_symmetric_part(ops8):
    L = ops8.generator.toarray()[1:, 1:]
    sym = -0.5 * (L + L.T)
    assert np.linalg.eigvalsh(sym).min() >= ops8.modes.gamma0 - 0.05


def test_single_mode_closed_form():
    m = single(1.3, 0.8)
    chi = galerkin_solve(m, np.zeros(2), 4)
    amp = np.array([[0.4, -0.7], [1.1, 0.3]])
    vals = chi(amp)
    assert np.allclose(vals[:, 0], 0.0, atol=1e-12)
    assert np.allclose(vals[:, 1], -amp[:, 1] / 1.3, atol=1e-12)
    A = galerkin_diffusivity(chi)
    assert np.allclose(A, [[0, 0], [0, 2 * 0.8**2 / 1.3]], atol=1e-12)


def test_q_selection_and_residual():
    m = reference_modes()
    chi = galerkin_solve(m, np.zeros(2), 4)
    chi2 = galerkin_solve(m, np.zeros(2), 4, q=2)
    assert np.allclose(chi2.coef[:, 0], 0.0)
    assert np.allclose(chi2.coef[:, 1], chi.coef[:, 1])
    assert np.all(chi.residual < 1.0)


def test_reference_diffusivity_converges_in_degree():
    m = reference_modes()
    A = [galerkin_diffusivity(galerkin_solve(m, np.zeros(2), d)) for d in (5, 7)]
    assert np.allclose(A[0], A[1], rtol=2e-2, atol=2e-3)
    assert np.allclose(A[1], A[1].T)
    assert np.linalg.eigvalsh(A[1]).min() > 0


def test_theta_solves_damped_system(ops8):
    K = np.zeros(ops8.basis.size, dtype=complex)
    K[ops8.basis.unit(0)] = 1.0
    K[ops8.basis.unit(3)] = 0.5j
    psi = galerkin_theta(ops8, 0, K)
    M = ops8.generator.toarray() - ops8.alpha[0] * np.eye(ops8.basis.size) + 1j * ops8.frame[0].toarray()
    assert np.allclose(M @ psi, K, atol=1e-10)


def test_single_mode_drift_closed_form():
    # B = kperp (kperp . grad)(sigma^2 / alpha) for one mode
    al = LogisticRidge(0.7, 1.5, (0.0, 1.5))
    sg = LogisticRidge(0.6, 0.9, (0.3, 1.0), 0.2)
    m = single(al, sg)
    y = np.array([0.2, -0.1])
    g = galerkin_effective(m, y, 6)
    h = 1e-5
    f = lambda z: sg.value(z) ** 2 / al.value(z)
    d2 = (f(y + [0, h]) - f(y - [0, h])) / (2 * h)
    assert np.allclose(g.B, [0.0, d2], atol=1e-6)


def test_gauss_hermite_moments():
    std = np.array([0.5, 2.0])
    assert gauss_hermite_expectation(lambda u: u[:, 1] ** 2, std, 3) == pytest.approx(4.0)
    assert gauss_hermite_expectation(lambda u: u[:, 0] ** 4, std, 3) == pytest.approx(3 * 0.5**4)
