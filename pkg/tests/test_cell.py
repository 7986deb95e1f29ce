import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tracerhom.cell import (AuxParams, AuxState, aux_step, corrector_chi, corrector_chi_batch,
                            corrector_theta, grad_chi_bel, grad_chi_variational, grad_chi_y,
                            grad_semigroup_variational, horizon, probe_report, propagate,
                            semigroup_estimate, semigroup_norm, write_probe_reports)
from tracerhom.field import ModeSet, reference_modes, sample_invariant
from tracerhom.galerkin import CellOperators, galerkin_solve, galerkin_theta
from tracerhom.profiles import Constant, LogisticRidge
from tracerhom.rng import RngStream

Y0 = np.zeros(2)


def single(alpha=1.0, sigma=1.0):
    a = Constant(alpha) if isinstance(alpha, float) else alpha
    return ModeSet([(1, 0)], (a,), (Constant(sigma),), 0.5, 0.25)


def two_modes():
    return ModeSet([(1, 0), (1, 1)], (Constant(1.0), Constant(0.8)),
                   (Constant(0.6), Constant(0.5)), 0.5, 0.25)


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@given(st.floats(1e-6, 0.5), st.floats(0.5, 2.0))
def test_horizon_invariants(tol, alpha):
    m = ModeSet([(1, 0), (0, 1)], (Constant(alpha), Constant(1.0)),
                (Constant(0.5), Constant(0.5)), 0.5, 0.25)
    T, tail = horizon(m, Y0, tol)
    assert T >= math.log(1 / tol) / m.gamma0 - 1e-12
    assert tail <= tol / 2 + 1e-15


def test_aux_step_validates_dt():
    m = reference_modes()
    s = AuxState(np.zeros(6), Y0)
    with pytest.raises(ValueError):
        aux_step(s, 0.05, m, RngStream(0))
    out = aux_step(s, 0.01, m, RngStream(0))
    assert out.amp.shape == (6,)


def test_aux_dynamics_preserve_invariant_law():
    m = two_modes()
    prm = AuxParams.at(m, Y0)
    x = sample_invariant(m, Y0, RngStream(1), size=20000)
    pr = propagate(prm, x, 200, 0.01, RngStream(2))
    assert np.allclose(pr.amp.std(axis=0), np.tile(prm.sigma, 2), rtol=0.03)


def test_single_mode_corrector_closed_form():
    m = single(1.3, 0.8)
    amp = np.array([0.4, -0.9])
    est = corrector_chi(2, amp, Y0, 1e-3, 4000, RngStream(3), m)
    assert abs(est.value - 0.9 / 1.3) <= 3 * (est.std_err + est.tail)
    both = corrector_chi(None, amp, Y0, 1e-3, 500, RngStream(3), m)
    assert both.value[0] == 0.0
    with pytest.raises(ValueError):
        corrector_chi(3, amp, Y0, 1e-3, 10, RngStream(3), m)
    with pytest.raises(ValueError):
        corrector_chi(1, amp, Y0, 0.0, 10, RngStream(3), m)


def test_corrector_has_zero_mean():
    m = reference_modes()
    amps = sample_invariant(m, Y0, RngStream(4), size=6000)
    vals = corrector_chi_batch(None, amps, Y0, 1e-3, RngStream(5), m)
    se = vals.std(axis=0, ddof=1) / math.sqrt(len(vals))
    assert np.all(np.abs(vals.mean(axis=0)) <= 3 * se)
    c = corrector_chi_batch(1, amps[:100], Y0, 1e-3, RngStream(5), m, center=True)
    assert abs(c.mean()) < 1e-12


def test_dynkin_identity_against_galerkin_corrector():
    # E[chi(X_t)] + E int_0^t w(X_s) ds = chi(x)
    m = reference_modes()
    chi = galerkin_solve(m, Y0, 7)
    amp = np.array([0.3, -0.2, 0.5, 0.1, -0.4, 0.6])
    prm = AuxParams.at(m, Y0)
    pr = propagate(prm, np.broadcast_to(amp, (20000, 6)), 100, 0.01, RngStream(6), chi=True)
    lhs = chi(pr.amp) + pr.chi
    se = lhs.std(axis=0, ddof=1) / math.sqrt(lhs.shape[0])
    assert np.all(np.abs(lhs.mean(axis=0) - chi(amp[None])[0]) <= 3 * se + 1e-2)


def test_corrector_matches_galerkin():
    m = reference_modes()
    chi = galerkin_solve(m, Y0, 7)
    amp = np.array([0.3, -0.2, 0.5, 0.1, -0.4, 0.6])
    est = corrector_chi(None, amp, Y0, 1e-3, 4000, RngStream(7), m)
    assert np.all(np.abs(est.value - chi(amp[None])[0]) <= 3 * est.std_err + 1e-2)


def test_variational_gradient_matches_galerkin():
    m = reference_modes()
    chi = galerkin_solve(m, Y0, 7)
    amp = np.array([0.3, -0.2, 0.5, 0.1, -0.4, 0.6])
    est = grad_chi_variational(None, amp, Y0, 2000, RngStream(8), m)
    ref = chi.gradient(amp)[0]
    assert np.all(np.abs(est.value - ref) <= 4 * est.std_err + 2e-2)
    assert est.n_dropped == 0


def test_bel_matches_linear_ou():
    # N = 1: P_t w_2 (amp) = -b exp(-alpha t), so its gradient is (0, -exp(-alpha t))
    m = single(1.0, 0.7)
    t = 1.0
    est = grad_chi_bel(2, np.array([0.3, -0.5]), Y0, t, 20000, RngStream(9), m)
    ref = np.array([0.0, -math.exp(-t)])
    assert np.all(np.abs(est.value - ref) <= 3 * est.std_err)
    var = grad_semigroup_variational(2, np.array([0.3, -0.5]), Y0, t, 200, RngStream(9), m)
    assert np.allclose(var.value, ref, atol=1e-10)
    with pytest.raises(ValueError):
        grad_chi_bel(2, np.zeros(2), Y0, 0.0, 10, RngStream(0), m)


def test_bel_and_variational_agree_with_rotation():
    m = two_modes()
    amp = np.array([0.3, -0.5, 0.4, 0.2])
    t = 0.5
    bel = grad_chi_bel(1, amp, Y0, t, 40000, RngStream(10), m)
    var = grad_semigroup_variational(1, amp, Y0, t, 4000, RngStream(11), m)
    assert np.all(np.abs(bel.value - var.value) <= 3 * np.hypot(bel.std_err, var.std_err) + 1e-3)


def test_semigroup_estimate_linear():
    m = single(1.0, 0.7)
    f = lambda x: x[:, 1]
    v, se = semigroup_estimate(f, np.array([0.0, 0.8]), Y0, 1.0, 20000, RngStream(12), m)
    assert abs(v - 0.8 * math.exp(-1.0)) <= 3 * se
    assert semigroup_estimate(f, np.array([0.0, 0.8]), Y0, 0.0, 10, RngStream(0), m) == (0.8, 0.0)
    with pytest.raises(ValueError):
        semigroup_estimate(f, np.zeros(2), Y0, -1.0, 10, RngStream(0), m)


def test_semigroup_norm_single_mode():
    # ||P_t w_2|| = sigma exp(-alpha t) for one mode
    m = single(1.0, 0.7)
    v, se = semigroup_norm(2, Y0, 1.0, 20000, RngStream(13), m)
    assert abs(v - 0.7 * math.exp(-1.0)) <= 3 * se + 1e-3


def test_grad_chi_y_single_mode():
    # chi_2 = -b / alpha(y), so d_y chi_2 = b alpha_y / alpha^2
    al = LogisticRidge(0.7, 1.5, (0.0, 1.5))
    m = single(al, 0.6)
    y = np.array([0.1, 0.2])
    amp = np.array([0.2, 0.5])
    est = grad_chi_y(2, amp, y, 1e-2, 1e-3, 400, RngStream(14), m)
    ref = 0.5 * al.grad(y) / al.value(y) ** 2
    assert np.all(np.abs(est.value - ref) <= 3 * est.std_err + 1e-4)
    with pytest.raises(ValueError):
        grad_chi_y(2, amp, y, 0.5, 1e-3, 10, RngStream(0), m)


def test_theta_matches_galerkin():
    m = two_modes()
    ops = CellOperators.build(m, Y0, 8)
    sig = ops.sigma
    K = np.zeros(ops.basis.size, dtype=complex)
    K[ops.basis.unit(0)] = sig[0]            # F = a_1
    K[ops.basis.unit(3)] = 1j * sig[1]       # G = b_2
    gal = galerkin_theta(ops, 0, K)
    amp = np.array([0.3, -0.4, 0.5, 0.2])
    ref = -ops.basis.evaluate(gal, ops.standardise(amp)[None])[0]
    est = corrector_theta(1, 1, lambda x: x[:, 0], lambda x: x[:, 3], amp, Y0, 1e-3, 4000,
                          RngStream(15), m)
    knorm = math.sqrt(sig[0] ** 2 + sig[1] ** 2)
    assert abs(est.psi - ref) <= 0.05 * knorm
    with pytest.raises(ValueError):
        corrector_theta(3, 1, None, None, amp, Y0, 1e-3, 10, RngStream(0), m)


def test_probe_reports_serialise(tmp_path):
    m = single()
    est = corrector_chi(2, np.array([0.0, 1.0]), Y0, 1e-2, 50, RngStream(0), m)
    rep = probe_report(est, probe=0)
    write_probe_reports(tmp_path / "p.json", [rep])
    back = json.loads((tmp_path / "p.json").read_text())
    assert back[0]["estimator"] == "feynman-kac" and back[0]["probe"] == 0
