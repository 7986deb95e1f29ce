"""Tensor-Hermite Galerkin discretisation of the cell generator.

Functions on R^{2N} are expanded in products of normalised probabilists'
Hermite polynomials ``h_n(x / sigma) = He_n(x / sigma) / sqrt(n!)``, which are
orthonormal under the invariant Gaussian measure at ``y``.  In this basis the
OU part of the generator is diagonal, the rotations ``R_i`` preserve degree
and multiplication by the frame velocity couples degrees ``d`` and ``d +- 1``.
Truncation keeps total degree ``<= D``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import hermite_e

from .field import ModeSet


class HermiteBasis:
    """Multi-indices of total degree ``<= D`` in ``nvar`` variables."""

    def __init__(self, nvar: int, degree: int):
        self.nvar = nvar
        self.degree = degree
        idx = [m for d in range(degree + 1) for m in _compositions(d, nvar)]
        self.multi = np.array(idx, dtype=np.int64).reshape(-1, nvar)
        self.lookup = {tuple(m): i for i, m in enumerate(idx)}
        self.size = len(idx)
        self._ops: dict = {}

    def unit(self, var: int) -> int:
        m = [0] * self.nvar
        m[var] = 1
        return self.lookup[tuple(m)]

    def mult(self, var: int) -> sp.csr_matrix:
        """Multiplication by ``u_var`` projected back onto the basis."""
        key = ("mult", var)
        if key not in self._ops:
            rows, cols, vals = [], [], []
            for j, m in enumerate(self.multi):
                n = m[var]
                up = m.copy()
                up[var] += 1
                i = self.lookup.get(tuple(up))
                if i is not None:
                    rows.append(i), cols.append(j), vals.append(math.sqrt(n + 1))
                if n > 0:
                    dn = m.copy()
                    dn[var] -= 1
                    rows.append(self.lookup[tuple(dn)]), cols.append(j), vals.append(math.sqrt(n))
            self._ops[key] = sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))
        return self._ops[key]

    def deriv(self, var: int) -> sp.csr_matrix:
        """Differentiation in ``u_var``."""
        key = ("deriv", var)
        if key not in self._ops:
            rows, cols, vals = [], [], []
            for j, m in enumerate(self.multi):
                n = m[var]
                if n > 0:
                    dn = m.copy()
                    dn[var] -= 1
                    rows.append(self.lookup[tuple(dn)]), cols.append(j), vals.append(math.sqrt(n))
            self._ops[key] = sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))
        return self._ops[key]

    def evaluate(self, coef, u) -> np.ndarray:
        """Evaluate expansions at standardised points ``u`` of shape (P, nvar).

        ``coef`` may carry trailing dimensions: shape (size,) or (size, K).
        """
        u = np.atleast_2d(np.asarray(u, dtype=float))
        tables = [_hermite_table(u[:, v], self.degree) for v in range(self.nvar)]
        coef = np.asarray(coef)
        out = np.zeros((u.shape[0],) + coef.shape[1:], dtype=coef.dtype)
        for j, m in enumerate(self.multi):
            phi = np.ones(u.shape[0])
            for v in range(self.nvar):
                if m[v]:
                    phi = phi * tables[v][m[v]]
            out += np.multiply.outer(phi, coef[j])
        return out


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _hermite_table(u, degree):
    """Rows ``h_n(u)`` for n = 0..degree (normalised He_n)."""
    tab = np.empty((degree + 1,) + u.shape)
    tab[0] = 1.0
    if degree >= 1:
        tab[1] = u
    for n in range(1, degree):
        tab[n + 1] = (u * tab[n] - math.sqrt(n) * tab[n - 1]) / math.sqrt(n + 1)
    return tab


@dataclass
class CellOperators:
    """Galerkin matrices of the cell generator at a fixed slow point ``y``."""

    modes: ModeSet
    y: np.ndarray
    basis: HermiteBasis
    alpha: np.ndarray
    sigma: np.ndarray
    ou: sp.csr_matrix = field(init=False)
    rot: list = field(init=False)
    frame: list = field(init=False)
    transport: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        n, B = self.modes.N, self.basis
        rates = np.concatenate([self.alpha, self.alpha])
        self.ou = sp.diags(-(B.multi @ rates).astype(float)).tocsr()
        # R_i = b_i d/da_i - a_i d/db_i; the sigma factors cancel in u-variables
        self.rot = [(B.mult(n + i) @ B.deriv(i) - B.mult(i) @ B.deriv(n + i)).tocsr()
                    for i in range(n)]
        # multiplication by k_i . w = sum_j delta(k_i, k_j) sigma_j u_{b_j}
        self.frame = []
        for i in range(n):
            m = sp.csr_matrix((B.size, B.size))
            for j in range(n):
                if self.modes.delta[i, j] != 0.0:
                    m = m + self.modes.delta[i, j] * self.sigma[j] * B.mult(n + j)
            self.frame.append(m.tocsr())
        t = sp.csr_matrix((B.size, B.size))
        for i in range(n):
            t = t + self.frame[i] @ self.rot[i]
        self.transport = t.tocsr()

    @classmethod
    def build(cls, modes: ModeSet, y, degree: int, basis: HermiteBasis | None = None):
        y = np.asarray(y, dtype=float)
        if basis is None:
            basis = HermiteBasis(2 * modes.N, degree)
        return cls(modes, y, basis, modes.alpha_at(y), modes.sigma_at(y))

    @property
    def generator(self) -> sp.csr_matrix:
        return (self.ou + self.transport).tocsr()

    def w_coef(self, q: int) -> np.ndarray:
        """Expansion of the frame-velocity component ``w_q``."""
        n, B = self.modes.N, self.basis
        c = np.zeros(B.size)
        kp = self.modes.kperp
        for i in range(n):
            c[B.unit(n + i)] += kp[i, q] * self.sigma[i]
        return c

    def d_amp(self, var: int) -> sp.csr_matrix:
        """Derivative in the amplitude coordinate ``var`` (not the standardised one)."""
        n = self.modes.N
        return self.basis.deriv(var) / self.sigma[var % n]

    def times_w(self, j: int) -> sp.csr_matrix:
        n, B = self.modes.N, self.basis
        kp = self.modes.kperp
        m = sp.csr_matrix((B.size, B.size))
        for i in range(n):
            m = m + kp[i, j] * self.sigma[i] * B.mult(n + i)
        return m.tocsr()

    def d_perp(self, j: int) -> sp.csr_matrix:
        """``D^perp_j = sum_i (k_i^perp)_j R_i``."""
        kp = self.modes.kperp
        m = sp.csr_matrix((self.basis.size, self.basis.size))
        for i in range(self.modes.N):
            m = m + kp[i, j] * self.rot[i]
        return m.tocsr()

    def standardise(self, amp):
        std = np.concatenate([self.sigma, self.sigma])
        return np.asarray(amp, dtype=float) / std

    def mean(self, coef) -> float:
        return coef[0]

    def inner(self, f, g) -> float:
        return float(np.dot(f, g))


@dataclass
class GalerkinCorrector:
    ops: CellOperators
    coef: np.ndarray        # (size, 2): columns are chi_1, chi_2
    residual: np.ndarray    # truncated-space residual norm per direction

    @property
    def degree(self) -> int:
        return self.ops.basis.degree

    @property
    def y(self):
        return self.ops.y

    def __call__(self, amp) -> np.ndarray:
        u = self.ops.standardise(amp)
        return self.ops.basis.evaluate(self.coef, u)

    def gradient(self, amp) -> np.ndarray:
        """Gradient in the amplitudes, shape (P, 2, 2N)."""
        u = self.ops.standardise(np.atleast_2d(amp))
        nv = self.ops.basis.nvar
        out = np.empty((u.shape[0], 2, nv))
        for v in range(nv):
            dc = self.ops.d_amp(v) @ self.coef
            out[:, :, v] = self.ops.basis.evaluate(dc, u)
        return out


def galerkin_solve(modes: ModeSet, y, degree: int, q=None, ops: CellOperators | None = None):
    """Solve ``-L chi_q = w_q`` with zero mean in the truncated Hermite space."""
    if ops is None:
        ops = CellOperators.build(modes, y, degree)
    L = ops.generator
    A = -L[1:, 1:].tocsc()
    rhs = np.stack([ops.w_coef(0), ops.w_coef(1)], axis=1)
    try:
        sol = spla.splu(A).solve(rhs[1:])
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(
            f"truncated cell system singular at degree {degree}; increase D") from exc
    coef = np.zeros_like(rhs)
    coef[1:] = sol
    res = np.linalg.norm(-L @ coef - rhs, axis=0)
    chi = GalerkinCorrector(ops, coef, res)
    if q is None:
        return chi
    return GalerkinCorrector(ops, coef[:, [q - 1]] @ np.eye(1, 2, q - 1), res)


def galerkin_diffusivity(chi: GalerkinCorrector) -> np.ndarray:
    """Effective diffusivity from the corrector gradients (closed-form averages)."""
    ops = chi.ops
    n = ops.modes.N
    A = np.zeros((2, 2))
    for v in range(2 * n):
        # d/da = (1/sigma) d/du, and the prefactor carries sigma^2
        g = ops.basis.deriv(v) @ chi.coef
        A += 2.0 * ops.alpha[v % n] * (g.T @ g)
    return 0.5 * (A + A.T)


def galerkin_theta(ops: CellOperators, i: int, K: np.ndarray) -> np.ndarray:
    """Solve ``(L - alpha_i + i k_i.w) Psi = K`` for the complex expansion Psi."""
    L = ops.generator.astype(complex)
    M = L - ops.alpha[i] * sp.identity(ops.basis.size, format="csr") + 1j * ops.frame[i]
    return spla.splu(M.tocsc()).solve(np.asarray(K, dtype=complex))


def drift_sources(ops: CellOperators, chi_coef: np.ndarray, q: int):
    """Expansions of the sources F_{i,l}, G_{i,l} for direction ``q`` (0-based).

    Returned arrays have shape (N, 2, size).
    """
    n, B = ops.modes.N, ops.basis
    c = chi_coef[:, q]
    F = np.zeros((n, 2, B.size))
    G = np.zeros((n, 2, B.size))
    # (e_l^perp)_q: e_1^perp = (0, -1), e_2^perp = (1, 0)
    eperp = np.array([[0.0, -1.0], [1.0, 0.0]])
    for l in range(2):
        base = -(ops.d_perp(l) @ c)
        base[0] += eperp[l, q]
        wl = ops.times_w(l)
        for i in range(n):
            F[i, l] = base + wl @ (ops.d_amp(i) @ c)
            G[i, l] = wl @ (ops.d_amp(n + i) @ c)
    return F, G


def _chi_y(modes: ModeSet, y, degree: int, basis: HermiteBasis, h: float):
    """Slow derivative of the corrector at fixed amplitudes, as expansions at ``y``.

    Coefficients are differentiated by central differences; the change of the
    Hermite scaling sigma(y) is handled exactly via ``u d/du``.
    """
    y = np.asarray(y, dtype=float)
    ops = CellOperators.build(modes, y, degree, basis)
    sig = ops.sigma
    dsig = modes.sigma_grad(y)  # (N, 2)
    n = modes.N
    out = []
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        cp = galerkin_solve(modes, y + e, degree, ops=CellOperators.build(modes, y + e, degree, basis)).coef
        cm = galerkin_solve(modes, y - e, degree, ops=CellOperators.build(modes, y - e, degree, basis)).coef
        dc = (cp - cm) / (2 * h)
        c0 = galerkin_solve(modes, y, degree, ops=ops).coef
        for v in range(2 * n):
            scale = dsig[v % n, j] / sig[v % n]
            if scale != 0.0:
                udu = basis.mult(v) @ basis.deriv(v)
                dc = dc - scale * (udu @ c0)
        out.append(dc)
    return np.stack(out, axis=0)  # (2 [y_j], size, 2 [q])


@dataclass
class GalerkinEffective:
    y: np.ndarray
    A: np.ndarray
    B: np.ndarray
    parts: dict


def galerkin_effective(modes: ModeSet, y, degree: int, h: float = 1e-4) -> GalerkinEffective:
    """Deterministic effective coefficients at ``y`` from the truncated system.

    The drift combines, per direction q,
      E[w . d_y chi_q]
      + sum_{i,l} (gamma_{il} / sigma_i) E[a_i F_il + b_i G_il]
      + sum_{i,l} alpha_{i,y_l} E[Theta1_il a_i + Theta2_il b_i],
    where Theta solves the damped rotating system with sources F, G.
    """
    y = np.asarray(y, dtype=float)
    ops = CellOperators.build(modes, y, degree)
    B_ = ops.basis
    n = modes.N
    chi = galerkin_solve(modes, y, degree, ops=ops)
    A = galerkin_diffusivity(chi)
    alpha, sigma = ops.alpha, ops.sigma
    da = modes.alpha_grad(y)
    ds = modes.sigma_grad(y)
    gam = ds + da * (sigma / (2 * alpha))[:, None]
    stationary = not (np.any(da) or np.any(ds))
    drift = np.zeros(2)
    parts = {"w_chi_y": np.zeros(2), "gamma": np.zeros(2), "theta": np.zeros(2)}
    if not stationary:
        chiy = _chi_y(modes, y, degree, B_, h)
        for q in range(2):
            t = 0.0
            for l in range(2):
                wl = ops.times_w(l)
                # E[w_l * chi_y_l] is the constant coefficient of the product
                t += (wl @ chiy[l, :, q])[0]
            parts["w_chi_y"][q] = t
            F, G = drift_sources(ops, chi.coef, q)
            for i in range(n):
                ia, ib = B_.unit(i), B_.unit(n + i)
                for l in range(2):
                    if gam[i, l] != 0.0:
                        parts["gamma"][q] += gam[i, l] / sigma[i] * sigma[i] * (F[i, l][ia] + G[i, l][ib])
                    if da[i, l] != 0.0:
                        theta = galerkin_theta(ops, i, F[i, l] + 1j * G[i, l])
                        parts["theta"][q] += da[i, l] * sigma[i] * (theta[ia].real + theta[ib].imag)
        drift = parts["w_chi_y"] + parts["gamma"] + parts["theta"]
    return GalerkinEffective(y, A, drift, parts)


def gauss_hermite_expectation(func, std, npts: int) -> float:
    """Tensor Gauss-Hermite quadrature of ``func`` under N(0, diag(std^2))."""
    x, w = hermite_e.hermegauss(npts)
    w = w / w.sum()
    std = np.asarray(std, dtype=float)
    grids = np.array(list(itertools.product(x, repeat=len(std))))
    weights = np.prod(np.array(list(itertools.product(w, repeat=len(std)))), axis=1)
    return float(np.sum(weights * func(grids * std)))
