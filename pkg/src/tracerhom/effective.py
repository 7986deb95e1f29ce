"""Effective drift B(y) and diffusivity A(y) of the homogenized diffusion.

    A_qq' = 2 sum_i alpha_i sigma_i^2 E[chi_q,a_i chi_q',a_i + chi_q,b_i chi_q',b_i]

    B_q   = E[w . d_y chi_q]
          + sum_{i,l} (gamma_il / sigma_i) E[a_i F_il + b_i G_il]
          + sum_{i,l} alpha_i,y_l E[Theta1_il a_i + Theta2_il b_i]

with F_il = (e_l^perp)_q - D^perp_l chi_q + w_l chi_q,a_i, G_il = w_l chi_q,b_i,
D^perp_l = sum_j (k_j^perp)_l R_j, gamma_il = sigma_i,l + alpha_i,l sigma_i / (2 alpha_i),
and Theta1 + i Theta2 = -Psi where Psi is the Feynman-Kac functional computed
by ``cell.corrector_theta``.  All expectations are under nu_y.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cell import DT, AuxParams, _mean_se, horizon, propagate, JAC_LIMIT
from .field import ModeSet
from .parallel import run_blocks
from .rng import RngStream

# (e_l^perp)_q for e_1^perp = (0, -1), e_2^perp = (1, 0); indexed [l, q]
EPERP = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass
class AEstimate:
    A: np.ndarray
    std_err: np.ndarray
    projection: float
    T_max: float
    tail: float
    n_samples: int
    raw: np.ndarray


@dataclass
class BEstimate:
    B: np.ndarray
    std_err: np.ndarray
    parts: dict
    T_max: float
    n_samples: int


def psd_project(A: np.ndarray):
    """Symmetrize and clip negative eigenvalues; returns (A_psd, ||A_sym - A_psd||_2)."""
    S = 0.5 * (A + A.T)
    lam, vec = np.linalg.eigh(S)
    clipped = np.clip(lam, 0.0, None)
    P = (vec * clipped) @ vec.T
    return 0.5 * (P + P.T), float(np.max(np.abs(lam - clipped)))


def _draw(prm: AuxParams, r: RngStream, size: int) -> np.ndarray:
    std = np.concatenate([prm.sigma, prm.sigma])
    return std * r.normal((size, std.size))


def _ok(jac):
    n = np.linalg.norm(jac.reshape(jac.shape[0], -1), axis=1)
    return np.isfinite(n) & (n <= JAC_LIMIT)


def estimate_A(y, n: int, rng: RngStream, modes: ModeSet, tol: float = 1e-3,
               dt: float = DT) -> AEstimate:
    """Monte Carlo diffusivity; two independent gradient paths per nu_y draw make
    every product unbiased."""
    y = np.asarray(y, dtype=float)
    prm = AuxParams.at(modes, y)
    T, _ = horizon(modes, y, tol)
    steps = max(1, int(math.ceil(T / dt)))
    wts = 2.0 * np.tile(prm.alpha * prm.sigma**2, 2)

    def block(r, start, size):
        r0, r1, r2 = r.split(3)
        x0 = _draw(prm, r0, size)
        p1 = propagate(prm, x0, steps, dt, r1, grad=True)
        p2 = propagate(prm, x0, steps, dt, r2, grad=True)
        g1, g2 = p1.grad, p2.grad
        s = np.einsum("pqm,m,prm->pqr", g1, wts, g2)
        s = 0.5 * (s + np.swapaxes(s, 1, 2))
        return s[_ok(p1.jac) & _ok(p2.jac)]

    samples = np.concatenate(run_blocks(block, n, rng))
    m, se = _mean_se(samples)
    A, proj = psd_project(m)
    gap = float(prm.alpha.min())
    q = 2.0 * math.exp(-gap * steps * dt)
    # truncated A understates the full one by the same factor, so rescale
    tail = q / max(1.0 - q, 1e-12) * float(np.max(np.abs(np.diag(A))))
    tr = float(np.trace(A))
    if proj > 1e-3 * max(tr, 1e-300):
        warnings.warn(f"PSD projection moved A by {proj:.2e} (trace {tr:.2e})",
                      RuntimeWarning, stacklevel=2)
    return AEstimate(A, se, proj, steps * dt, tail, samples.shape[0], m)


def _sources(prm: AuxParams, x: np.ndarray, g: np.ndarray):
    """F, G of shape (P, 2 [q], N [i], 2 [l]) at points x with corrector gradients g (P, 2, 2N)."""
    N = prm.N
    a, b = x[:, :N], x[:, N:]
    w = b @ prm.kperp                                   # (P, 2 [l])
    ga, gb = g[:, :, :N], g[:, :, N:]                   # (P, q, j)
    rot = b[:, None, :] * ga - a[:, None, :] * gb       # R_j chi_q
    dperp = np.einsum("jl,pqj->pql", prm.kperp, rot)    # (P, q, l)
    F = (EPERP.T[None, :, None, :] - dperp[:, :, None, :]
         + w[:, None, None, :] * ga[:, :, :, None])
    G = w[:, None, None, :] * gb[:, :, :, None]
    return F, G


def estimate_B(y, n: int, rng: RngStream, modes: ModeSet, tol: float = 1e-3,
               dt: float = DT, h: float = 1e-2) -> BEstimate:
    """Monte Carlo effective drift at ``y``.

    Per nu_y draw: CRN central differences for d_y chi (4 corrector paths), one
    tangent-flow path for grad chi, and for the Theta term one path run to an
    exponential (geometric) random time followed by a tangent-flow path from the
    stopped state.  Every factor is an unbiased one-path estimate, so the
    per-draw products are unbiased.
    """
    y = np.asarray(y, dtype=float)
    prm = AuxParams.at(modes, y)
    N = prm.N
    T, _ = horizon(modes, y, tol)
    steps = max(1, int(math.ceil(T / dt)))
    dal = modes.alpha_grad(y)
    dsg = modes.sigma_grad(y)
    gam = dsg + dal * (prm.sigma / (2.0 * prm.alpha))[:, None]
    if not (np.any(dal) or np.any(dsg)):
        zero = np.zeros(2)
        return BEstimate(zero, zero.copy(), {k: zero.copy() for k in ("w_chi_y", "gamma", "theta")},
                         steps * dt, n)
    rate = float(prm.alpha.min())
    qg = math.exp(-rate * dt)
    phi = -np.expm1(-prm.alpha * dt) / prm.alpha

    def block(r, start, size):
        r0, r_fd, r_g, r_t, r_k, r_tg = r.split(6)
        x0 = _draw(prm, r0, size)
        w0 = x0[:, N:] @ prm.kperp
        # d_y chi at fixed amplitudes
        t1 = np.zeros((size, 2))
        fd = r_fd.split(2)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            pp = propagate(AuxParams.at(modes, y + e), x0, steps, dt, fd[j].clone(), chi=True)
            pm = propagate(AuxParams.at(modes, y - e), x0, steps, dt, fd[j].clone(), chi=True)
            t1 += w0[:, j, None] * (pp.chi - pm.chi) / (2 * h)
        # gamma term
        pg = propagate(prm, x0, steps, dt, r_g, grad=True)
        F, G = _sources(prm, x0, pg.grad)
        a0, b0 = x0[:, :N], x0[:, N:]
        coef = gam / prm.sigma[:, None]                         # (i, l)
        t2 = np.einsum("il,pqil->pq", coef, a0[:, None, :, None] * F + b0[:, None, :, None] * G)
        # Theta term: stop at a geometric number of steps
        K = np.floor(r_k.exponential(size) / (rate * dt)).astype(np.int64)
        live = K < steps
        K = np.where(live, K, steps)
        xs = np.array(x0, order="C")
        ph = np.zeros((size, N))
        snap_x = x0.copy()
        snap_ph = np.zeros((size, N))
        kmax = int(K[live].max()) if live.any() else 0
        for s in range(kmax + 1):
            hit = K == s
            if hit.any():
                snap_x[hit] = xs[hit]
                snap_ph[hit] = ph[hit]
            if s == kmax:
                break
            pr = propagate(prm, xs, 1, dt, r_t, phase=True)
            xs = pr.amp
            ph += pr.phase
        pt = propagate(prm, snap_x, steps, dt, r_tg, grad=True)
        Fs, Gs = _sources(prm, snap_x, pt.grad)
        wK = (phi[None, :] * np.exp(-(prm.alpha[None, :] - rate) * K[:, None] * dt)
              / (1.0 - qg)) * live[:, None]                     # (P, i)
        psi = (wK * np.exp(1j * snap_ph))[:, None, :, None] * (Fs + 1j * Gs)
        theta = -psi
        t3 = np.einsum("il,pqil->pq", dal,
                       theta.real * a0[:, None, :, None] + theta.imag * b0[:, None, :, None])
        ok = _ok(pg.jac) & _ok(pt.jac)
        return np.stack([t1, t2, t3], axis=1)[ok]

    samples = np.concatenate(run_blocks(block, n, rng))    # (n, 3, 2)
    tot = samples.sum(axis=1)
    m, se = _mean_se(tot)
    pm, pse = _mean_se(samples)
    parts = {"w_chi_y": pm[0], "gamma": pm[1], "theta": pm[2],
             "w_chi_y_se": pse[0], "gamma_se": pse[1], "theta_se": pse[2]}
    return BEstimate(m, se, parts, steps * dt, samples.shape[0])


@dataclass
class EffectiveModel:
    """Tabulated effective coefficients on a rectangular grid (``ij`` indexing)."""

    xs: np.ndarray
    ys: np.ndarray
    B: np.ndarray           # (nx, ny, 2)
    A: np.ndarray           # (nx, ny, 2, 2)
    B_se: np.ndarray
    A_se: np.ndarray
    provenance: dict = field(default_factory=dict)

    @classmethod
    def constant(cls, A, B=(0.0, 0.0), provenance=None) -> "EffectiveModel":
        A = np.asarray(A, dtype=float).reshape(1, 1, 2, 2)
        B = np.asarray(B, dtype=float).reshape(1, 1, 2)
        return cls(np.zeros(1), np.zeros(1), B, A, np.zeros_like(B), np.zeros_like(A),
                   provenance or {})

    @property
    def grid(self):
        return np.stack(np.meshgrid(self.xs, self.ys, indexing="ij"), axis=-1)

    def _locate(self, ax, v):
        if ax.size == 1:
            z = np.zeros(v.shape, dtype=np.int64)
            return z, z, np.zeros(v.shape)
        v = np.clip(v, ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, v, side="right") - 1, 0, ax.size - 2)
        t = (v - ax[i]) / (ax[i + 1] - ax[i])
        return i, i + 1, t

    def _interp(self, table, x):
        x = np.asarray(x, dtype=float)
        i0, i1, tx = self._locate(self.xs, x[..., 0])
        j0, j1, ty = self._locate(self.ys, x[..., 1])
        extra = (None,) * (table.ndim - 2)
        tx, ty = tx[(...,) + extra], ty[(...,) + extra]
        return ((1 - tx) * (1 - ty) * table[i0, j0] + tx * (1 - ty) * table[i1, j0]
                + (1 - tx) * ty * table[i0, j1] + tx * ty * table[i1, j1])

    def drift(self, x):
        """Bilinear interpolation of B, constant beyond the table edges."""
        return self._interp(self.B, x)

    def diffusivity(self, x):
        return self._interp(self.A, x)

    def to_dict(self) -> dict:
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist(), "B": self.B.tolist(),
                "A": self.A.tolist(), "B_se": self.B_se.tolist(), "A_se": self.A_se.tolist(),
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "EffectiveModel":
        f = lambda k: np.asarray(d[k], dtype=float)
        return cls(f("xs"), f("ys"), f("B"), f("A"), f("B_se"), f("A_se"), d.get("provenance", {}))

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        cols = ["y1", "y2", "B1", "B2", "A11", "A12", "A22",
                "B1_se", "B2_se", "A11_se", "A12_se", "A22_se"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for i, x in enumerate(self.xs):
                for j, yv in enumerate(self.ys):
                    A, S = self.A[i, j], self.A_se[i, j]
                    row = [x, yv, *self.B[i, j], A[0, 0], A[0, 1], A[1, 1],
                           *self.B_se[i, j], S[0, 0], S[0, 1], S[1, 1]]
                    wr.writerow([repr(float(v)) for v in row])


def tabulate_effective(xs, ys, n: int, rng: RngStream, modes: ModeSet, tol: float = 1e-3,
                       dt: float = DT, h: float = 1e-2, with_drift: bool = True) -> EffectiveModel:
    """Estimate A and B at every grid point; each point gets its own split stream."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    if xs.size == 0 or ys.size == 0:
        raise ValueError("grid must be nonempty")
    nx, ny = xs.size, ys.size
    B = np.zeros((nx, ny, 2))
    Bse = np.zeros((nx, ny, 2))
    A = np.zeros((nx, ny, 2, 2))
    Ase = np.zeros((nx, ny, 2, 2))
    streams = rng.split(nx * ny)
    proj = []
    for i in range(nx):
        for j in range(ny):
            ra, rb = streams[i * ny + j].split(2)
            y = np.array([xs[i], ys[j]])
            ea = estimate_A(y, n, ra, modes, tol, dt)
            A[i, j], Ase[i, j] = ea.A, ea.std_err
            proj.append(ea.projection)
            if with_drift:
                eb = estimate_B(y, n, rb, modes, tol, dt, h)
                B[i, j], Bse[i, j] = eb.B, eb.std_err
    prov = {"modes": modes.fingerprint(), "n": n, "tol": tol, "dt": dt, "h": h,
            "max_projection": max(proj)}
    return EffectiveModel(xs, ys, B, A, Bse, Ase, prov)
