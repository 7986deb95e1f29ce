"""Filter-bank representation of the y-dependent OU amplitudes.

For every mode i and channel c in {a, b} the bank keeps, on a grid of decay
rates alpha_m, the two stochastic convolutions

    Z_m(t) = int_{-inf}^t exp(-alpha_m (t - s)) dw(s)
    Y_m(t) = int_{-inf}^t (t - s) exp(-alpha_m (t - s)) dw(s)

driven by one Brownian motion w = w_{i,c}.  Amplitudes at a slow point y are
recovered by interpolating Z and Y at alpha_i(y):

    a_i(t; y)     = sqrt(2 alpha) sigma Z(alpha)
    d_{y_j} a_i   = sqrt(2 alpha) (gamma_ij Z(alpha) - sigma alpha_{,j} Y(alpha))
    gamma_ij      = sigma_{,j} + alpha_{,j} sigma / (2 alpha)

State arrays have shape ``(..., N, 2, M)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.special import gammainc

from .field import ModeSet
from .rng import RngStream

MIN_NODES = 4


@dataclass(frozen=True)
class BankLayout:
    nodes: np.ndarray    # (N, Mmax) decay rates; padded with the last node
    counts: np.ndarray   # (N,) active nodes per mode
    bary: np.ndarray     # (N, Mmax) barycentric weights (zero on padding)
    track_y: bool        # False when every alpha profile is constant

    @property
    def N(self) -> int:
        return self.nodes.shape[0]

    @property
    def M(self) -> int:
        return self.nodes.shape[1]


def chebyshev_lobatto(lo: float, hi: float, M: int):
    j = np.arange(M)
    x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * j / (M - 1))
    w = (-1.0) ** j
    w[0] *= 0.5
    w[-1] *= 0.5
    return x[::-1].copy(), w[::-1].copy()


def bank_layout(modes: ModeSet, M: int = 33) -> BankLayout:
    """Per-mode Chebyshev nodes over the range of alpha_i; one node if alpha_i is constant."""
    if M < MIN_NODES:
        raise ValueError(f"need at least {MIN_NODES} alpha nodes, got M={M}")
    n = modes.N
    counts = np.array([1 if p.is_constant else M for p in modes.alpha], dtype=np.int64)
    mmax = int(counts.max())
    nodes = np.zeros((n, mmax))
    bary = np.zeros((n, mmax))
    for i, p in enumerate(modes.alpha):
        lo, hi = p.bounds()
        if counts[i] == 1:
            nodes[i] = lo
            bary[i, 0] = 1.0
        else:
            x, w = chebyshev_lobatto(lo, hi, M)
            nodes[i], bary[i] = x, w
    return BankLayout(nodes, counts, bary, not all(p.is_constant for p in modes.alpha))


def _moment(n: int, S, t):
    """``int_0^t u^n exp(-S u) du`` evaluated stably for S > 0."""
    S = np.asarray(S, dtype=float)
    fact = float(np.prod(np.arange(1, n + 1)))
    return fact / S ** (n + 1) * gammainc(n + 1, S * t)


def _factor(cov: np.ndarray, what: str) -> np.ndarray:
    lam, vec = np.linalg.eigh(cov)
    top = max(lam[-1], 0.0)
    if lam[0] < -1e-10 * top:
        raise np.linalg.LinAlgError(
            f"{what} covariance not positive semidefinite: min eigenvalue {lam[0]:.3e}, max {top:.3e}")
    keep = lam > 1e-15 * top
    return vec[:, keep] * np.sqrt(lam[keep])


def _joint_cov(nodes: np.ndarray, track_y: bool, dt: float | None) -> np.ndarray:
    S = nodes[:, None] + nodes[None, :]
    if dt is None:
        zz, zy, yy = 1.0 / S, 1.0 / S**2, 2.0 / S**3
    else:
        zz, zy, yy = _moment(0, S, dt), _moment(1, S, dt), _moment(2, S, dt)
    if not track_y:
        return zz
    return np.block([[zz, zy], [zy.T, yy]])


@lru_cache(maxsize=64)
def _cached_factor(nodes: tuple, track_y: bool, dt: float | None) -> np.ndarray:
    what = "stationary" if dt is None else f"increment (dt={dt:g})"
    return _factor(_joint_cov(np.array(nodes), track_y, dt), what)


def noise_factors(layout: BankLayout, dt: float | None) -> np.ndarray:
    """Stacked low-rank factors, shape (N, S, R) with S = M or 2M.

    ``dt=None`` gives the stationary law; otherwise the law of the exact
    increment over ``dt``.
    """
    mats = [_cached_factor(tuple(layout.nodes[i, :layout.counts[i]]), layout.track_y, dt)
            for i in range(layout.N)]
    s = layout.M * (2 if layout.track_y else 1)
    r = max(m.shape[1] for m in mats)
    out = np.zeros((layout.N, s, r))
    for i, m in enumerate(mats):
        c = layout.counts[i]
        if layout.track_y:
            out[i, :c, :m.shape[1]] = m[:c]
            out[i, layout.M:layout.M + c, :m.shape[1]] = m[c:]
        else:
            out[i, :c, :m.shape[1]] = m
    return out


@dataclass(frozen=True)
class CoefficientBank:
    layout: BankLayout
    Z: np.ndarray
    Y: np.ndarray
    t: float = 0.0

    @property
    def alpha_nodes(self) -> np.ndarray:
        return self.layout.nodes


def _apply_noise(layout: BankLayout, L: np.ndarray, xi: np.ndarray):
    """Map standard normals ``xi (..., N, 2, R)`` to (dZ, dY) of shape (..., N, 2, M)."""
    v = np.einsum("isr,...icr->...ics", L, xi)
    M = layout.M
    if layout.track_y:
        return v[..., :M], v[..., M:]
    return v, np.zeros_like(v)


def bank_init_stationary(modes: ModeSet, M: int, rng: RngStream, size=(),
                         layout: BankLayout | None = None) -> CoefficientBank:
    """Draw (Z, Y) on all nodes from their exact joint stationary law."""
    if layout is None:
        layout = bank_layout(modes, M)
    size = (size,) if np.isscalar(size) else tuple(size)
    L = noise_factors(layout, None)
    xi = rng.normal(size + (layout.N, 2, L.shape[2]))
    Z, Y = _apply_noise(layout, L, xi)
    return CoefficientBank(layout, Z, Y, 0.0)


def transition(layout: BankLayout, dt: float):
    """Deterministic part of the exact update: (decay, Y <- decay*(Y + dt Z))."""
    return np.exp(-layout.nodes * dt)


def bank_step(bank: CoefficientBank, dt: float, rng: RngStream) -> CoefficientBank:
    """Exact-in-law update; all nodes of one (mode, channel) share the driving noise."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lay = bank.layout
    L = noise_factors(lay, dt)
    xi = rng.normal(bank.Z.shape[:-1] + (L.shape[2],))
    return advance(bank, dt, L, xi)


def advance(bank: CoefficientBank, dt: float, L: np.ndarray, xi: np.ndarray) -> CoefficientBank:
    lay = bank.layout
    e = np.exp(-lay.nodes * dt)[:, None, :]
    dZ, dY = _apply_noise(lay, L, xi)
    Z = e * bank.Z + dZ
    Y = e * (bank.Y + dt * bank.Z) + dY if lay.track_y else bank.Y
    return replace(bank, Z=Z, Y=Y, t=bank.t + dt)


def bank_step_increments(bank: CoefficientBank, dt: float, dW: np.ndarray) -> CoefficientBank:
    """Update driven by given Brownian increments ``dW (..., N, 2)`` (midpoint kernel weight).

    Matches term by term the Riemann sum sum_k K(t - s_k - dt/2) dW_k of the
    two convolution kernels; used by the brute-force quadrature oracle.
    """
    lay = bank.layout
    e = np.exp(-lay.nodes * dt)[:, None, :]
    eh = np.exp(-lay.nodes * dt / 2)[:, None, :]
    dW = np.asarray(dW)[..., None]
    Z = e * bank.Z + eh * dW
    Y = e * (bank.Y + dt * bank.Z) + 0.5 * dt * eh * dW
    return replace(bank, Z=Z, Y=Y, t=bank.t + dt)


def interp_weights(layout: BankLayout, alpha: np.ndarray) -> np.ndarray:
    """Barycentric interpolation weights at ``alpha (..., N)``; shape (..., N, M)."""
    alpha = np.asarray(alpha, dtype=float)
    nodes, w = layout.nodes, layout.bary
    d = alpha[..., None] - nodes
    hit = np.abs(d) < 1e-14
    active = np.arange(layout.M) < layout.counts[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(active, w / d, 0.0)
        c = c / c.sum(axis=-1, keepdims=True)
    anyhit = hit & active
    rows = anyhit.any(axis=-1)
    c = np.where(rows[..., None], anyhit.astype(float), c)
    # modes with a single node: the value is that node's state
    single = layout.counts == 1
    if single.any():
        one = np.zeros(layout.M)
        one[0] = 1.0
        c = np.where(single[:, None], one, c)
    return c


def check_alpha_range(layout: BankLayout, alpha: np.ndarray):
    lo = layout.nodes[:, 0]
    hi = layout.nodes[np.arange(layout.N), layout.counts - 1]
    bad = (alpha < lo - 1e-9) | (alpha > hi + 1e-9)
    bad &= layout.counts > 1
    if np.any(bad):
        raise FloatingPointError("alpha(y) outside the bank's node range; profile bounds violated")


def bank_eval(bank: CoefficientBank, modes: ModeSet, y):
    """Amplitudes ``(..., 2N)`` and their y-gradients ``(..., 2N, 2)`` at slow point(s) ``y``."""
    y = np.asarray(y, dtype=float)
    lay = bank.layout
    alpha = modes.alpha_at(y)
    sigma = modes.sigma_at(y)
    check_alpha_range(lay, alpha)
    c = interp_weights(lay, alpha)[..., :, None, :]      # (..., N, 1, M)
    Zi = np.sum(c * bank.Z, axis=-1)                      # (..., N, 2)
    root = np.sqrt(2.0 * alpha)
    amp = (root * sigma)[..., None] * Zi
    n = modes.N
    out = np.concatenate([amp[..., 0], amp[..., 1]], axis=-1)
    da = modes.alpha_grad(y)                              # (..., N, 2)
    ds = modes.sigma_grad(y)
    gam = ds + da * (sigma / (2 * alpha))[..., None]
    g = root[..., None, None] * gam[..., :, None, :] * Zi[..., None]   # (..., N, 2c, 2j)
    if lay.track_y:
        Yi = np.sum(c * bank.Y, axis=-1)
        g = g - (root * sigma)[..., None, None] * da[..., :, None, :] * Yi[..., None]
    grad = np.concatenate([g[..., 0, :], g[..., 1, :]], axis=-2)
    assert grad.shape[-2] == 2 * n
    return out, grad
