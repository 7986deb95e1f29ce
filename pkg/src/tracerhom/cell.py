"""Auxiliary (Lagrangian-frame) dynamics and Monte Carlo cell-problem solvers.

The tilde process lives on R^{2N} with generator

    L_y = sum_i alpha_i (sigma_i^2 Laplacian_i - amp_i . grad_i) + sum_i omega_i R_i,
    omega_i = sum_j delta(k_i, k_j) b_j,   R_i = b_i d/da_i - a_i d/db_i.

Every estimator here advances batches of tilde paths through the compiled
kernel (``kernels.aux_chunk``).  Directions ``q`` are 1 or 2 and mode indices
``i`` run from 1 to N, as in the public API; internally everything is 0-based.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .field import ModeSet
from .parallel import run_blocks
from .rng import RngStream

DT = 1e-2
CHUNK = 128
JAC_LIMIT = math.exp(50.0)


@dataclass(frozen=True)
class AuxParams:
    alpha: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray
    kperp: np.ndarray

    @classmethod
    def at(cls, modes: ModeSet, y) -> "AuxParams":
        y = np.asarray(y, dtype=float)
        c = np.ascontiguousarray
        return cls(c(modes.alpha_at(y), dtype=float), c(modes.sigma_at(y), dtype=float),
                   c(modes.delta, dtype=float), c(modes.kperp, dtype=float))

    @property
    def N(self) -> int:
        return self.alpha.shape[0]

    def w_norm(self) -> np.ndarray:
        """L2(nu) norms of w_1, w_2."""
        return np.sqrt(np.sum(self.kperp**2 * self.sigma[:, None] ** 2, axis=0))


@dataclass(frozen=True)
class AuxState:
    amp: np.ndarray
    y: np.ndarray


def aux_step(state: AuxState, dt: float, modes: ModeSet, rng: RngStream,
             max_dt: float = DT) -> AuxState:
    if not 0 < dt <= max_dt:
        raise ValueError(f"aux step needs 0 < dt <= {max_dt}")
    prm = AuxParams.at(modes, state.y)
    amp = np.array(np.atleast_2d(state.amp), dtype=float, order="C")
    noise = rng.normal((1,) + amp.shape)
    _run(prm, amp, dt, noise)
    return AuxState(amp.reshape(np.shape(state.amp)), state.y)


def _empty(*shape):
    return np.zeros((0,) + shape)


def _run(prm, amp, dt, noise, jac=None, chi=None, grad=None, phase=None, bel=None):
    N = prm.N
    kernels.aux_chunk(amp,
                      jac if jac is not None else _empty(2 * N, 2 * N),
                      chi if chi is not None else _empty(2),
                      grad if grad is not None else _empty(2, 2 * N),
                      phase if phase is not None else _empty(N),
                      bel if bel is not None else _empty(2 * N),
                      prm.alpha, prm.sigma, prm.delta, prm.kperp, dt, noise)


@dataclass
class Propagation:
    amp: np.ndarray
    steps: int
    jac: np.ndarray | None = None
    chi: np.ndarray | None = None
    grad: np.ndarray | None = None
    phase: np.ndarray | None = None
    bel: np.ndarray | None = None


def propagate(prm: AuxParams, amp0, steps: int, dt: float, rng: RngStream, *,
              jac=False, chi=False, grad=False, phase=False, bel=False) -> Propagation:
    """Run ``steps`` aux steps from each row of ``amp0`` with the requested accumulators."""
    amp = np.array(np.atleast_2d(amp0), dtype=float, order="C")
    P, D = amp.shape
    out = Propagation(amp, steps)
    if jac or grad or bel:
        out.jac = np.ascontiguousarray(np.broadcast_to(np.eye(D), (P, D, D)))
    if chi:
        out.chi = np.zeros((P, 2))
    if grad:
        out.grad = np.zeros((P, 2, D))
    if phase:
        out.phase = np.zeros((P, prm.N))
    if bel:
        out.bel = np.zeros((P, D))
    for s0 in range(0, steps, CHUNK):
        noise = rng.normal((min(CHUNK, steps - s0), P, D))
        _run(prm, amp, dt, noise, out.jac, out.chi, out.grad, out.phase, out.bel)
    return out


def horizon(modes: ModeSet, y, tol: float) -> tuple[float, float]:
    """Truncation time and the L2 tail bound left beyond it.

    T = max(ln(1/tol)/gamma0, ln(2 C / tol)/gap) with gap the local smallest
    rate and C = max_q ||w_q|| / gap; the factor 2 is a safety margin.
    """
    prm = AuxParams.at(modes, y)
    gap = float(prm.alpha.min())
    wn = float(prm.w_norm().max())
    T = max(math.log(1.0 / tol) / modes.gamma0, math.log(2.0 * wn / (gap * tol)) / gap, 0.0)
    return T, wn * math.exp(-gap * T) / gap


@dataclass
class CorrectorEstimate:
    value: np.ndarray | float
    std_err: np.ndarray | float
    T_max: float
    n_samples: int
    tail: float = 0.0
    estimator: str = "feynman-kac"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("value", "std_err"):
            d[key] = np.asarray(d[key]).tolist()
        return d


def _mean_se(x: np.ndarray):
    n = x.shape[0]
    m = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(m)
    return m, se


def _qsel(q):
    if q is None:
        return slice(None)
    if q not in (1, 2):
        raise ValueError("direction q must be 1 or 2")
    return q - 1


def chi_paths(prm: AuxParams, amps, steps: int, dt: float, rng: RngStream,
              grad: bool = False):
    """One-path corrector (and gradient) estimates from each starting point."""
    pr = propagate(prm, amps, steps, dt, rng, chi=True, grad=grad)
    return pr.chi, pr.grad


def semigroup_estimate(F, amp, y, t: float, n: int, rng: RngStream, modes: ModeSet,
                       dt: float = DT):
    """Monte Carlo ``P_t F(amp)`` with its standard error."""
    amp = np.asarray(amp, dtype=float)
    if t < 0:
        raise ValueError("t must be nonnegative")
    steps = int(round(t / dt))
    if steps == 0:
        return float(F(amp[None])[0]), 0.0
    prm = AuxParams.at(modes, y)

    def block(r, start, size):
        pr = propagate(prm, np.broadcast_to(amp, (size, amp.size)), steps, t / steps, r)
        return np.asarray(F(pr.amp), dtype=float)

    vals = np.concatenate(run_blocks(block, n, rng))
    m, se = _mean_se(vals)
    return float(m), float(se)


def semigroup_norm(q: int, y, t: float, n: int, rng: RngStream, modes: ModeSet,
                   dt: float = DT):
    """``||P_t w_q||`` in L2(nu_y), from two independent inner paths per outer draw."""
    prm = AuxParams.at(modes, y)
    steps = int(round(t / dt))
    qi = _qsel(q)
    std = np.concatenate([prm.sigma, prm.sigma])

    def block(r, start, size):
        r0, r1, r2 = r.split(3)
        x0 = std * r0.normal((size, std.size))
        vals = []
        for rr in (r1, r2):
            pr = propagate(prm, x0, steps, dt, rr) if steps else Propagation(x0.copy(), 0)
            vals.append(pr.amp[:, prm.N:] @ prm.kperp[:, qi])
        return vals[0] * vals[1]

    prod = np.concatenate(run_blocks(block, n, rng))
    m, se = _mean_se(prod)
    norm = math.sqrt(max(m, 0.0))
    # delta method for the square root
    norm_se = se / (2 * norm) if norm > 0 else math.sqrt(se)
    return norm, norm_se


def corrector_chi(q, amp, y, tol: float, n: int, rng: RngStream, modes: ModeSet,
                  dt: float = DT) -> CorrectorEstimate:
    """``chi_q(amp; y) = int_0^inf P_t w_q(amp) dt`` by path averaging.

    The time integral uses exponentially weighted left-point sums, exact for the
    OU part; the horizon and tail bound come from ``horizon``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    amp = np.asarray(amp, dtype=float)
    prm = AuxParams.at(modes, y)
    T, tail = horizon(modes, y, tol)
    steps = max(1, int(math.ceil(T / dt)))

    def block(r, start, size):
        return chi_paths(prm, np.broadcast_to(amp, (size, amp.size)), steps, dt, r)[0]

    vals = np.concatenate(run_blocks(block, n, rng))
    m, se = _mean_se(vals)
    qi = _qsel(q)
    est = CorrectorEstimate(m[qi], se[qi], steps * dt, n, tail)
    if np.max(np.atleast_1d(est.std_err)) > tol:
        warnings.warn(f"corrector std error {np.max(est.std_err):.2e} exceeds tol {tol:.1e}",
                      RuntimeWarning, stacklevel=2)
    return est


def corrector_chi_batch(q, amps, y, tol: float, rng: RngStream, modes: ModeSet,
                        dt: float = DT, center: bool = False) -> np.ndarray:
    """One-path estimates of chi_q at many points; ``center`` subtracts the batch mean."""
    amps = np.atleast_2d(np.asarray(amps, dtype=float))
    prm = AuxParams.at(modes, y)
    T, _ = horizon(modes, y, tol)
    steps = max(1, int(math.ceil(T / dt)))

    def block(r, start, size):
        return chi_paths(prm, amps[start:start + size], steps, dt, r)[0]

    vals = np.concatenate(run_blocks(block, amps.shape[0], rng))
    if center:
        vals = vals - vals.mean(axis=0)
    return vals[:, _qsel(q)]


@dataclass
class GradientEstimate:
    value: np.ndarray
    std_err: np.ndarray
    T_max: float
    n_samples: int
    estimator: str
    n_dropped: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["value"] = np.asarray(self.value).tolist()
        d["std_err"] = np.asarray(self.std_err).tolist()
        return d


def _guard(jac: np.ndarray, vals: np.ndarray):
    norms = np.linalg.norm(jac.reshape(jac.shape[0], -1), axis=1)
    ok = np.isfinite(norms) & (norms <= JAC_LIMIT)
    return vals[ok], int((~ok).sum())


def grad_chi_variational(q, amp, y, n: int, rng: RngStream, modes: ModeSet,
                         tol: float = 1e-3, dt: float = DT, t_grid=None) -> GradientEstimate:
    """Pathwise-derivative estimate of grad_amp chi_q.

    The tangent flow J(t) = d amp(t) / d amp(0) is co-integrated with the
    paths; grad chi_q = int_0^T sum_i kperp_iq J_{b_i}(t) dt.  ``t_grid``
    (uniform, starting at 0) overrides the horizon from ``tol``.
    """
    amp = np.asarray(amp, dtype=float)
    prm = AuxParams.at(modes, y)
    if t_grid is not None:
        t_grid = np.asarray(t_grid, dtype=float)
        dt = float(t_grid[1] - t_grid[0])
        steps = len(t_grid) - 1
    else:
        T, _ = horizon(modes, y, tol)
        steps = max(1, int(math.ceil(T / dt)))

    def block(r, start, size):
        pr = propagate(prm, np.broadcast_to(amp, (size, amp.size)), steps, dt, r, grad=True)
        return _guard(pr.jac, pr.grad)

    parts = run_blocks(block, n, rng)
    vals = np.concatenate([p[0] for p in parts])
    dropped = sum(p[1] for p in parts)
    m, se = _mean_se(vals)
    qi = _qsel(q)
    return GradientEstimate(m[qi], se[qi], steps * dt, vals.shape[0], "variational", dropped)


def grad_semigroup_variational(q, amp, y, t: float, n: int, rng: RngStream, modes: ModeSet,
                               dt: float = DT) -> GradientEstimate:
    """grad_amp of P_t w_q via the tangent flow: E[sum_i kperp_iq J_{b_i}(t)]."""
    amp = np.asarray(amp, dtype=float)
    prm = AuxParams.at(modes, y)
    steps = max(1, int(round(t / dt)))
    N = prm.N

    def block(r, start, size):
        pr = propagate(prm, np.broadcast_to(amp, (size, amp.size)), steps, t / steps, r, jac=True)
        g = np.einsum("iq,pij->pqj", prm.kperp, pr.jac[:, N:, :])
        return _guard(pr.jac, g)

    parts = run_blocks(block, n, rng)
    vals = np.concatenate([p[0] for p in parts])
    m, se = _mean_se(vals)
    qi = _qsel(q)
    return GradientEstimate(m[qi], se[qi], steps * (t / steps), vals.shape[0], "variational",
                            sum(p[1] for p in parts))


def grad_chi_bel(q, amp, y, t: float, n: int, rng: RngStream, modes: ModeSet,
                 dt: float = DT, f=None) -> GradientEstimate:
    """Bismut-Elworthy-Li estimate of grad_amp P_t f (default f = w_q).

    Discrete form: grad E f(X_n) = (1/n) E[(f(X_n) - c) sum_k <xi_k / s, J_{k+1} .>]
    where s is the per-step noise scale; the batch mean c is a control variate.
    The variance grows like 1/t as t -> 0, so the standard error is always
    reported.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    amp = np.asarray(amp, dtype=float)
    prm = AuxParams.at(modes, y)
    steps = max(1, int(round(t / dt)))
    N = prm.N
    qi = 0 if q is None else _qsel(q)
    if f is None:
        def f(x):
            return x[:, N:] @ prm.kperp[:, qi]

    def block(r, start, size):
        pr = propagate(prm, np.broadcast_to(amp, (size, amp.size)), steps, t / steps, r, bel=True)
        fx = np.asarray(f(pr.amp), dtype=float)
        return fx, pr.bel

    parts = run_blocks(block, n, rng)
    fx = np.concatenate([p[0] for p in parts])
    bel = np.concatenate([p[1] for p in parts])
    vals = (fx - fx.mean())[:, None] * bel / steps
    m, se = _mean_se(vals)
    return GradientEstimate(m, se, steps * (t / steps), n, "bel")


def grad_chi_y(q, amp, y, h: float, tol: float, n: int, rng: RngStream, modes: ModeSet,
               dt: float = DT) -> CorrectorEstimate:
    """Central differences of chi_q in y at fixed amp, with common random numbers."""
    if not 1e-4 <= h <= 1e-1:
        raise ValueError("h must lie in [1e-4, 1e-1]")
    amp = np.asarray(amp, dtype=float)
    y = np.asarray(y, dtype=float)
    T, tail = horizon(modes, y, tol)
    steps = max(1, int(math.ceil(T / dt)))
    amps = np.broadcast_to(amp, (n, amp.size))
    diffs = []
    for j in range(2):
        base = rng.child()
        e = np.zeros(2)
        e[j] = h
        vals = []
        for sgn in (1.0, -1.0):
            prm = AuxParams.at(modes, y + sgn * e)
            vals.append(np.concatenate(run_blocks(
                lambda r, s, m: chi_paths(prm, amps[s:s + m], steps, dt, r)[0], n, base.clone())))
        diffs.append((vals[0] - vals[1]) / (2 * h))
    d = np.stack(diffs, axis=-1)           # (n, 2 [q], 2 [j])
    m, se = _mean_se(d)
    qi = _qsel(q)
    return CorrectorEstimate(m[qi], se[qi], steps * dt, n, tail, "crn-central-difference",
                             {"h": h})


@dataclass
class ThetaEstimate:
    theta1: float
    theta2: float
    std_err: float
    T_max: float = 0.0
    n_samples: int = 0

    @property
    def psi(self) -> complex:
        return complex(self.theta1, self.theta2)

    def to_dict(self) -> dict:
        return asdict(self)


def corrector_theta(i: int, j: int, F, G, amp, y, tol: float, n: int, rng: RngStream,
                    modes: ModeSet, dt: float = DT) -> ThetaEstimate:
    """Feynman-Kac estimate of Psi = int_0^inf E[exp(-alpha_i t + i int_0^t k_i.w ds) K(amp_t)] dt.

    K = F + iG with F, G vectorised callables on (P, 2N) arrays.  ``j`` only
    labels the slow direction the sources belong to.  Psi solves
    (L - alpha_i + i k_i.w) Psi = -K.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 1 <= i <= modes.N or j not in (1, 2):
        raise ValueError("mode index out of range")
    amp = np.asarray(amp, dtype=float)
    prm = AuxParams.at(modes, y)
    a_i = float(prm.alpha[i - 1])
    T = math.log(1.0 / tol) / a_i
    steps = max(1, int(math.ceil(T / dt)))
    w = -math.expm1(-a_i * dt) / a_i

    def block(r, start, size):
        x = np.array(np.broadcast_to(amp, (size, amp.size)), order="C")
        ph = np.zeros((size, prm.N))
        acc = np.zeros(size, dtype=complex)
        for s in range(steps):
            k = np.asarray(F(x), dtype=float) + 1j * np.asarray(G(x), dtype=float)
            acc += w * math.exp(-a_i * s * dt) * np.exp(1j * ph[:, i - 1]) * k
            _run(prm, x, dt, r.normal((1, size, x.shape[1])), phase=ph)
        return acc

    vals = np.concatenate(run_blocks(block, n, rng))
    m = vals.mean()
    se = math.sqrt((vals.real.var(ddof=1) + vals.imag.var(ddof=1)) / n) if n > 1 else 0.0
    return ThetaEstimate(float(m.real), float(m.imag), se, steps * dt, n)


def probe_report(estimate, **meta) -> dict:
    d = {"estimator": getattr(estimate, "estimator", type(estimate).__name__)}
    d.update(estimate.to_dict())
    d.update(meta)
    return d


def write_probe_reports(path, reports: list[dict]) -> None:
    with open(path, "w") as fh:
        json.dump(reports, fh, indent=2, sort_keys=True)
        fh.write("\n")
