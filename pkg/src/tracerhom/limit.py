"""Limit diffusion dx = B dt + sqrt(A) dW and its backward Kolmogorov equation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .characteristics import OUT_PER_UNIT, TrajectoryEnsemble
from .effective import EffectiveModel
from .parallel import run_blocks
from .rng import RngStream


def psd_cholesky(A: np.ndarray, where=None, tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular L with L L^T = A for 2x2 PSD matrices (..., 2, 2).

    Singular matrices are allowed (zero pivots give zero columns).
    """
    a, b, d = A[..., 0, 0], 0.5 * (A[..., 0, 1] + A[..., 1, 0]), A[..., 1, 1]
    scale = np.maximum(np.abs(a) + np.abs(d), 1.0)
    bad = (a < -tol * scale) | (d < -tol * scale)
    l11 = np.sqrt(np.clip(a, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0, b / np.where(l11 > 0, l11, 1.0), 0.0)
    bad |= (l11 == 0) & (np.abs(b) > tol * scale)
    rem = d - l21**2
    bad |= rem < -1e-10 * scale
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0].tolist()
        loc = f" at {where[tuple(idx)] if where is not None else idx}"
        raise np.linalg.LinAlgError(f"Cholesky factor failed: diffusivity not PSD{loc}")
    L = np.zeros(A.shape)
    L[..., 0, 0] = l11
    L[..., 1, 0] = l21
    L[..., 1, 1] = np.sqrt(np.clip(rem, 0.0, None))
    return L


@dataclass(frozen=True)
class LimitSdeConfig:
    effective: EffectiveModel
    x0: tuple = (0.0, 0.0)
    T: float = 1.0
    dt: float = 1e-2
    s0: float = 0.0
    out_per_unit: int = OUT_PER_UNIT

    def __post_init__(self):
        if not 0 < self.dt <= 1e-2:
            raise ValueError("dt must lie in (0, 1e-2]")
        psd_cholesky(self.effective.A, where=self.effective.grid)

    def step(self) -> float:
        h = 1.0 / self.out_per_unit
        return h / math.ceil(h / self.dt)


def simulate_limit(cfg: LimitSdeConfig, n: int, rng: RngStream,
                   threads: int | None = None) -> TrajectoryEnsemble:
    """Euler-Maruyama ensemble on the same output grid as the eps ensembles."""
    eff = cfg.effective
    dt = cfg.step()
    stride = int(round(1.0 / (cfg.out_per_unit * dt)))
    n_out = int(round(cfg.T * cfg.out_per_unit))
    sq = math.sqrt(dt)

    def block(r, start, size):
        x = np.broadcast_to(np.asarray(cfg.x0, dtype=float), (size, 2)).copy()
        out = np.empty((size, n_out + 1, 2))
        out[:, 0] = x
        for k in range(n_out):
            dW = r.normal((stride, size, 2))
            for s in range(stride):
                L = psd_cholesky(eff.diffusivity(x), where=x)
                x = x + eff.drift(x) * dt + sq * np.einsum("pij,pj->pi", L, dW[s])
            out[:, k + 1] = x
        return out

    paths = np.concatenate(run_blocks(block, n, rng, threads=threads))
    t = cfg.s0 + np.arange(n_out + 1) / cfg.out_per_unit
    meta = {"kind": "limit", "dt": dt, "T": cfg.T, "x0": list(cfg.x0)}
    return TrajectoryEnsemble(t, paths, None, rng.lineage, eff.provenance.get("modes", ""), meta)


@dataclass
class BackwardPdeConfig:
    box: tuple              # (x_min, x_max, y_min, y_max)
    nx: int
    ny: int
    T: float
    u0: object              # callable on (..., 2) or array (nx, ny)
    dt: float | None = None
    t_out: tuple = ()

    def axes(self):
        x = np.linspace(self.box[0], self.box[1], self.nx)
        y = np.linspace(self.box[2], self.box[3], self.ny)
        return x, y


@dataclass
class PdeSolution:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray                     # times of the stored snapshots (descending from T)
    u: np.ndarray                     # (n_snap, nx, ny)
    dt: float
    meta: dict = field(default_factory=dict)

    def at(self, t: float) -> np.ndarray:
        return self.u[int(np.argmin(np.abs(self.t - t)))]

    def probe(self, pts, t: float = 0.0) -> np.ndarray:
        """Bilinear interpolation of the snapshot nearest to ``t``."""
        em = EffectiveModel(self.x, self.y, np.zeros((self.x.size, self.y.size, 2)),
                            np.zeros((self.x.size, self.y.size, 2, 2)), np.zeros(1), np.zeros(1))
        return em._interp(self.at(t), np.asarray(pts, dtype=float))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x1", "x2", "u"])
            for k, tk in enumerate(self.t):
                for i, xv in enumerate(self.x):
                    for j, yv in enumerate(self.y):
                        wr.writerow([repr(float(tk)), repr(float(xv)), repr(float(yv)),
                                     repr(float(self.u[k, i, j]))])


def cfl_limit(hx: float, hy: float, A: np.ndarray, B: np.ndarray) -> float:
    h = min(hx, hy)
    tr = float(np.max(A[..., 0, 0] + A[..., 1, 1]))
    bmax = float(np.max(np.abs(B)))
    lim = math.inf
    if tr > 0:
        lim = min(lim, h * h / (2.0 * tr))
    if bmax > 0:
        lim = min(lim, h / bmax)
    return lim


def solve_backward_pde(cfg: BackwardPdeConfig, effective: EffectiveModel) -> PdeSolution:
    """Explicit scheme for d_t u + B.grad u + (1/2) A : Hess u = 0, u(T) = u0.

    Drift is upwinded, second derivatives are centred (four-point stencil for
    the mixed term); zero-flux ghost values at the box boundary.
    """
    x, y = cfg.axes()
    hx, hy = x[1] - x[0], y[1] - y[0]
    pts = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)
    A = effective.diffusivity(pts)
    B = effective.drift(pts)
    lim = cfl_limit(hx, hy, A, B)
    dt = cfg.dt if cfg.dt is not None else 0.9 * lim
    if dt > lim:
        raise ValueError(f"CFL violated: dt={dt:.3e} > {lim:.3e}")
    nsteps = max(1, int(math.ceil(cfg.T / dt - 1e-9)))
    dt = cfg.T / nsteps
    u = np.array(cfg.u0(pts) if callable(cfg.u0) else cfg.u0, dtype=float)
    if u.shape != (cfg.nx, cfg.ny):
        raise ValueError("u0 must give an (nx, ny) array")
    want = sorted({float(t) for t in cfg.t_out} | {0.0, float(cfg.T)}, reverse=True)
    snaps, times = [], []
    a11, a12, a22 = A[..., 0, 0], 0.5 * (A[..., 0, 1] + A[..., 1, 0]), A[..., 1, 1]
    b1, b2 = B[..., 0], B[..., 1]

    def record(tnow, field_):
        while want and abs(want[0] - tnow) <= 0.5 * dt:
            snaps.append(field_.copy())
            times.append(want.pop(0))

    record(cfg.T, u)
    for n in range(nsteps):
        g = np.pad(u, 1, mode="edge")
        c = g[1:-1, 1:-1]
        xp, xm = g[2:, 1:-1], g[:-2, 1:-1]
        yp, ym = g[1:-1, 2:], g[1:-1, :-2]
        dxx = (xp - 2 * c + xm) / hx**2
        dyy = (yp - 2 * c + ym) / hy**2
        dxy = (g[2:, 2:] - g[2:, :-2] - g[:-2, 2:] + g[:-2, :-2]) / (4 * hx * hy)
        ux = np.where(b1 > 0, (xp - c) / hx, (c - xm) / hx)
        uy = np.where(b2 > 0, (yp - c) / hy, (c - ym) / hy)
        u = u + dt * (b1 * ux + b2 * uy + 0.5 * (a11 * dxx + 2 * a12 * dxy + a22 * dyy))
        record(cfg.T - (n + 1) * dt, u)
    return PdeSolution(x, y, np.array(times), np.array(snaps), dt,
                       {"nsteps": nsteps, "cfl_limit": lim})
