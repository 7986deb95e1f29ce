"""Diffusively scaled random characteristics

    dx/dt = (1/eps) W(t/eps^2, x/eps, x) + U(t/eps^2, x/eps, x)

integrated by Heun steps on a piecewise-frozen field, jointly with the
coefficient bank (advanced exactly in fast time dt/eps^2 after each step).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .bank import bank_init_stationary, bank_layout, noise_factors
from .field import ModeSet, scaled_velocity
from .parallel import run_blocks
from .profiles import encode_profiles
from .rng import RngStream

OUT_PER_UNIT = 64


@dataclass(frozen=True)
class EpsTrajectoryConfig:
    eps: float
    T: float
    substep_c: float = 0.1
    x0: tuple = (0.0, 0.0)
    s0: float = 0.0
    out_per_unit: int = OUT_PER_UNIT
    M: int = 33

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if not 0 < self.substep_c <= 0.1:
            raise ValueError("substep_c must lie in (0, 0.1]")
        if self.T <= 0:
            raise ValueError("T must be positive")

    def micro_dt(self, modes: ModeSet) -> float:
        """Largest step <= c eps^2 / (1 + max|k| amp_scale) dividing the output spacing."""
        raw = self.substep_c * self.eps**2 / (1.0 + kmax(modes) * amplitude_scale(modes))
        h = 1.0 / self.out_per_unit
        return h / math.ceil(h / raw)

    def grid(self) -> np.ndarray:
        n = int(round(self.T * self.out_per_unit))
        return self.s0 + np.arange(n + 1) / self.out_per_unit

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x0"] = list(self.x0)
        return d


def kmax(modes: ModeSet) -> float:
    return float(np.max(np.linalg.norm(modes.k, axis=1)))


def amplitude_scale(modes: ModeSet) -> float:
    """Two standard deviations of |(a, b)| at the largest sigma."""
    smax = np.array([p.bounds()[1] for p in modes.sigma])
    return 2.0 * math.sqrt(float(np.sum(smax**2)))


@dataclass
class TrajectoryEnsemble:
    t: np.ndarray                 # (n_t,)
    paths: np.ndarray             # (n_paths, n_t, 2)
    eps: float | None
    lineage: dict
    modes_fingerprint: str
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    def endpoints(self) -> np.ndarray:
        return self.paths[:, -1, :]

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t - t)))
        return self.paths[:, k, :]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["path_id", "t", "x1", "x2"])
            for p in range(self.n_paths):
                for k, tk in enumerate(self.t):
                    wr.writerow([p, repr(float(tk)), repr(float(self.paths[p, k, 0])),
                                 repr(float(self.paths[p, k, 1]))])

    def sidecar(self) -> dict:
        return {"eps": self.eps, "seed": self.lineage, "modes_fingerprint": self.modes_fingerprint,
                "n_paths": self.n_paths, "n_t": int(self.t.size), **self.meta}

    def write(self, stem) -> None:
        self.write_csv(f"{stem}.csv")
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class _Plan:
    """Static per-(cfg, modes) data fed to the kernel."""

    def __init__(self, cfg: EpsTrajectoryConfig, modes: ModeSet):
        self.cfg, self.modes = cfg, modes
        self.layout = bank_layout(modes, cfg.M)
        self.dt = cfg.micro_dt(modes)
        self.stride = int(round(1.0 / (cfg.out_per_unit * self.dt)))
        self.n_out = int(round(cfg.T * cfg.out_per_unit))
        dtf = self.dt / cfg.eps**2
        self.decay = np.ascontiguousarray(np.exp(-self.layout.nodes * dtf))
        self.L = np.ascontiguousarray(noise_factors(self.layout, dtf))
        self.acodes, self.aparams = encode_profiles(modes.alpha)
        self.scodes, self.sparams = encode_profiles(modes.sigma)
        self.k = np.ascontiguousarray(modes.k, dtype=float)
        lay = self.layout
        self.nodes = np.ascontiguousarray(lay.nodes)
        self.counts = np.ascontiguousarray(lay.counts)
        self.bary = np.ascontiguousarray(lay.bary)

    def iterate(self, rng: RngStream, size: int, sub: int):
        """Yield ``(x, Z, Y, status)`` every ``sub`` micro-steps (live arrays, do not keep).

        The noise stream is consumed step by step, so paths do not depend on
        ``sub`` as long as it divides the output stride.
        """
        if self.stride % sub:
            raise ValueError(f"sub={sub} must divide the output stride {self.stride}")
        r_init, r_steps = rng.split(2)
        bank = bank_init_stationary(self.modes, self.cfg.M, r_init, size=size, layout=self.layout)
        Z = np.ascontiguousarray(bank.Z)
        Y = np.ascontiguousarray(bank.Y)
        x = np.array(np.broadcast_to(np.asarray(self.cfg.x0, dtype=float), (size, 2)), order="C")
        status = np.zeros(size, dtype=np.int64)
        R = self.L.shape[2]
        yield x, Z, Y, status
        for _ in range(self.n_out * (self.stride // sub)):
            noise = r_steps.normal((sub, size, self.modes.N, 2, R))
            kernels.eps_chunk(x, Z, Y, self.nodes, self.counts, self.bary,
                              self.acodes, self.aparams, self.scodes, self.sparams,
                              self.k, self.cfg.eps, self.dt, self.decay, self.L, noise,
                              self.layout.track_y, status)
            yield x, Z, Y, status

    def run_block(self, rng: RngStream, size: int) -> tuple[np.ndarray, np.ndarray]:
        out = np.empty((size, self.n_out + 1, 2))
        for k, (x, _, _, status) in enumerate(self.iterate(rng, size, self.stride)):
            out[:, k] = x
        return out, status


def _blowup(status, where):
    if np.any(status):
        bad = np.flatnonzero(status)
        raise FloatingPointError(
            f"characteristics left |x| <= 1e6 on {bad.size} path(s) ({where}, first {bad[:5].tolist()})")


def integrate_eps_path(cfg: EpsTrajectoryConfig, modes: ModeSet, rng: RngStream) -> np.ndarray:
    """One path on the macro output grid, shape (n_t, 2)."""
    plan = _Plan(cfg, modes)
    out, status = plan.run_block(rng, 1)
    _blowup(status, "integrate_eps_path")
    return out[0]


def simulate_ensemble(cfg: EpsTrajectoryConfig, modes: ModeSet, n_paths: int,
                      master_seed, threads: int | None = None) -> TrajectoryEnsemble:
    """``n_paths`` independent paths; blocks of paths own split streams of the master seed."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rng = master_seed if isinstance(master_seed, RngStream) else RngStream(master_seed)
    plan = _Plan(cfg, modes)
    parts = run_blocks(lambda r, s, m: plan.run_block(r, m), n_paths, rng, threads=threads)
    paths = np.concatenate([p[0] for p in parts])
    _blowup(np.concatenate([p[1] for p in parts]), f"eps={cfg.eps}")
    meta = {"config": cfg.to_dict(), "micro_dt": plan.dt, "kind": "eps"}
    return TrajectoryEnsemble(cfg.grid(), paths, cfg.eps, rng.lineage, modes.fingerprint(), meta)


def heun_frozen(amp, amp_grad, x0, eps: float, T: float, dt: float, modes: ModeSet) -> np.ndarray:
    """Heun integration of the characteristics with amplitudes held fixed."""
    x = np.asarray(x0, dtype=float).copy()
    n = int(round(T / dt))
    for _ in range(n):
        v1 = scaled_velocity(amp, amp_grad, x, eps, modes)
        v2 = scaled_velocity(amp, amp_grad, x + dt * v1, eps, modes)
        x = x + 0.5 * dt * (v1 + v2)
    return x
