"""Experiment configuration: TOML with sections [modes], [experiment], [solver].

Example::

    [modes]
    k = [[1, 0], [0, 1], [1, 1]]
    alpha = 1.0                       # or a list of per-mode profiles
    sigma = 0.5
    gamma0 = 0.5
    sigma_star = 0.25

    [experiment]
    eps_list = [0.4, 0.2, 0.1]
    T = 2.0
    n_paths = 10000
    metrics = ["moments", "sliced_wasserstein", "covariance_curve"]
    seed = 20240601
    output_dir = "out"

    [solver]
    substep_c = 0.1
    n_coeff = 10000

Profiles are written inline, e.g.
``alpha = [{kind = "logistic", lo = 0.6, hi = 1.6, v = [0, 2]}, 1.0, 1.0]``.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .field import ModeSet, reference_modes

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METRICS = ("moments", "sliced_wasserstein", "covariance_curve")


@dataclass(frozen=True)
class SolverConfig:
    substep_c: float = 0.1
    M: int = 33
    tol: float = 1e-3
    dt_aux: float = 1e-2
    n_coeff: int = 10000
    h_y: float = 1e-2
    grid_x: tuple = (0.0,)
    grid_y: tuple = (0.0,)
    limit_dt: float = 1e-2
    limit_factor: int = 4
    pde_n: int = 121
    pde_half_width: float = 0.0
    n_boot: int = 50
    n_curve: int = 8
    threads: int = 1


@dataclass(frozen=True)
class ScalarConfig:
    u0: dict = field(default_factory=lambda: {"kind": "bump", "center": [0.0, 0.0], "width": 1.0})
    probe_spacing: float = 0.5


@dataclass(frozen=True)
class AveragingConfig:
    probe: str = "a1sq"
    n_paths: int = 400
    sub: int = 4


@dataclass(frozen=True)
class ExperimentConfig:
    modes: ModeSet
    eps_list: tuple = (0.4, 0.3, 0.2, 0.15, 0.1)
    T: float = 2.0
    n_paths: int = 10000
    metrics: tuple = METRICS
    seed: int = 0
    output_dir: str = "out"
    x0: tuple = (0.0, 0.0)
    solver: SolverConfig = SolverConfig()
    scalar: ScalarConfig = ScalarConfig()
    averaging: AveragingConfig = AveragingConfig()

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        object.__setattr__(self, "eps_list", eps)
        if not eps or any(not 0 < e <= 1 for e in eps):
            raise ValueError("eps_list entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        if self.n_paths < 100:
            raise ValueError("n_paths must be >= 100")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ValueError(f"unknown metrics {sorted(bad)}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["modes"] = self.modes.to_dict()
        for key in ("solver", "scalar", "averaging"):
            d[key] = asdict(d[key])
        d["eps_list"] = list(self.eps_list)
        d["metrics"] = list(self.metrics)
        d["x0"] = list(self.x0)
        return json.loads(json.dumps(d))

    def content_hash(self) -> str:
        """SHA-256 of the canonical JSON form, without output directory and thread count."""
        d = self.to_dict()
        d.pop("output_dir")
        d["solver"].pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _sub(cls, d: dict | None):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    for k, v in d.items():
        if isinstance(v, list) and k not in ("u0",):
            d[k] = tuple(v)
    return cls(**d)


def from_dict(d: dict) -> ExperimentConfig:
    modes = ModeSet.from_dict(d["modes"]) if "modes" in d else reference_modes()
    exp = dict(d.get("experiment", {}))
    solver = _sub(SolverConfig, d.get("solver"))
    scalar = _sub(ScalarConfig, d.get("scalar"))
    averaging = _sub(AveragingConfig, d.get("averaging"))
    for key in ("eps_list", "metrics", "x0"):
        if key in exp:
            exp[key] = tuple(exp[key])
    known = {f.name for f in fields(ExperimentConfig)} - {"modes", "solver", "scalar", "averaging"}
    unknown = set(exp) - known
    if unknown:
        raise ValueError(f"unknown [experiment] keys: {sorted(unknown)}")
    return ExperimentConfig(modes=modes, solver=solver, scalar=scalar, averaging=averaging, **exp)


def load(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return from_dict(tomllib.load(fh))


def loads(text: str) -> ExperimentConfig:
    return from_dict(tomllib.loads(text))
