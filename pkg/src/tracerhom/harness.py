"""Experiments: eps -> 0 convergence, averaging check, passive scalar.

Every experiment derives all of its randomness from ``cfg.seed`` through a
fixed split tree and writes sorted JSON plus CSV with ``repr`` floats, so a
re-run with the same configuration reproduces its output files byte for byte.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__, kernels
from .characteristics import EpsTrajectoryConfig, _blowup, _Plan, simulate_ensemble
from .config import ExperimentConfig
from .effective import EffectiveModel, estimate_A, tabulate_effective
from .field import rotate, w_map
from .galerkin import gauss_hermite_expectation
from .limit import BackwardPdeConfig, LimitSdeConfig, simulate_limit, solve_backward_pde
from .metrics import N_PROJ, bootstrap_se, moments, sliced_w1, w1
from .parallel import run_blocks
from .rng import RngStream


# ----------------------------------------------------------------------------- output

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _outdir(cfg: ExperimentConfig, name: str, out) -> str:
    d = os.path.join(out if out is not None else cfg.output_dir, name)
    os.makedirs(d, exist_ok=True)
    return d


def _tag(eps: float) -> str:
    return f"{eps:g}"


def provenance(cfg: ExperimentConfig, rng: RngStream, **extra) -> dict:
    s = cfg.solver
    return {
        "modes_fingerprint": cfg.modes.fingerprint(),
        "config_hash": cfg.content_hash(),
        "seed": rng.lineage,
        "estimator": {"tol": s.tol, "dt_aux": s.dt_aux, "n_coeff": s.n_coeff, "h_y": s.h_y,
                      "M": s.M, "substep_c": s.substep_c, "limit_dt": s.limit_dt,
                      "n_proj": N_PROJ, "n_boot": s.n_boot},
        "backend": kernels.backend(),
        "version": __version__,
        **extra,
    }


# ----------------------------------------------------------------------------- shared pieces

def effective_model(cfg: ExperimentConfig, rng: RngStream) -> EffectiveModel:
    """Constant A at x0 for stationary modes, otherwise a table on the solver grid."""
    s = cfg.solver
    if cfg.modes.is_stationary:
        est = estimate_A(np.asarray(cfg.x0, dtype=float), s.n_coeff, rng, cfg.modes, s.tol, s.dt_aux)
        prov = {"modes": cfg.modes.fingerprint(), "n": s.n_coeff, "tol": s.tol,
                "dt": s.dt_aux, "A_se": est.std_err.tolist(), "projection": est.projection}
        em = EffectiveModel.constant(est.A, provenance=prov)
        em.A_se[0, 0] = est.std_err
        return em
    return tabulate_effective(s.grid_x, s.grid_y, s.n_coeff, rng, cfg.modes, s.tol,
                              s.dt_aux, s.h_y, with_drift=True)


def _streams(cfg: ExperimentConfig):
    master = RngStream(cfg.seed)
    r_eff, r_lim, r_eps, r_boot = master.split(4)
    return master, r_eff, r_lim, r_eps.split(len(cfg.eps_list)), r_boot


def _eps_config(cfg: ExperimentConfig, eps: float, x0=None) -> EpsTrajectoryConfig:
    return EpsTrajectoryConfig(eps=eps, T=cfg.T, substep_c=cfg.solver.substep_c,
                               x0=tuple(cfg.x0 if x0 is None else x0), M=cfg.solver.M)


def _slack_monotone(vals, ses) -> bool:
    """Non-increasing up to one standard error of each successive difference."""
    return all(b <= a + math.hypot(sa, sb)
               for a, b, sa, sb in zip(vals, vals[1:], ses, ses[1:]))


def _rel_err(C, R) -> float:
    return float(np.linalg.norm(C - R) / np.linalg.norm(R))


# ----------------------------------------------------------------------------- convergence

@dataclass
class ConvergenceReport:
    eps: list
    per_eps: list
    limit: dict
    flags: dict
    provenance: dict
    effective: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "per_eps": self.per_eps, "limit": self.limit,
                "flags": self.flags, "provenance": self.provenance, "effective": self.effective}

    def value(self, key: str) -> list:
        return [row[key] for row in self.per_eps]


def run_convergence(cfg: ExperimentConfig, effective: EffectiveModel | None = None,
                    out: str | None = None, write: bool = True) -> ConvergenceReport:
    """Endpoint laws and covariance curves of x_eps against the limit diffusion."""
    s = cfg.solver
    master, r_eff, r_lim, r_eps, r_boot = _streams(cfg)
    eff = effective if effective is not None else effective_model(cfg, r_eff)
    n_lim = s.limit_factor * cfg.n_paths
    lim = simulate_limit(LimitSdeConfig(eff, tuple(cfg.x0), cfg.T, s.limit_dt), n_lim, r_lim,
                         threads=s.threads)
    XL = lim.endpoints()
    constant = eff.A.shape[:2] == (1, 1) and not np.any(eff.B)
    AT = eff.A[0, 0] * cfg.T if constant else None
    t_curve = cfg.T * np.arange(1, s.n_curve + 1) / s.n_curve
    half = XL.shape[0] // 2
    limit_info = {"n_paths": n_lim, "moments": moments(XL),
                  "split_half_sliced_w1": sliced_w1(XL[:half], XL[half:]),
                  "A": eff.A[0, 0] if constant else None}
    boots = r_boot.split(len(cfg.eps_list))
    rows, curves = [], []
    for eps, r, rb in zip(cfg.eps_list, r_eps, boots):
        ens = simulate_ensemble(_eps_config(cfg, eps), cfg.modes, cfg.n_paths, r, threads=s.threads)
        X = ens.endpoints()
        row = {"eps": eps, "n_paths": ens.n_paths, "micro_dt": ens.meta["micro_dt"]}
        if "moments" in cfg.metrics:
            mom = moments(X)
            CL = np.cov(XL.T)
            row.update(moments=mom, cov_rel_err_limit=_rel_err(np.cov(X.T), CL),
                       mean_diff_limit=(X.mean(0) - XL.mean(0)).tolist())
            if AT is not None:
                rb1, rb = rb.split(2)
                row["cov_rel_err"] = _rel_err(np.cov(X.T), AT)
                row["cov_rel_err_se"] = bootstrap_se(lambda a, _: _rel_err(np.cov(a.T), AT),
                                                     X, X[:1], rb1, s.n_boot)
        if "sliced_wasserstein" in cfg.metrics:
            row["sliced_w1"] = sliced_w1(X, XL)
            row["sliced_w1_se"] = bootstrap_se(sliced_w1, X, XL, rb, s.n_boot)
        if "covariance_curve" in cfg.metrics:
            pts = []
            for t in t_curve:
                C = np.cov(ens.at(t).T)
                CLt = np.cov(lim.at(t).T)
                ref = eff.A[0, 0] * t if AT is not None else CLt
                pts.append({"t": float(t), "cov": C.tolist(), "cov_limit": CLt.tolist(),
                            "rel_err": _rel_err(C, ref)})
                curves.append([eps, float(t), C[0, 0], C[0, 1], C[1, 1],
                               CLt[0, 0], CLt[0, 1], CLt[1, 1]])
            row["covariance_curve"] = pts
        rows.append(row)
        if write:
            d = _outdir(cfg, "converge", out)
            write_rows(os.path.join(d, f"endpoints_eps{_tag(eps)}.csv"), ["path_id", "x1", "x2"],
                       ([i, float(p[0]), float(p[1])] for i, p in enumerate(X)))

    flags = {}
    if rows and "sliced_w1" in rows[0]:
        flags["sliced_w1_monotone"] = _slack_monotone([r["sliced_w1"] for r in rows],
                                                      [r["sliced_w1_se"] for r in rows])
    if rows and "cov_rel_err" in rows[0]:
        flags["cov_rel_err_monotone"] = _slack_monotone([r["cov_rel_err"] for r in rows],
                                                        [r["cov_rel_err_se"] for r in rows])
    prov = provenance(cfg, master, n_limit=n_lim)
    rep = ConvergenceReport(list(cfg.eps_list), rows, limit_info, flags, prov, eff.to_dict())
    if write:
        d = _outdir(cfg, "converge", out)
        write_json(rep.to_dict(), os.path.join(d, "report.json"))
        eff.write_json(os.path.join(d, "effective.json"))
        write_rows(os.path.join(d, "limit_endpoints.csv"), ["path_id", "x1", "x2"],
                   ([i, float(p[0]), float(p[1])] for i, p in enumerate(XL)))
        met = []
        for r in rows:
            m = r.get("moments", {"mean": [math.nan] * 2, "cov": [[math.nan] * 2] * 2})
            met.append([r["eps"], m["mean"][0], m["mean"][1], m["cov"][0][0], m["cov"][0][1],
                        m["cov"][1][1], r.get("cov_rel_err", math.nan),
                        r.get("cov_rel_err_se", math.nan), r.get("sliced_w1", math.nan),
                        r.get("sliced_w1_se", math.nan)])
        write_rows(os.path.join(d, "metrics.csv"),
                   ["eps", "mean1", "mean2", "C11", "C12", "C22", "cov_rel_err",
                    "cov_rel_err_se", "sliced_w1", "sliced_w1_se"], met)
        if curves:
            write_rows(os.path.join(d, "covariance_curve.csv"),
                       ["eps", "t", "C11", "C12", "C22", "L11", "L12", "L22"], curves)
    return rep


# ----------------------------------------------------------------------------- averaging

@dataclass(frozen=True)
class Probe:
    """A test function F(a, y), polynomial in the amplitudes.

    ``fn(amp (P, 2N), y (P, 2), modes)`` returns (P,).  ``amp_free`` marks
    functions that ignore the amplitudes, whose average is the function itself.
    """

    name: str
    fn: object
    amp_free: bool = False

    def average(self, y: np.ndarray, modes) -> np.ndarray:
        y = np.atleast_2d(y)
        if self.amp_free:
            return self.fn(np.zeros((y.shape[0], 2 * modes.N)), y, modes)
        std = np.tile(modes.sigma_at(y), 2)                  # (P, 2N)
        out = np.empty(y.shape[0])
        for p in range(y.shape[0]):
            out[p] = gauss_hermite_expectation(
                lambda u: self.fn(u, np.broadcast_to(y[p], (u.shape[0], 2)), modes), std[p], 3)
        return out


def _a1sq(amp, y, modes):
    return amp[:, 0] ** 2


def _wq(q):
    return lambda amp, y, modes: w_map(amp, modes)[:, q]


def _energy(amp, y, modes):
    return np.sum(amp**2, axis=1)


def _yfun(amp, y, modes):
    return 1.0 + y[:, 0] ** 2 + 0.5 * y[:, 1]


PROBES = {
    "a1sq": Probe("a1sq", _a1sq),
    "w1": Probe("w1", _wq(0)),
    "w2": Probe("w2", _wq(1)),
    "energy": Probe("energy", _energy),
    "y_only": Probe("y_only", _yfun, amp_free=True),
}


def _largest_divisor(n: int, cap: int) -> int:
    return max(d for d in range(1, min(n, cap) + 1) if n % d == 0)


def averaging_paths(cfg: ExperimentConfig, eps: float, probe: Probe, n: int, rng: RngStream,
                    sub: int | None = None):
    """Running integrals of F along the Lagrangian-frame amplitudes and of F-bar along x_eps.

    Returns (t (n_t,), I_eps (n, n_t), I_bar (n, n_t)) sampled every ``sub``
    micro-steps and integrated by the trapezoid rule.
    """
    from .bank import CoefficientBank, bank_eval

    plan = _Plan(_eps_config(cfg, eps), cfg.modes)
    sub = _largest_divisor(plan.stride, sub or cfg.averaging.sub)
    h = sub * plan.dt
    const_bar = None
    if cfg.modes.is_stationary and not probe.amp_free:
        # the amplitude law does not move with y, so F-bar is one number
        const_bar = float(probe.average(np.asarray(cfg.x0, dtype=float)[None], cfg.modes)[0])

    def block(r, start, size):
        vals, bars = [], []
        for x, Z, Y, status in plan.iterate(r, size, sub):
            bank = CoefficientBank(plan.layout, Z, Y)
            amp, _ = bank_eval(bank, cfg.modes, x)
            til = rotate(amp, x / eps, cfg.modes)
            vals.append(probe.fn(til, x, cfg.modes))
            bars.append(np.full(size, const_bar) if const_bar is not None
                        else probe.average(x, cfg.modes))
        _blowup(status, f"averaging eps={eps}")
        f, g = np.array(vals).T, np.array(bars).T
        zero = np.zeros((size, 1))
        If = np.concatenate([zero, np.cumsum(0.5 * h * (f[:, 1:] + f[:, :-1]), axis=1)], axis=1)
        Ig = np.concatenate([zero, np.cumsum(0.5 * h * (g[:, 1:] + g[:, :-1]), axis=1)], axis=1)
        return If, Ig

    parts = run_blocks(block, n, rng, threads=cfg.solver.threads)
    I_eps = np.concatenate([p[0] for p in parts])
    I_bar = np.concatenate([p[1] for p in parts])
    t = h * np.arange(I_eps.shape[1])
    return t, I_eps, I_bar


def run_averaging_check(cfg: ExperimentConfig, F: str | Probe | None = None,
                        out: str | None = None, write: bool = True) -> dict:
    """sup_t |int_0^t F(a_eps) ds - int_0^t F-bar(x_eps) ds| per path, summarised per eps."""
    probe = F if isinstance(F, Probe) else PROBES[F or cfg.averaging.probe]
    master = RngStream(cfg.seed)
    streams = master.split(len(cfg.eps_list))
    n = cfg.averaging.n_paths
    rows, sups = [], []
    for eps, r in zip(cfg.eps_list, streams):
        t, Ie, Ib = averaging_paths(cfg, eps, probe, n, r)
        sup = np.max(np.abs(Ie - Ib), axis=1)
        q = np.quantile(sup, [0.1, 0.5, 0.9])
        rows.append({"eps": eps, "n_paths": n, "dt_sample": float(t[1] - t[0]),
                     "median": float(q[1]), "q10": float(q[0]), "q90": float(q[2]),
                     "mean": float(sup.mean()), "max": float(sup.max()),
                     "mean_se": float(sup.std(ddof=1) / math.sqrt(n)),
                     "sup_abs_integral": float(np.max(np.abs(Ie))),
                     "sup_abs_average_integral": float(np.max(np.abs(Ib)))})
        sups.append(sup)
    med = [r["median"] for r in rows]
    rep = {"probe": probe.name, "per_eps": rows,
           "median_ratio_first_last": med[0] / med[-1] if med[-1] > 0 else math.inf,
           "provenance": provenance(cfg, master, n_paths=n)}
    if write:
        d = _outdir(cfg, "average", out)
        write_json(rep, os.path.join(d, f"report_{probe.name}.json"))
        write_rows(os.path.join(d, f"sup_diff_{probe.name}.csv"), ["eps", "path_id", "sup_diff"],
                   ([eps, i, float(v)] for eps, s in zip(cfg.eps_list, sups)
                    for i, v in enumerate(s)))
    return rep


# ----------------------------------------------------------------------------- passive scalar

def initial_condition(spec: dict):
    """``u0`` from a library spec: bump, tanh front or constant."""
    kind = spec.get("kind", "bump")
    if kind == "bump":
        c = np.asarray(spec.get("center", (0.0, 0.0)), dtype=float)
        w = float(spec.get("width", 1.0))
        amp = float(spec.get("amplitude", 1.0))
        return lambda x: amp * np.exp(-np.sum((np.asarray(x) - c) ** 2, axis=-1) / (2 * w * w))
    if kind == "tanh":
        nrm = np.asarray(spec.get("normal", (1.0, 0.0)), dtype=float)
        nrm = nrm / np.linalg.norm(nrm)
        off = float(spec.get("offset", 0.0))
        w = float(spec.get("width", 1.0))
        return lambda x: 0.5 * (1.0 + np.tanh((np.asarray(x) @ nrm - off) / w))
    if kind == "constant":
        v = float(spec.get("value", 1.0))
        return lambda x: np.full(np.shape(x)[:-1], v)
    raise ValueError(f"unknown initial condition kind {kind!r}")


def probe_points(cfg: ExperimentConfig) -> np.ndarray:
    g = cfg.scalar.probe_spacing * np.array([-1.0, 0.0, 1.0])
    return np.array([[cfg.x0[0] + a, cfg.x0[1] + b] for a in g for b in g])


def _sup_norm(u0, box) -> float:
    xs = np.linspace(box[0], box[1], 201)
    ys = np.linspace(box[2], box[3], 201)
    return float(np.max(np.abs(u0(np.stack(np.meshgrid(xs, ys, indexing="ij"), -1)))))


def run_passive_scalar(cfg: ExperimentConfig, u0: dict | None = None,
                       effective: EffectiveModel | None = None,
                       out: str | None = None, write: bool = True) -> dict:
    """Law of u_eps(0, x) = u0(x_eps(T; 0, x)) against the limit, and E u_eps against the PDE.

    With stationary modes the eps-field is statistically homogeneous, so the
    displacement x_eps(T; 0, x) - x has one law for every x and a single
    ensemble serves all probe points; otherwise every probe gets its own.
    """
    s = cfg.solver
    spec = dict(u0 if u0 is not None else cfg.scalar.u0)
    f = initial_condition(spec)
    master, r_eff, r_lim, r_eps, r_boot = _streams(cfg)
    eff = effective if effective is not None else effective_model(cfg, r_eff)
    P = probe_points(cfg)
    homogeneous = cfg.modes.is_stationary and eff.A.shape[:2] == (1, 1)

    def values(simulate, r, n):
        if homogeneous:
            X = simulate(tuple(cfg.x0), r, n)
            D = X - np.asarray(cfg.x0)
            return f(P[None, :, :] + D[:, None, :])
        cols = [f(simulate(tuple(p), rp, n)) for p, rp in zip(P, r.split(len(P)))]
        return np.stack(cols, axis=1)

    def lim_sim(x0, r, n):
        return simulate_limit(LimitSdeConfig(eff, x0, cfg.T, s.limit_dt), n, r,
                              threads=s.threads).endpoints()

    n_lim = s.limit_factor * cfg.n_paths
    UL = values(lim_sim, r_lim, n_lim)

    # backward PDE on a box wide enough for the probes and the spread of the law
    spread = 6.0 * math.sqrt(float(np.max(np.trace(eff.A, axis1=-2, axis2=-1))) * cfg.T)
    hw = s.pde_half_width or (np.max(np.abs(P - np.asarray(cfg.x0))) + spread
                              + 3.0 * float(spec.get("width", 1.0)))
    box = (cfg.x0[0] - hw, cfg.x0[0] + hw, cfg.x0[1] - hw, cfg.x0[1] + hw)
    sol = solve_backward_pde(BackwardPdeConfig(box, s.pde_n, s.pde_n, cfg.T, f), eff)
    ubar = sol.probe(P, 0.0)
    scale = max(_sup_norm(f, box), 1e-300)

    def w1_mean(A, B):
        return float(np.mean([w1(A[:, j], B[:, j]) for j in range(A.shape[1])]))

    rows, table = [], []
    boots = r_boot.split(len(cfg.eps_list))
    for eps, r, rb in zip(cfg.eps_list, r_eps, boots):
        def eps_sim(x0, rr, n, eps=eps):
            return simulate_ensemble(_eps_config(cfg, eps, x0), cfg.modes, n, rr,
                                     threads=s.threads).endpoints()
        U = values(eps_sim, r, cfg.n_paths)
        mean = U.mean(axis=0)
        se = U.std(axis=0, ddof=1) / math.sqrt(U.shape[0])
        err = np.abs(mean - ubar) / scale
        wv = w1_mean(U, UL)
        wse = bootstrap_se(w1_mean, U, UL, rb, s.n_boot)
        rows.append({"eps": eps, "w1": wv, "w1_se": wse, "mean_u": mean.tolist(),
                     "mean_u_se": se.tolist(), "abs_err_rel": err.tolist(),
                     "max_abs_err_rel": float(err.max())})
        for j, p in enumerate(P):
            table.append([eps, j, 0.0, float(p[0]), float(p[1]), float(mean[j]), float(se[j]),
                          float(ubar[j]), float(UL[:, j].mean()), float(err[j])])
    rep = {"u0": spec, "probes": P.tolist(), "ubar": ubar.tolist(),
           "limit_mean_u": UL.mean(axis=0).tolist(), "scale": scale, "homogeneous": homogeneous,
           "pde": {"box": list(box), "n": s.pde_n, "dt": sol.dt, **sol.meta},
           "per_eps": rows,
           "flags": {"w1_monotone": _slack_monotone([r["w1"] for r in rows],
                                                    [r["w1_se"] for r in rows])},
           "provenance": provenance(cfg, master, n_limit=n_lim)}
    if write:
        d = _outdir(cfg, "scalar", out)
        write_json(rep, os.path.join(d, "report.json"))
        write_rows(os.path.join(d, "probes.csv"),
                   ["eps", "probe_id", "t", "x1", "x2", "mean_u", "mean_u_se", "ubar",
                    "limit_mean_u", "abs_err_rel"], table)
    return rep
