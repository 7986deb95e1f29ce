"""Command line entry point: ``tracerhom <command> [--config F] [--seed S] [--out D] [--threads N]``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import harness
from .cell import corrector_chi, grad_chi_variational, probe_report, write_probe_reports
from .characteristics import simulate_ensemble
from .effective import EffectiveModel, tabulate_effective
from .field import reference_modes, sample_invariant
from .limit import BackwardPdeConfig, LimitSdeConfig, simulate_limit, solve_backward_pde
from .parallel import set_threads
from .rng import RngStream

COMMANDS = ("simulate", "corrector", "coeffs", "limit", "converge", "average", "scalar")


def _load(args) -> config_mod.ExperimentConfig:
    cfg = (config_mod.load(args.config) if args.config
           else config_mod.ExperimentConfig(modes=reference_modes()))
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["output_dir"] = args.out
    if args.n_paths is not None:
        kw["n_paths"] = args.n_paths
    if args.threads is not None:
        kw["solver"] = replace(cfg.solver, threads=args.threads)
        set_threads(args.threads)
    else:
        set_threads(cfg.solver.threads)
    return cfg.with_overrides(**kw) if kw else cfg


def _effective(cfg, path):
    if path:
        with open(path) as fh:
            return EffectiveModel.from_dict(json.load(fh))
    return harness.effective_model(cfg, RngStream(cfg.seed).split(4)[1])


def cmd_simulate(cfg, args):
    d = harness._outdir(cfg, "simulate", None)
    for eps, r in zip(cfg.eps_list, RngStream(cfg.seed).split(len(cfg.eps_list))):
        ens = simulate_ensemble(harness._eps_config(cfg, eps), cfg.modes, cfg.n_paths, r,
                                threads=cfg.solver.threads)
        ens.write(os.path.join(d, f"eps{harness._tag(eps)}"))
        print(f"eps={eps:g}: {ens.n_paths} paths, micro_dt={ens.meta['micro_dt']:.3e}")


def cmd_corrector(cfg, args):
    s = cfg.solver
    y = np.asarray(cfg.x0, dtype=float)
    r_amp, r_chi, r_grad = RngStream(cfg.seed).split(3)
    amps = sample_invariant(cfg.modes, y, r_amp, size=args.probes)
    reports = []
    for j, (amp, rc, rg) in enumerate(zip(amps, r_chi.split(len(amps)), r_grad.split(len(amps)))):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            chi = corrector_chi(None, amp, y, s.tol, s.n_coeff, rc, cfg.modes, s.dt_aux)
            grad = grad_chi_variational(None, amp, y, s.n_coeff, rg, cfg.modes, s.tol, s.dt_aux)
        reports.append(probe_report(chi, probe=j, amp=amp.tolist(), y=y.tolist()))
        reports.append(probe_report(grad, probe=j, amp=amp.tolist(), y=y.tolist()))
    d = harness._outdir(cfg, "corrector", None)
    write_probe_reports(os.path.join(d, "probes.json"), reports)
    print(f"wrote {len(reports)} probe reports to {d}")


def cmd_coeffs(cfg, args):
    s = cfg.solver
    em = tabulate_effective(s.grid_x, s.grid_y, s.n_coeff, RngStream(cfg.seed), cfg.modes,
                            s.tol, s.dt_aux, s.h_y, with_drift=not args.no_drift)
    em.provenance["config_hash"] = cfg.content_hash()
    d = harness._outdir(cfg, "coeffs", None)
    em.write_json(os.path.join(d, "effective.json"))
    em.write_csv(os.path.join(d, "effective.csv"))
    print(f"tabulated {em.xs.size}x{em.ys.size} grid to {d}")


def cmd_limit(cfg, args):
    s = cfg.solver
    eff = _effective(cfg, args.effective)
    d = harness._outdir(cfg, "limit", None)
    ens = simulate_limit(LimitSdeConfig(eff, tuple(cfg.x0), cfg.T, s.limit_dt), cfg.n_paths,
                         RngStream(cfg.seed).split(4)[2], threads=s.threads)
    ens.write(os.path.join(d, "limit"))
    hw = s.pde_half_width or 8.0
    box = (cfg.x0[0] - hw, cfg.x0[0] + hw, cfg.x0[1] - hw, cfg.x0[1] + hw)
    sol = solve_backward_pde(BackwardPdeConfig(box, s.pde_n, s.pde_n, cfg.T,
                                               harness.initial_condition(cfg.scalar.u0)), eff)
    sol.write_csv(os.path.join(d, "pde.csv"))
    harness.write_json({"pde": {"box": list(box), "n": s.pde_n, "dt": sol.dt, **sol.meta},
                        "sde": ens.sidecar(), "effective": eff.to_dict(),
                        "provenance": harness.provenance(cfg, RngStream(cfg.seed))},
                       os.path.join(d, "report.json"))
    print(f"limit ensemble and backward PDE written to {d}")


def cmd_converge(cfg, args):
    rep = harness.run_convergence(cfg, _effective(cfg, args.effective) if args.effective else None)
    for r in rep.per_eps:
        print(f"eps={r['eps']:g}  cov_rel_err={r.get('cov_rel_err', float('nan')):.4f}  "
              f"sliced_w1={r.get('sliced_w1', float('nan')):.4f} +- {r.get('sliced_w1_se', float('nan')):.4f}")
    print("flags:", rep.flags)


def cmd_average(cfg, args):
    rep = harness.run_averaging_check(cfg, args.probe)
    for r in rep["per_eps"]:
        print(f"eps={r['eps']:g}  median sup-diff={r['median']:.4e}  q90={r['q90']:.4e}")


def cmd_scalar(cfg, args):
    rep = harness.run_passive_scalar(cfg, effective=_effective(cfg, args.effective)
                                     if args.effective else None)
    for r in rep["per_eps"]:
        print(f"eps={r['eps']:g}  w1={r['w1']:.4e} +- {r['w1_se']:.4e}  "
              f"max|E u_eps - ubar|={r['max_abs_err_rel']:.4f}")
    print("flags:", rep["flags"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tracerhom", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML file with [modes], [experiment], [solver]")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads")
        sp.add_argument("--n-paths", type=int, dest="n_paths", help="override n_paths")
        if name in ("limit", "converge", "scalar"):
            sp.add_argument("--effective", help="effective.json from `coeffs`")
        if name == "coeffs":
            sp.add_argument("--no-drift", action="store_true")
        if name == "corrector":
            sp.add_argument("--probes", type=int, default=5)
        if name == "average":
            sp.add_argument("--probe", choices=sorted(harness.PROBES), default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (OSError, ValueError) as exc:
        print(f"tracerhom: bad configuration: {exc}", file=sys.stderr)
        return 2
    globals()[f"cmd_{args.command}"](cfg, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
