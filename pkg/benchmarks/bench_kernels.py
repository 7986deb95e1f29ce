"""Wall time of the compiled and numpy kernels on the same workloads.

    python benchmarks/bench_kernels.py [--paths 512] [--repeat 3]

Both backends consume identical noise, so the printed max difference checks
that they agree while being timed.
"""
import argparse
import time

import numpy as np

from tracerhom import kernels
from tracerhom.bank import bank_init_stationary
from tracerhom.cell import AuxParams, propagate
from tracerhom.characteristics import EpsTrajectoryConfig, _Plan
from tracerhom.field import ModeSet, reference_modes
from tracerhom.profiles import Constant, LogisticRidge
from tracerhom.rng import RngStream


def ridge():
    return ModeSet([(1, 0), (0, 1), (1, 1)],
                   (LogisticRidge(0.6, 1.6, (0.0, 2.0)), Constant(1.0), Constant(1.0)),
                   (Constant(0.5),) * 3, 0.5, 0.25)


def eps_workload(modes, P):
    plan = _Plan(EpsTrajectoryConfig(eps=0.2, T=1 / 64), modes)
    r = RngStream(1)
    bank = bank_init_stationary(modes, 33, r, size=P, layout=plan.layout)
    noise = r.normal((plan.stride, P, modes.N, 2, plan.L.shape[2]))

    def run(name):
        x = np.zeros((P, 2))
        Z, Y = bank.Z.copy(), bank.Y.copy()
        st = np.zeros(P, dtype=np.int64)
        kernels.eps_chunk(x, Z, Y, plan.nodes, plan.counts, plan.bary, plan.acodes, plan.aparams,
                          plan.scodes, plan.sparams, plan.k, 0.2, plan.dt, plan.decay, plan.L,
                          noise, plan.layout.track_y, st, backend=name)
        return x
    return f"characteristics ({plan.stride} Heun steps, {modes.N} modes)", run


def aux_workload(modes, P):
    prm = AuxParams.at(modes, np.zeros(2))
    amp0 = RngStream(2).normal((P, 2 * modes.N)) * 0.5

    def run(name):
        kernels.use(name)
        return propagate(prm, amp0, 200, 0.01, RngStream(3), chi=True, grad=True).grad
    return "tilde dynamics (200 steps, corrector + gradient)", run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    have = kernels.available()
    print(f"backends: {have}; paths per call: {args.paths}")
    if "compiled" not in have:
        print("compiled extension not built; only the numpy backend is timed")
    start = kernels.backend()
    for label, run in (eps_workload(ridge(), args.paths), aux_workload(reference_modes(), args.paths)):
        times, outs = {}, {}
        for name in have:
            outs[name] = run(name)                       # warm up
            t = []
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                run(name)
                t.append(time.perf_counter() - t0)
            times[name] = min(t)
        line = "  ".join(f"{n}={times[n] * 1e3:8.1f} ms" for n in have)
        if len(have) == 2:
            diff = float(np.max(np.abs(outs["compiled"] - outs["python"])))
            line += f"  speedup={times['python'] / times['compiled']:5.1f}x  max diff={diff:.1e}"
        print(f"{label:52s} {line}")
    kernels.use(start)


if __name__ == "__main__":
    main()
