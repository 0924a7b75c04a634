#!/usr/bin/env python3
"""Time forward solves and Jacobians of the full and reduced engines on one config.

Reports the mean over ``--repeat`` evaluations at the initial guess.
"""
import argparse
import time

import numpy as np

from eitrb.forward import assemble_affine
from eitrb.inversion import FullEngine, ReducedEngine
from eitrb.io import RunConfig
from eitrb.mesh import assign_electrodes
from eitrb.rom import generate_snapshots, pod_basis, reduce_system
from eitrb.sampling import FieldPrior
from eitrb.sensitivity import jacobian_sigma


def timed(fn, repeat):
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t)
    return out, float(np.mean(ts))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/case1_desk.json")
    ap.add_argument("--k", type=int, nargs="+", default=[25, 50, 100, 200])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    cfg = RunConfig.load(args.config)
    mesh = cfg.build_mesh("coarse")
    sys_ = assemble_affine(mesh, assign_electrodes(mesh, cfg.electrode_descriptors()))
    P = cfg.current_patterns(sys_.n_electrodes)
    pr = cfg.prior
    prior = FieldPrior.build(mesh.nodes, pr.sigma0, pr.omega, pr.ell, pr.zeta0, pr.eta,
                             sys_.n_electrodes)
    lib = generate_snapshots(sys_, prior, pr.K, P, seed=cfg.seeds.snapshots, count=pr.count)
    s0, z0 = pr.sigma0, pr.zeta0

    full = FullEngine(sys_)
    ref, tf = timed(lambda: full.solve(s0, z0, P), args.repeat)
    _, tj = timed(lambda: jacobian_sigma(sys_, ref), args.repeat)
    print(f"N={sys_.n_nodes}  full: forward {tf * 1e3:.1f} ms  jacobian {tj * 1e3:.1f} ms")
    for k in args.k:
        if k + pr.oversampling > lib.Y.shape[1]:
            continue
        eng = ReducedEngine(reduce_system(sys_, pod_basis(lib, k, n_electrodes=sys_.n_electrodes)))
        sol, tr = timed(lambda: eng.solve(s0, z0, P), args.repeat)
        _, tjr = timed(lambda: jacobian_sigma(sys_, sol), args.repeat)
        err = np.linalg.norm(sol.U - ref.U) / np.linalg.norm(ref.U)
        print(f"k={k:4d}  reduced: forward {tr * 1e3:.1f} ms  jacobian {tjr * 1e3:.1f} ms  "
              f"fwd+jac ratio {(tr + tjr) / (tf + tj):.3f}  voltage error {err:.2e}")


if __name__ == "__main__":
    main()
