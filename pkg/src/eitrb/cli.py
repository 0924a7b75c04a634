"""Command-line entry point: simulate, build-rb, reconstruct, compare.

Exit codes: 0 success, 2 invalid input (config, mesh, basis, data), 3 the
reconstruction stopped without meeting the discrepancy level (the result is
still written).
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .forward import assemble_affine
from .inversion import DivergenceError, FullEngine, NoiseModel, ReducedEngine, outer_iterate
from .io import (ConfigError, RunConfig, load_field, mass_weighted_difference, read_json,
                 result_document, save_field, write_json, write_vtk)
from .mesh import ElectrodeError, MeshError, assign_electrodes
from .rom import (BasisFormatError, generate_snapshots, load_basis, pod_basis, reduce_system,
                  save_basis)
from .sampling import FieldPrior
from .simulator import Phantom, load_frame, simulate

log = logging.getLogger("eitrb")

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3


class InputError(ValueError):
    """Inconsistent inputs detected by a command (exit code 2)."""


def _system(cfg: RunConfig, which: str):
    mesh = cfg.build_mesh(which)
    layout = assign_electrodes(mesh, cfg.electrode_descriptors())
    return assemble_affine(mesh, layout)


def _outdir(cfg: RunConfig) -> Path:
    out = cfg.resolve(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig) -> int:
    cfg.require("meshes.fine", "electrodes", "phantom")
    try:
        phantom = Phantom.from_dict(cfg.phantom)
    except (TypeError, ValueError) as exc:
        raise cfg.error(str(exc), "phantom") from exc
    sysf = _system(cfg, "fine")
    ref_nodes = None
    if cfg.meshes.get("coarse") is not None:
        coarse = cfg.build_mesh("coarse")
        if coarse.fingerprint() == sysf.mesh.fingerprint():
            warnings.warn("simulation and reconstruction meshes are identical (inverse crime)")
        ref_nodes = coarse.n_nodes
    P = cfg.current_patterns(sysf.n_electrodes)
    frame = simulate(sysf, phantom, P, cfg.noise.fraction, seed=cfg.seeds.simulate,
                     reference_nodes=ref_nodes)
    path = _outdir(cfg) / "measurements.json"
    frame.save(path, config_hash=cfg.hash())
    print(f"wrote {path}: {frame.V.size} voltages, gamma={frame.gamma:.4g}")
    return EXIT_OK


def cmd_build_rb(cfg: RunConfig) -> int:
    cfg.require("meshes.coarse", "electrodes")
    pr = cfg.prior
    if pr.k >= pr.K:
        raise cfg.error(f"need K > k, got K={pr.K}, k={pr.k}", "prior.k")
    sysc = _system(cfg, "coarse")
    P = cfg.current_patterns(sysc.n_electrodes)
    cols = pr.K * P.shape[1] if pr.count == "draws" else pr.K
    if pr.k + pr.oversampling > cols:
        raise cfg.error(f"k + oversampling = {pr.k + pr.oversampling} exceeds {cols} snapshot "
                        "columns", "prior.k")
    prior = FieldPrior.build(sysc.mesh.nodes, pr.sigma0, pr.omega, pr.ell, pr.zeta0, pr.eta,
                             sysc.n_electrodes)
    t0 = time.perf_counter()
    lib = generate_snapshots(sysc, prior, pr.K, P, seed=cfg.seeds.snapshots, count=pr.count)
    basis = pod_basis(lib, pr.k, oversampling=pr.oversampling, power_iters=pr.power_iters,
                      seed=cfg.seeds.pod, n_electrodes=sysc.n_electrodes)
    basis.provenance.update({"config_hash": cfg.hash(), "seed": cfg.seeds.snapshots,
                             "mesh_id": sysc.mesh.fingerprint(), "skipped": lib.skipped,
                             "prior": {"sigma0": pr.sigma0, "omega": pr.omega, "ell": pr.ell,
                                       "zeta0": pr.zeta0, "eta": pr.eta, "K": pr.K,
                                       "count": pr.count}})
    path = _outdir(cfg) / "basis.rb"
    save_basis(basis, path)
    s = basis.singular_values
    print(f"wrote {path}: N={basis.n_nodes}, k={basis.k}, {lib.Y.shape[1]} snapshot columns, "
          f"{time.perf_counter() - t0:.1f} s")
    print(f"singular values: s_1={s[0]:.4g}  s_k={s[-1]:.4g}  s_k/s_1={s[-1] / s[0]:.3g}")
    if basis.rank_deficient:
        print("warning: snapshot matrix is rank deficient; basis truncated")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, data: str | None = None, vtk: bool = True) -> int:
    cfg.require("meshes.coarse", "electrodes")
    data_path = Path(data) if data else (cfg.resolve(cfg.measurements) if cfg.measurements else None)
    if data_path is None:
        raise cfg.error("missing (or pass --data)", "measurements")
    try:
        frame = load_frame(data_path)
    except (OSError, KeyError) as exc:
        raise InputError(f"cannot read measurements {data_path}: {exc}") from exc
    sysc = _system(cfg, "coarse")
    mesh = sysc.mesh
    P = cfg.current_patterns(sysc.n_electrodes)
    if frame.patterns.shape != P.shape or not np.allclose(frame.patterns, P, atol=1e-12):
        raise InputError(f"measurement patterns {frame.patterns.shape} do not match the "
                         f"configured patterns {P.shape}")
    if frame.provenance.get("mesh_id") == mesh.fingerprint():
        warnings.warn("measurements were simulated on the reconstruction mesh (inverse crime)")
    gamma = cfg.noise.gamma or frame.gamma
    noise = NoiseModel(gamma, frame.V.size)

    if cfg.engine == "reduced":
        basis = load_basis(cfg.resolve(cfg.basis))
        if basis.n_nodes != sysc.n_nodes:
            raise InputError(f"basis has {basis.n_nodes} rows but the mesh has {sysc.n_nodes} nodes")
        if basis.provenance.get("mesh_id", mesh.fingerprint()) != mesh.fingerprint():
            raise InputError("basis was built on a different mesh")
        engine = ReducedEngine(reduce_system(sysc, basis))
    else:
        engine = FullEngine(sysc)

    out = _outdir(cfg)
    status_code = EXIT_OK
    with open(out / "iterations.jsonl", "w") as logf:
        try:
            res = outer_iterate(sysc, engine, frame.V, P, noise, cfg.prior.sigma0, cfg.prior.zeta0,
                                T=cfg.tv.T, delta=cfg.tv.delta, max_outer=cfg.caps.max_outer,
                                max_inner=cfg.caps.max_inner, log_stream=logf)
        except DivergenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            res = exc.result
    if not res.converged:
        status_code = EXIT_NOT_CONVERGED

    h = cfg.hash()
    files = {"field": "sigma.txt", "log": "iterations.jsonl"}
    save_field(out / "sigma.txt", res.sigma, mesh, h, cfg.seeds.simulate)
    if vtk:
        write_vtk(out / "sigma.vtk", mesh, {"conductivity": res.sigma}, title=f"eitrb {h}")
        files["vtk"] = "sigma.vtk"
    timings = {"phases": res.timings, "iterations": res.iteration_timings}
    extra = {"measurements": {"path": data_path.name, "gamma": gamma,
                              "mesh_id": frame.provenance.get("mesh_id")}}
    doc = result_document(res.summary(), h, cfg.seeds.simulate, mesh, files, timings, extra)
    write_json(out / "result.json", doc)
    print(f"{res.engine} engine: {res.status} after {res.outer_iterations} outer iterations, "
          f"discrepancy {res.discrepancy:.4g} (level {res.epsilon:.4g}); wrote {out / 'result.json'}")
    return status_code


def _per_iteration(doc: dict, phases=("forward", "jacobian")) -> float:
    its = doc["timings"]["iterations"]
    if not its:
        return float("nan")
    return float(np.mean([sum(it.get(p, 0.0) for p in phases) for it in its]))


def compare_results(cfg: RunConfig, path_a, path_b) -> dict:
    a, b = read_json(path_a), read_json(path_b)
    ida, idb = a["mesh"]["mesh_id"], b["mesh"]["mesh_id"]
    if ida != idb:
        raise InputError(f"results live on different meshes ({ida} vs {idb})")
    mesh = cfg.build_mesh("coarse")
    if mesh.fingerprint() != ida:
        raise InputError("configured coarse mesh does not match the results' mesh")
    fa, _ = load_field(Path(path_a).parent / a["files"]["field"])
    fb, _ = load_field(Path(path_b).parent / b["files"]["field"])
    ra, rb = a["reconstruction"], b["reconstruction"]
    pa, pb = a["timings"]["phases"], b["timings"]["phases"]
    ratios = {k: (pb[k] / pa[k] if pa.get(k) else None) for k in sorted(set(pa) & set(pb))}
    fj_a, fj_b = _per_iteration(a), _per_iteration(b)
    return {
        "a": str(path_a), "b": str(path_b),
        "engines": [ra["engine"], rb["engine"]],
        "relative_l2": mass_weighted_difference(mesh, fa, fb),
        "phase_time_ratio": ratios,
        "forward_jacobian_per_iteration": [fj_a, fj_b],
        "forward_jacobian_ratio": fj_b / fj_a if fj_a > 0 else None,
        "discrepancy_history": [ra["discrepancy_history"], rb["discrepancy_history"]],
        "converged": [ra["converged"], rb["converged"]],
    }


def cmd_compare(cfg: RunConfig, path_a, path_b) -> int:
    rep = compare_results(cfg, path_a, path_b)
    out = _outdir(cfg)
    write_json(out / "compare.json", rep)
    ea, eb = rep["engines"]
    rows = [("relative L2 difference", f"{rep['relative_l2']:.4g}"),
            ("converged", f"{rep['converged'][0]} / {rep['converged'][1]}"),
            ("outer iterations", f"{len(rep['discrepancy_history'][0]) - 1} / "
                                 f"{len(rep['discrepancy_history'][1]) - 1}"),
            ("fwd+jac per iteration [s]", "%.4g / %.4g" % tuple(rep["forward_jacobian_per_iteration"]))]
    if rep["forward_jacobian_ratio"] is not None:
        rows.append(("fwd+jac ratio (b/a)", f"{rep['forward_jacobian_ratio']:.3f}"))
    for k, v in rep["phase_time_ratio"].items():
        if v is not None:
            rows.append((f"{k} time ratio (b/a)", f"{v:.3f}"))
    w = max(len(r[0]) for r in rows)
    print(f"{'':{w}}  {ea} vs {eb}")
    for name, val in rows:
        print(f"{name:{w}}  {val}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eitrb", description="3D EIT with a reduced-basis forward solver")
    ap.add_argument("--version", action="version", version=f"eitrb {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log outer iterations to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--engine", choices=("full", "reduced"), help="override the engine")
        p.add_argument("--seed", type=int, help="override the seed of this stage")
        p.add_argument("--out", help="output directory")
        return p

    common(sub.add_parser("simulate", help="simulate noisy electrode data on the fine mesh"))
    common(sub.add_parser("build-rb", help="offline snapshots and POD basis"))
    p = common(sub.add_parser("reconstruct", help="run the projected lagged-diffusivity solver"))
    p.add_argument("--data", help="measurement file (overrides the config)")
    p.add_argument("--no-vtk", action="store_true", help="skip the VTK export")
    p = common(sub.add_parser("compare", help="compare two reconstruction results"))
    p.add_argument("result_a")
    p.add_argument("result_b")
    return ap


_SEED_STAGE = {"simulate": "simulate", "build-rb": "snapshots", "reconstruct": "simulate",
               "compare": "simulate"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        cfg.with_overrides(engine=args.engine, seed=args.seed, seed_stage=_SEED_STAGE[args.command],
                           out=args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "build-rb":
            return cmd_build_rb(cfg)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, data=args.data, vtk=not args.no_vtk)
        return cmd_compare(cfg, args.result_a, args.result_b)
    except (ConfigError, InputError, MeshError, ElectrodeError, BasisFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
