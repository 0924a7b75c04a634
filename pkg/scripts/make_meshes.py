#!/usr/bin/env python3
"""Write the generator meshes of a run config to .mesh files.

Usage: make_meshes.py CONFIG [OUTDIR]
"""
import argparse
from pathlib import Path

from eitrb.io import RunConfig
from eitrb.mesh import save_mesh


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("outdir", nargs="?", default="meshes")
    args = ap.parse_args()
    cfg = RunConfig.load(args.config)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for which in cfg.meshes:
        mesh = cfg.build_mesh(which)
        path = out / f"{which}.mesh"
        save_mesh(mesh, path)
        print(f"{path}: {mesh.n_nodes} nodes, {mesh.n_elements} elements, id {mesh.fingerprint()}")


if __name__ == "__main__":
    main()
