import math
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from eitrb.forward import assemble_affine, current_patterns, solve_forward
from eitrb.io import RunConfig
from eitrb.mesh import assign_electrodes
from eitrb.meshgen import (ball_axis_electrodes, ball_mesh, cylinder_mesh,
                           cylinder_side_electrodes)

ROOT = Path(__file__).resolve().parents[1]
CASE1 = ROOT / "configs" / "case1_desk.json"

# acceptance lines collected during the session, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def small_cylinder_system(n_rings=3, n_outer=16, n_layers=8):
    """Cylinder with 8 rectangular electrodes in two rings of four."""
    mesh = cylinder_mesh(n_rings, n_outer, n_layers)
    seg = 2 * math.pi / n_outer
    desc = (cylinder_side_electrodes(4, [0.25], half_angle=seg, half_height=0.125, offset=0.0)
            + cylinder_side_electrodes(4, [0.75], half_angle=seg, half_height=0.125,
                                       offset=2 * seg))
    return assemble_affine(mesh, assign_electrodes(mesh, desc))


@pytest.fixture(scope="session")
def small_sys():
    return small_cylinder_system()


@pytest.fixture(scope="session")
def small_solution(small_sys):
    rng = np.random.default_rng(7)
    sigma = np.exp(0.3 * rng.standard_normal(small_sys.n_nodes))
    z = 0.01 * np.exp(0.2 * rng.standard_normal(small_sys.n_electrodes))
    P = current_patterns(small_sys.n_electrodes)
    return SimpleNamespace(sigma=sigma, z=z, P=P, sol=solve_forward(small_sys, sigma, z, P))


@pytest.fixture(scope="session")
def ball_sys():
    mesh = ball_mesh(6)
    return assemble_affine(mesh, assign_electrodes(mesh, ball_axis_electrodes(1.0, 0.45)))


@pytest.fixture(scope="session")
def desk():
    """The desk-scale cylinder problem shared by the slow tests and acceptance runs."""
    from eitrb.simulator import Phantom, inclusion_masks, simulate

    cfg = RunConfig.load(CASE1)
    desc = cfg.electrode_descriptors()
    coarse = cfg.build_mesh("coarse")
    fine = cfg.build_mesh("fine")
    sc = assemble_affine(coarse, assign_electrodes(coarse, desc))
    sf = assemble_affine(fine, assign_electrodes(fine, desc))
    P = cfg.current_patterns(sc.n_electrodes)
    phantom = Phantom.from_dict(cfg.phantom)
    frame = simulate(sf, phantom, P, cfg.noise.fraction, seed=cfg.seeds.simulate,
                     reference_nodes=coarse.n_nodes)
    return SimpleNamespace(cfg=cfg, sys=sc, fine_sys=sf, P=P, phantom=phantom, frame=frame,
                           masks=inclusion_masks(coarse, phantom))


@pytest.fixture(scope="session")
def desk_library(desk):
    from eitrb.rom import generate_snapshots
    from eitrb.sampling import FieldPrior

    pr = desk.cfg.prior
    prior = FieldPrior.build(desk.sys.mesh.nodes, pr.sigma0, pr.omega, pr.ell, pr.zeta0, pr.eta,
                             desk.sys.n_electrodes)
    lib = generate_snapshots(desk.sys, prior, pr.K, desk.P, seed=desk.cfg.seeds.snapshots)
    return SimpleNamespace(prior=prior, lib=lib)


@pytest.fixture(scope="session")
def desk_noise(desk):
    from eitrb.inversion import NoiseModel

    return NoiseModel(desk.frame.gamma, desk.frame.V.size)


@pytest.fixture(scope="session")
def desk_full_run(desk, desk_noise):
    from eitrb.inversion import FullEngine, outer_iterate

    cfg = desk.cfg
    return outer_iterate(desk.sys, FullEngine(desk.sys), desk.frame.V, desk.P, desk_noise,
                         cfg.prior.sigma0, cfg.prior.zeta0, T=cfg.tv.T, delta=cfg.tv.delta,
                         max_outer=cfg.caps.max_outer, max_inner=cfg.caps.max_inner,
                         keep_history=True)
