"""Structured meshes for tests, demos and the acceptance suite.

These are fixtures, not a general mesher: extruded disks (cylinders), Kuhn
triangulated boxes and a radially squashed box (ball). All of them keep the
symmetries the tests rely on.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.spatial import Delaunay

from .mesh import Mesh, RectElectrode, DiskElectrode, build_mesh


def disk_points(n_rings: int, n_outer: int, radius: float = 1.0) -> np.ndarray:
    pts = [np.zeros((1, 2))]
    for i in range(1, n_rings + 1):
        r = radius * i / n_rings
        count = n_outer if i == n_rings else max(6, int(round(n_outer * i / n_rings)))
        th = 2 * math.pi * np.arange(count) / count
        if i != n_rings and i % 2:
            th += math.pi / count
        pts.append(np.stack([r * np.cos(th), r * np.sin(th)], axis=1))
    return np.concatenate(pts)


def disk_mesh(n_rings: int = 6, n_outer: int = 36, radius: float = 1.0) -> Mesh:
    pts = disk_points(n_rings, n_outer, radius)
    tri = Delaunay(pts).simplices
    return build_mesh(pts, tri, name=f"disk_{n_rings}_{n_outer}")


def rectangle_mesh(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Mesh:
    xs = np.linspace(0, lx, nx + 1)
    ys = np.linspace(0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange(pts.shape[0]).reshape(nx + 1, ny + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    tri = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return build_mesh(pts, tri, name=f"rect_{nx}x{ny}")


def cylinder_mesh(n_rings: int = 7, n_outer: int = 48, n_layers: int = 12,
                  radius: float = 1.0, height: float = 1.0) -> Mesh:
    """Extruded ring-based disk; each prism is split into three tetrahedra."""
    pts2 = disk_points(n_rings, n_outer, radius)
    tri = np.sort(Delaunay(pts2).simplices, axis=1)
    n2 = pts2.shape[0]
    zs = np.linspace(0.0, height, n_layers + 1)
    nodes = np.concatenate([np.column_stack([pts2, np.full(n2, z)]) for z in zs])
    tets = []
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    for k in range(n_layers):
        o, t = k * n2, (k + 1) * n2
        # diagonals drawn from the lower-index bottom vertex keep faces conforming
        tets.append(np.stack([a + o, b + o, c + o, c + t], 1))
        tets.append(np.stack([a + o, b + o, b + t, c + t], 1))
        tets.append(np.stack([a + o, a + t, b + t, c + t], 1))
    return build_mesh(nodes, np.concatenate(tets),
                      name=f"cyl_{n_rings}_{n_outer}_{n_layers}")


def box_mesh(n: int | tuple = 4, lengths=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Kuhn (Freudenthal) triangulation of a box: six tetrahedra per cell."""
    nx, ny, nz = (n, n, n) if isinstance(n, int) else n
    axes = [np.linspace(o, o + L, k + 1) for o, L, k in zip(origin, lengths, (nx, ny, nz))]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    idx = np.arange(nodes.shape[0]).reshape(nx + 1, ny + 1, nz + 1)
    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
    tets = []
    for perm in itertools.permutations(range(3)):
        v = base.copy()
        verts = [idx[v[:, 0], v[:, 1], v[:, 2]]]
        for ax in perm:
            v = v.copy()
            v[:, ax] += 1
            verts.append(idx[v[:, 0], v[:, 1], v[:, 2]])
        tets.append(np.stack(verts, 1))
    return build_mesh(nodes, np.concatenate(tets), name=f"box_{nx}x{ny}x{nz}")


def ball_mesh(n: int = 8, radius: float = 1.0) -> Mesh:
    """Box mesh of [-r, r]^3 mapped radially so sup-norm spheres become spheres.

    The map commutes with coordinate permutations and with x -> -x, so the
    mesh keeps the symmetry group of the Kuhn triangulation.
    """
    box = box_mesh(n, lengths=(2 * radius,) * 3, origin=(-radius,) * 3)
    p = np.array(box.nodes)
    inf = np.abs(p).max(axis=1)
    two = np.linalg.norm(p, axis=1)
    scale = np.divide(inf, two, out=np.ones_like(inf), where=two > 0)
    return build_mesh(p * scale[:, None], box.elements, name=f"ball_{n}")


# --------------------------------------------------------------------------
# electrode descriptor helpers


def cylinder_side_electrodes(n_per_ring: int, heights, half_angle: float, half_height: float,
                             radius: float = 1.0, offset: float = 0.0, shape: str = "rect"):
    """Electrodes arranged in rings on the side of a vertical cylinder.

    ``half_angle`` is in radians. Rectangles are sized so that a facet
    centroid at angular offset ``half_angle`` lies on the boundary.
    """
    out = []
    for h in heights:
        for j in range(n_per_ring):
            th = offset + 2 * math.pi * j / n_per_ring
            n = (math.cos(th), math.sin(th), 0.0)
            c = (radius * n[0], radius * n[1], h)
            if shape == "rect":
                out.append(RectElectrode(center=c, normal=n, axis=(-n[1], n[0], 0.0),
                                         half_width=radius * math.sin(half_angle),
                                         half_height=half_height, depth=0.5 * radius))
            else:
                out.append(DiskElectrode(center=c, normal=n, radius=half_height))
    return out


def ball_axis_electrodes(radius: float, patch_radius: float):
    """Six disk electrodes centred on the +-x, +-y, +-z poles of a ball."""
    out = []
    for ax in range(3):
        for s in (1.0, -1.0):
            n = [0.0, 0.0, 0.0]
            n[ax] = s
            out.append(DiskElectrode(center=tuple(radius * x for x in n), normal=tuple(n),
                                     radius=patch_radius))
    return out


def quasi_uniform_ball(n_points: int = 4000, radius: float = 1.0, seed: int = 0) -> Mesh:
    """Delaunay mesh of scrambled Sobol points in a ball plus a Fibonacci sphere.

    Interior points stop half a spacing short of the surface so the node
    density stays roughly uniform up to the boundary.
    """
    from scipy.stats import qmc

    h = radius * (4 * math.pi / 3 / n_points) ** (1 / 3)
    shrink = 1 - 0.5 * h / radius
    n_in = int(round(n_points * shrink**3))
    # the skipped shell of thickness h/2 holds 1/(2 h^2) points per unit area
    n_surf = max(12, int(round(2 * math.pi * radius**2 / h**2)))
    m = int(np.ceil(np.log2(n_in * 6 / math.pi / shrink**3 * 1.1)))
    cube = qmc.Sobol(3, scramble=True, seed=seed).random_base2(m) * 2 - 1
    inner = cube[np.linalg.norm(cube, axis=1) <= shrink][:n_in] * radius
    i = np.arange(n_surf) + 0.5
    phi = np.arccos(1 - 2 * i / n_surf)
    th = math.pi * (1 + 5**0.5) * i
    surf = radius * np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], 1)
    pts = np.concatenate([inner, surf])
    tet = Delaunay(pts).simplices
    return build_mesh(pts, tet, name=f"qball_{len(pts)}")
