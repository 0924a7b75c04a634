"""Simplicial meshes, boundary facets and electrode assignment.

The mesh text format is::

    dim N n_elem n_bfacet
    x y [z]                 (N lines)
    i0 i1 i2 [i3]           (n_elem lines, zero-based, d+1 indices)
    j0 j1 [j2]              (n_bfacet lines, zero-based, d indices)

Elements are reoriented to positive signed volume on load. The listed
boundary facets must coincide (as vertex sets) with the facets that belong
to exactly one element.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class MeshError(ValueError):
    pass


class MeshFormatError(MeshError):
    pass


class DegenerateElementError(MeshError):
    pass


class DanglingNodeError(MeshError):
    pass


class NonManifoldError(MeshError):
    pass


class ElectrodeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Validated simplicial mesh with precomputed P1 geometry.

    Attributes:
        nodes: (N, d) coordinates.
        elements: (E, d+1) vertex indices, positively oriented.
        boundary_facets: (F, d) vertex indices.
        facet_owner: (F,) index of the element owning each boundary facet.
        element_volumes: (E,) positive volumes.
        shape_gradients: (E, d+1, d) constant gradients of the hat functions.
        facet_areas: (F,) facet measures.
        facet_normals: (F, d) outward unit normals.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    facet_owner: np.ndarray
    element_volumes: np.ndarray
    shape_gradients: np.ndarray
    facet_areas: np.ndarray
    facet_normals: np.ndarray
    name: str = ""

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def volume(self) -> float:
        return float(self.element_volumes.sum())

    @property
    def boundary_area(self) -> float:
        return float(self.facet_areas.sum())

    @property
    def facet_centroids(self) -> np.ndarray:
        return self.nodes[self.boundary_facets].mean(axis=1)

    def fingerprint(self) -> str:
        """Content hash used to tell meshes apart (inverse-crime guard)."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.elements, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def mass_matrix(self) -> sp.csr_matrix:
        """P1 mass matrix, used for weighted L2 comparisons of nodal fields."""
        d = self.dim
        k = d + 1
        local = (np.ones((k, k)) + np.eye(k)) / ((d + 1) * (d + 2))
        vals = self.element_volumes[:, None, None] * local[None]
        rows = np.repeat(self.elements, k, axis=1).ravel()
        cols = np.tile(self.elements, (1, k)).ravel()
        return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(self.n_nodes,) * 2)


def _simplex_geometry(nodes: np.ndarray, elements: np.ndarray):
    d = nodes.shape[1]
    p0 = nodes[elements[:, 0]]
    edges = nodes[elements[:, 1:]] - p0[:, None, :]  # (E, d, d), rows are edges
    det = np.linalg.det(edges)
    return edges, det / math.factorial(d)


def _facet_measure(pts: np.ndarray) -> np.ndarray:
    # pts: (F, d, d) vertex coordinates of (d-1)-simplices
    d = pts.shape[1]
    if d == 1:
        return np.ones(pts.shape[0])
    e = pts[:, 1:] - pts[:, :1]  # (F, d-1, d)
    gram = np.einsum("fik,fjk->fij", e, e)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) / math.factorial(d - 1)


def build_mesh(nodes, elements, boundary_facets=None, name: str = "") -> Mesh:
    """Validate raw arrays and return a Mesh.

    If ``boundary_facets`` is given it is checked against the topological
    boundary; otherwise the topological boundary is used.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    elements = np.array(elements, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
        raise MeshFormatError("nodes must be an (N, d) array with d in {2, 3}")
    n_nodes, d = nodes.shape
    if elements.ndim != 2 or elements.shape[1] != d + 1:
        raise MeshFormatError(f"elements must have {d + 1} vertices each")
    if elements.size and (elements.min() < 0 or elements.max() >= n_nodes):
        bad = int(np.flatnonzero((elements < 0) | (elements >= n_nodes))[0] // (d + 1))
        raise DanglingNodeError(f"element {bad} references a node index outside [0, {n_nodes})")
    used = np.zeros(n_nodes, dtype=bool)
    used[elements.ravel()] = True
    if not used.all():
        raise DanglingNodeError(f"node {int(np.flatnonzero(~used)[0])} belongs to no element")

    _, vol = _simplex_geometry(nodes, elements)
    flip = vol < 0
    if flip.any():
        elements[flip, 0], elements[flip, 1] = elements[flip, 1].copy(), elements[flip, 0].copy()
        vol = np.abs(vol)
    mean_vol = vol.mean()
    tiny = vol < 1e-14 * mean_vol
    if tiny.any():
        raise DegenerateElementError(f"element {int(np.flatnonzero(tiny)[0])} is degenerate")

    edges, _ = _simplex_geometry(nodes, elements)
    inv = np.linalg.inv(edges)  # columns of inv are barycentric gradients
    grads = np.empty((elements.shape[0], d + 1, d))
    grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)

    # facets: drop one vertex at a time
    n_el = elements.shape[0]
    faces = np.concatenate([np.delete(elements, k, axis=1) for k in range(d + 1)])
    owner = np.tile(np.arange(n_el), d + 1)
    opposite = np.concatenate([elements[:, k] for k in range(d + 1)])
    key = np.sort(faces, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if (counts > 2).any():
        raise NonManifoldError("a facet is shared by more than two elements")
    bmask = counts[inverse] == 1
    b_key = key[bmask]
    b_faces = faces[bmask]
    b_owner = owner[bmask]
    b_opp = opposite[bmask]

    if boundary_facets is not None:
        given = np.sort(np.asarray(boundary_facets, dtype=np.int64), axis=1)
        if given.shape[1] != d:
            raise MeshFormatError(f"boundary facets must have {d} vertices each")
        if given.size and (given.min() < 0 or given.max() >= n_nodes):
            raise DanglingNodeError("boundary facet references a node index out of range")
        order_b = np.lexsort(b_key.T[::-1])
        g_sorted = given[np.lexsort(given.T[::-1])]
        if g_sorted.shape != b_key.shape or not np.array_equal(g_sorted, b_key[order_b]):
            raise NonManifoldError("listed boundary facets do not match the mesh boundary")
        # keep the file's ordering
        pos = {tuple(r): i for i, r in enumerate(b_key)}
        idx = np.array([pos[tuple(r)] for r in given], dtype=np.int64)
        b_faces, b_owner, b_opp = b_faces[idx], b_owner[idx], b_opp[idx]

    n_comp, _ = connected_components(_node_graph(elements, n_nodes), directed=False)
    if n_comp != 1:
        raise MeshError(f"mesh is not connected ({n_comp} components)")

    fpts = nodes[b_faces]
    areas = _facet_measure(fpts)
    normals = _facet_normals(fpts)
    outward = np.einsum("fk,fk->f", normals, fpts.mean(axis=1) - nodes[b_opp])
    normals[outward < 0] *= -1.0

    return Mesh(
        nodes=_frozen(nodes),
        elements=_frozen(elements),
        boundary_facets=_frozen(b_faces),
        facet_owner=_frozen(b_owner),
        element_volumes=_frozen(vol),
        shape_gradients=_frozen(grads),
        facet_areas=_frozen(areas),
        facet_normals=_frozen(normals),
        name=name,
    )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _facet_normals(fpts: np.ndarray) -> np.ndarray:
    d = fpts.shape[1]
    if d == 2:
        t = fpts[:, 1] - fpts[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        n = np.cross(fpts[:, 1] - fpts[:, 0], fpts[:, 2] - fpts[:, 0])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _node_graph(elements: np.ndarray, n_nodes: int) -> sp.csr_matrix:
    k = elements.shape[1]
    rows = np.repeat(elements, k, axis=1).ravel()
    cols = np.tile(elements, (1, k)).ravel()
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n_nodes, n_nodes))


def load_mesh(path) -> Mesh:
    path = Path(path)
    try:
        lines = [ln.split("#")[0].strip() for ln in path.read_text().splitlines()]
    except OSError as exc:
        raise MeshFormatError(f"cannot read mesh file {path}: {exc}") from exc
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MeshFormatError(f"{path}: empty mesh file")
    try:
        dim, n, n_el, n_bf = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad header {lines[0]!r}") from exc
    if dim not in (2, 3):
        raise MeshFormatError(f"{path}: dimension must be 2 or 3, got {dim}")
    if len(lines) != 1 + n + n_el + n_bf:
        raise MeshFormatError(
            f"{path}: expected {1 + n + n_el + n_bf} data lines, found {len(lines)}"
        )

    def block(start, count, width, dtype, what):
        try:
            arr = np.array([ln.split() for ln in lines[start:start + count]], dtype=dtype)
        except ValueError as exc:
            raise MeshFormatError(f"{path}: cannot parse {what}: {exc}") from exc
        if count and (arr.ndim != 2 or arr.shape[1] != width):
            raise MeshFormatError(f"{path}: each {what} line needs {width} entries")
        return arr.reshape(count, width)

    nodes = block(1, n, dim, np.float64, "node")
    elements = block(1 + n, n_el, dim + 1, np.int64, "element")
    facets = block(1 + n + n_el, n_bf, dim, np.int64, "boundary facet")
    return build_mesh(nodes, elements, facets, name=path.stem)


def save_mesh(mesh: Mesh, path) -> None:
    d = mesh.dim
    with open(path, "w") as f:
        f.write(f"{d} {mesh.n_nodes} {mesh.n_elements} {len(mesh.boundary_facets)}\n")
        for p in mesh.nodes:
            f.write(" ".join(repr(float(x)) for x in p) + "\n")
        for e in mesh.elements:
            f.write(" ".join(str(int(i)) for i in e) + "\n")
        for fct in mesh.boundary_facets:
            f.write(" ".join(str(int(i)) for i in fct) + "\n")


# --------------------------------------------------------------------------
# electrodes


@dataclass(frozen=True)
class DiskElectrode:
    """Boundary patch within ``radius`` of ``center`` (Euclidean distance)."""

    center: tuple
    normal: tuple
    radius: float
    max_angle_deg: float = 60.0

    def contains(self, centroids, normals):
        c = np.asarray(self.center, float)
        n = _unit(self.normal)
        close = np.linalg.norm(centroids - c, axis=1) <= self.radius
        return close & (normals @ n >= math.cos(math.radians(self.max_angle_deg)))


@dataclass(frozen=True)
class RectElectrode:
    """Boundary patch whose tangent-plane coordinates lie within the half extents.

    ``axis`` fixes the first tangent direction (projected orthogonally to
    ``normal``); the second is normal x axis. In 2D only ``half_width`` is used.
    ``depth`` bounds the offset along the normal.
    """

    center: tuple
    normal: tuple
    axis: tuple
    half_width: float
    half_height: float = 0.0
    depth: float | None = None
    max_angle_deg: float = 60.0

    def contains(self, centroids, normals):
        c = np.asarray(self.center, float)
        n = _unit(self.normal)
        t1 = np.asarray(self.axis, float)
        t1 = _unit(t1 - (t1 @ n) * n)
        rel = centroids - c
        ok = np.abs(rel @ t1) <= self.half_width
        if len(c) == 3:
            t2 = np.cross(n, t1)
            ok &= np.abs(rel @ t2) <= self.half_height
        depth = self.depth if self.depth is not None else max(self.half_width, self.half_height)
        ok &= np.abs(rel @ n) <= depth
        return ok & (normals @ n >= math.cos(math.radians(self.max_angle_deg)))


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def electrode_from_dict(d: dict):
    kind = d.get("shape", "disk")
    kw = {k: v for k, v in d.items() if k != "shape"}
    if kind == "disk":
        return DiskElectrode(**{k: tuple(v) if isinstance(v, list) else v for k, v in kw.items()})
    if kind in ("rect", "rectangle"):
        return RectElectrode(**{k: tuple(v) if isinstance(v, list) else v for k, v in kw.items()})
    raise ElectrodeError(f"unknown electrode shape {kind!r}")


def electrode_to_dict(e) -> dict:
    from dataclasses import asdict

    out = {"shape": "disk" if isinstance(e, DiskElectrode) else "rect"}
    out.update({k: list(v) if isinstance(v, tuple) else v for k, v in asdict(e).items()})
    return out


@dataclass(frozen=True, eq=False)
class ElectrodeLayout:
    facets: tuple  # M arrays of boundary-facet indices
    areas: np.ndarray
    descriptors: tuple = field(default=())

    @property
    def n_electrodes(self) -> int:
        return len(self.facets)

    def electrode_nodes(self, mesh: Mesh) -> np.ndarray:
        """Sorted indices of all nodes lying on some electrode."""
        if not self.facets:
            return np.zeros(0, dtype=np.int64)
        idx = np.concatenate(self.facets)
        return np.unique(mesh.boundary_facets[idx])


def assign_electrodes(mesh: Mesh, descriptors) -> ElectrodeLayout:
    """Assign boundary facets to electrodes by facet-centroid membership."""
    descriptors = [electrode_from_dict(d) if isinstance(d, dict) else d for d in descriptors]
    if len(descriptors) < 2:
        raise ElectrodeError("at least two electrodes are required")
    cen = mesh.facet_centroids
    nrm = mesh.facet_normals
    owner = np.full(len(cen), -1, dtype=np.int64)
    sets = []
    for m, desc in enumerate(descriptors):
        hit = np.flatnonzero(desc.contains(cen, nrm))
        if hit.size == 0:
            raise ElectrodeError(f"electrode {m} matches no boundary facet")
        clash = owner[hit] >= 0
        if clash.any():
            other = int(owner[hit[clash][0]])
            raise ElectrodeError(f"electrodes {other} and {m} claim the same facet")
        owner[hit] = m
        sets.append(_frozen(hit))
    for m, s in enumerate(sets):
        if not _facets_connected(mesh.boundary_facets[s]):
            raise ElectrodeError(f"electrode {m} is not connected")
    areas = np.array([mesh.facet_areas[s].sum() for s in sets])
    return ElectrodeLayout(facets=tuple(sets), areas=_frozen(areas), descriptors=tuple(descriptors))


def _facets_connected(facets: np.ndarray) -> bool:
    # facets adjacent when they share d-1 vertices (an edge in 3D, a node in 2D)
    d = facets.shape[1]
    if len(facets) == 1:
        return True
    sub = np.concatenate([np.delete(facets, k, axis=1) for k in range(d)])
    sub = np.sort(sub, axis=1)
    fid = np.tile(np.arange(len(facets)), d)
    _, inv = np.unique(sub, axis=0, return_inverse=True)
    inv = inv.ravel()
    g = sp.csr_matrix((np.ones(len(fid)), (fid, inv)))
    adj = g @ g.T
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1
