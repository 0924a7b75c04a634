"""Phantoms and noisy synthetic electrode data."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .forward import AffineSystem, solve_forward
from .mesh import Mesh

FRAME_FORMAT = "eitrb-measurement"


@dataclass(frozen=True)
class Inclusion:
    """Cylinder (center at base, vertical axis by default), ball, or box.

    ``shape`` is "cylinder", "ball" or "box". Cylinders use ``center``
    (base point), ``radius``, ``height`` and ``axis``; balls ``center``
    and ``radius``; boxes ``lo`` and ``hi``.
    """

    shape: str
    value: float
    center: tuple = ()
    radius: float = 0.0
    height: float = 0.0
    axis: tuple = (0.0, 0.0, 1.0)
    lo: tuple = ()
    hi: tuple = ()

    def contains(self, x: np.ndarray) -> np.ndarray:
        if self.shape == "ball":
            return np.linalg.norm(x - np.asarray(self.center), axis=1) <= self.radius
        if self.shape == "box":
            return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=1)
        if self.shape == "cylinder":
            a = np.asarray(self.axis, float)
            a = a / np.linalg.norm(a)
            rel = x - np.asarray(self.center)
            t = rel @ a
            radial = np.linalg.norm(rel - t[:, None] * a, axis=1)
            return (t >= 0) & (t <= self.height) & (radial <= self.radius)
        if self.shape == "disk":  # 2D
            return np.linalg.norm(x - np.asarray(self.center), axis=1) <= self.radius
        raise ValueError(f"unknown inclusion shape {self.shape!r}")


@dataclass(frozen=True)
class Phantom:
    background: float
    inclusions: tuple = ()
    contact_mean: float = 2e-3
    contact_std: float = 5e-4
    name: str = "phantom"

    def __post_init__(self):
        if not self.background > 0 or any(not inc.value > 0 for inc in self.inclusions):
            raise ValueError("phantom conductivities must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "Phantom":
        incs = tuple(Inclusion(**{k: tuple(v) if isinstance(v, list) else v for k, v in i.items()})
                     for i in d.get("inclusions", ()))
        rest = {k: v for k, v in d.items() if k != "inclusions"}
        return cls(inclusions=incs, **rest)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inclusions"] = [asdict(i) for i in self.inclusions]
        return d


def rasterize_phantom(mesh: Mesh, phantom: Phantom) -> np.ndarray:
    """Nodal conductivity by point membership; later inclusions win on overlap."""
    sigma = np.full(mesh.n_nodes, float(phantom.background))
    for inc in phantom.inclusions:
        sigma[inc.contains(mesh.nodes)] = inc.value
    return sigma


def inclusion_masks(mesh: Mesh, phantom: Phantom) -> list:
    """Per-inclusion node masks after overlap resolution, plus the background mask last."""
    owner = np.full(mesh.n_nodes, -1)
    for j, inc in enumerate(phantom.inclusions):
        owner[inc.contains(mesh.nodes)] = j
    return [owner == j for j in range(len(phantom.inclusions))] + [owner == -1]


def draw_contacts(phantom: Phantom, n_electrodes: int, rng: np.random.Generator) -> np.ndarray:
    """Normal draws with rejection of non-positive values."""
    z = rng.normal(phantom.contact_mean, phantom.contact_std, n_electrodes)
    while np.any(z <= 0):
        bad = z <= 0
        z[bad] = rng.normal(phantom.contact_mean, phantom.contact_std, int(bad.sum()))
    return z


@dataclass(eq=False)
class MeasurementFrame:
    V: np.ndarray
    gamma: float
    patterns: np.ndarray
    noise_fraction: float
    seed: int
    provenance: dict = field(default_factory=dict)
    U_clean: np.ndarray | None = None
    z_true: np.ndarray | None = None

    @property
    def n_electrodes(self) -> int:
        return self.patterns.shape[0]

    def to_json(self, config_hash: str = "") -> str:
        doc = {
            "format": FRAME_FORMAT,
            "version": 1,
            "config_hash": config_hash,
            "seed": self.seed,
            "noise_fraction": self.noise_fraction,
            "gamma": self.gamma,
            "patterns": self.patterns.tolist(),
            "voltages": self.V.tolist(),
            "provenance": self.provenance,
        }
        if self.z_true is not None:
            doc["contact_resistances"] = self.z_true.tolist()
        return json.dumps(doc, sort_keys=True, indent=1)

    def save(self, path, config_hash: str = "") -> None:
        with open(path, "w") as f:
            f.write(self.to_json(config_hash) + "\n")


def load_frame(path, normalize: bool = True) -> MeasurementFrame:
    """Read a measurement file; each pattern block is shifted to zero mean by default."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != FRAME_FORMAT:
        raise ValueError(f"{path}: not a measurement file")
    P = np.asarray(doc["patterns"], dtype=float)
    V = np.asarray(doc["voltages"], dtype=float)
    M, L = P.shape
    if V.shape != (M * L,):
        raise ValueError(f"{path}: {V.size} voltages do not match {M}x{L} patterns")
    if normalize:
        blocks = V.reshape(L, M)
        V = (blocks - blocks.mean(axis=1, keepdims=True)).ravel()
    z = doc.get("contact_resistances")
    return MeasurementFrame(V=V, gamma=float(doc["gamma"]), patterns=P,
                            noise_fraction=float(doc["noise_fraction"]), seed=int(doc["seed"]),
                            provenance=doc.get("provenance", {}),
                            z_true=None if z is None else np.asarray(z))


def simulate(sys: AffineSystem, phantom: Phantom, patterns: np.ndarray, noise_fraction: float,
             seed: int = 0, reference_nodes: int | None = None) -> MeasurementFrame:
    """Forward solve on ``sys`` (the fine mesh) plus scaled Gaussian noise.

    gamma = noise_fraction * max_{j,k} |U_j - U_k|.
    """
    mesh = sys.mesh
    if reference_nodes is not None and mesh.n_nodes < 2 * reference_nodes:
        warnings.warn("simulation mesh has fewer than twice the reconstruction mesh nodes")
    sigma = rasterize_phantom(mesh, phantom)
    z = draw_contacts(phantom, sys.n_electrodes, np.random.default_rng((seed, 0)))
    sol = solve_forward(sys, sigma, z, patterns)
    U = sol.Uvec
    gamma = float(noise_fraction * (U.max() - U.min()))
    if noise_fraction > 0:
        V = U + gamma * np.random.default_rng((seed, 1)).standard_normal(U.size)
    else:
        V = U.copy()
    prov = {"mesh": mesh.name, "mesh_id": mesh.fingerprint(), "nodes": mesh.n_nodes,
            "phantom": phantom.to_dict()}
    return MeasurementFrame(V=V, gamma=gamma, patterns=np.array(patterns), noise_fraction=noise_fraction,
                            seed=seed, provenance=prov, U_clean=U, z_true=z)


def inclusion_brackets(sigma: np.ndarray, masks: list) -> dict:
    """Nodal means over each inclusion support and their ratios to the background mean.

    ``masks`` as returned by :func:`inclusion_masks` (background last).
    """
    sigma = np.asarray(sigma, float)
    bg = float(sigma[masks[-1]].mean())
    means = [float(sigma[m].mean()) for m in masks[:-1]]
    return {"background": bg, "means": means, "ratios": [m / bg for m in means]}
