"""Run configuration, result files and legacy VTK export.

A run configuration is one JSON document. Mesh entries are either a path to a
mesh file (relative to the config file) or a generator spec such as
``{"generator": "cylinder", "n_rings": 8, "n_outer": 48, "n_layers": 12}``.
Electrodes are a list of descriptor dicts or a ``cylinder_side`` generator
spec. Validation errors carry the dotted key and, when it can be found, the
line of the offending key in the source file.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import meshgen
from .forward import current_patterns
from .mesh import Mesh, electrode_from_dict, load_mesh

RESULT_FORMAT = "eitrb-result"
FIELD_HEADER = "# eitrb nodal field"


class ConfigError(ValueError):
    """Invalid run configuration. ``key`` is dotted, ``line`` 1-based or None."""

    def __init__(self, msg, key: str = "", line: int | None = None, source: str = ""):
        where = source or "config"
        if line is not None:
            where += f":{line}"
        prefix = f"{where}: {key}: " if key else f"{where}: "
        super().__init__(prefix + msg)
        self.key = key
        self.line = line


# --------------------------------------------------------------------------
# config sections


@dataclass
class PriorParams:
    sigma0: float = 0.93
    zeta0: float = 0.007
    omega: float = 0.5
    ell: float = 1.0
    eta: float = 5e-4
    K: int = 200
    k: int = 100
    count: str = "draws"
    oversampling: int = 10
    power_iters: int = 1


@dataclass
class TVParams:
    T: float = 1e-6
    delta: float = 1e-2


@dataclass
class NoiseParams:
    fraction: float = 0.004
    gamma: float | None = None  # explicit std; overrides the file's value on reconstruct


@dataclass
class Seeds:
    simulate: int = 0
    snapshots: int = 0
    pod: int = 0


@dataclass
class Caps:
    max_outer: int = 50
    max_inner: int = 200


@dataclass
class RunConfig:
    meshes: dict = field(default_factory=dict)  # {"fine": spec, "coarse": spec}
    electrodes: object = None
    patterns: dict = field(default_factory=lambda: {"kind": "adjacent"})
    phantom: dict | None = None
    prior: PriorParams = field(default_factory=PriorParams)
    tv: TVParams = field(default_factory=TVParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    engine: str = "full"
    basis: str | None = None
    measurements: str | None = None
    seeds: Seeds = field(default_factory=Seeds)
    caps: Caps = field(default_factory=Caps)
    output: str = "out"
    source: str = ""  # path of the config file; not hashed
    text: str = ""  # raw text, for line lookup; not hashed

    # ---- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, source: str = "", text: str = "") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("top level must be a JSON object", source=source)
        cfg = cls(source=source, text=text)
        sections = {"prior": PriorParams, "tv": TVParams, "noise": NoiseParams,
                    "seeds": Seeds, "caps": Caps}
        known = {f.name for f in fields(cls)} - {"source", "text"}
        for key, val in d.items():
            if key not in known:
                raise cfg.error(f"unknown key (expected one of {sorted(known)})", key)
            if key in sections:
                if not isinstance(val, dict):
                    raise cfg.error("must be an object", key)
                sub = sections[key]
                names = {f.name for f in fields(sub)}
                bad = set(val) - names
                if bad:
                    k0 = sorted(bad)[0]
                    raise cfg.error(f"unknown key (expected one of {sorted(names)})", f"{key}.{k0}")
                setattr(cfg, key, sub(**val))
            else:
                setattr(cfg, key, val)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", source=str(path)) from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno, source=str(path)) from exc
        return cls.from_dict(d, source=str(path), text=text)

    # ---- validation -------------------------------------------------------

    def line_of(self, key: str) -> int | None:
        leaf = key.split(".")[-1]
        m = re.search(r'"%s"\s*:' % re.escape(leaf), self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else None

    def error(self, msg: str, key: str) -> ConfigError:
        return ConfigError(msg, key=key, line=self.line_of(key), source=self.source)

    def validate(self) -> None:
        pos = {"prior.sigma0": self.prior.sigma0, "prior.zeta0": self.prior.zeta0,
               "tv.T": self.tv.T, "tv.delta": self.tv.delta}
        nonneg = {"prior.omega": self.prior.omega, "prior.eta": self.prior.eta,
                  "noise.fraction": self.noise.fraction}
        for k, v in pos.items():
            if not _is_num(v) or not v > 0:
                raise self.error(f"must be a positive number, got {v!r}", k)
        for k, v in nonneg.items():
            if not _is_num(v) or v < 0:
                raise self.error(f"must be a non-negative number, got {v!r}", k)
        if not _is_num(self.prior.ell) or not self.prior.ell > 0:
            raise self.error(f"must be a positive number, got {self.prior.ell!r}", "prior.ell")
        if self.noise.gamma is not None and (not _is_num(self.noise.gamma) or not self.noise.gamma > 0):
            raise self.error("must be positive when given", "noise.gamma")
        for k, v in {"prior.K": self.prior.K, "prior.k": self.prior.k,
                     "caps.max_outer": self.caps.max_outer, "caps.max_inner": self.caps.max_inner}.items():
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise self.error(f"must be a positive integer, got {v!r}", k)
        if self.prior.count not in ("draws", "columns"):
            raise self.error("must be 'draws' or 'columns'", "prior.count")
        if self.engine not in ("full", "reduced"):
            raise self.error(f"must be 'full' or 'reduced', got {self.engine!r}", "engine")
        if self.engine == "reduced" and not self.basis:
            raise self.error("the reduced engine needs a basis file", "basis")
        if not isinstance(self.meshes, dict):
            raise self.error("must be an object with 'fine' and/or 'coarse'", "meshes")
        bad = set(self.meshes) - {"fine", "coarse"}
        if bad:
            raise self.error("only 'fine' and 'coarse' meshes are recognised", "meshes")
        if not isinstance(self.patterns, dict) or "kind" not in self.patterns:
            raise self.error("must be an object with a 'kind'", "patterns")

    def require(self, *keys: str) -> None:
        """Check presence of command-specific entries, e.g. 'meshes.fine'."""
        for key in keys:
            top, _, sub = key.partition(".")
            val = getattr(self, top)
            if sub:
                val = val.get(sub) if isinstance(val, dict) else None
            if val in (None, "", {}):
                raise self.error("missing", key)

    def with_overrides(self, engine=None, seed=None, seed_stage="simulate", out=None) -> "RunConfig":
        if engine is not None:
            self.engine = engine
        if seed is not None:
            setattr(self.seeds, seed_stage, int(seed))
        if out is not None:
            self.output = str(Path(out).resolve())
        self.validate()
        return self

    # ---- hashing and resolution -------------------------------------------

    def canonical(self) -> dict:
        d = asdict(self)
        for k in ("source", "text", "output"):
            d.pop(k)
        return d

    def hash(self) -> str:
        return config_hash(self.canonical())

    def resolve(self, p) -> Path:
        p = Path(p)
        if p.is_absolute() or not self.source:
            return p
        return Path(self.source).parent / p

    def build_mesh(self, which: str) -> Mesh:
        self.require(f"meshes.{which}")
        spec = self.meshes[which]
        key = f"meshes.{which}"
        if isinstance(spec, str):
            path = self.resolve(spec)
            if not path.exists():
                raise self.error(f"mesh file {str(path)!r} does not exist", key)
            return load_mesh(path)
        if isinstance(spec, dict) and "generator" in spec:
            return generate_mesh(spec, lambda msg: self.error(msg, key))
        raise self.error("must be a path or a generator spec", key)

    def electrode_descriptors(self):
        """Descriptors in order; list items may themselves be ring generator specs."""
        self.require("electrodes")
        spec = self.electrodes
        items = [spec] if isinstance(spec, dict) else spec
        if not isinstance(items, list):
            raise self.error("must be a list of descriptors or a generator spec", "electrodes")
        err = lambda msg: self.error(msg, "electrodes")  # noqa: E731
        out = []
        for item in items:
            if not isinstance(item, dict):
                raise err(f"electrode entries must be objects, got {item!r}")
            if "generator" in item:
                if item["generator"] != "cylinder_side":
                    raise err(f"unknown electrode generator {item['generator']!r}")
                out.extend(cylinder_side_from_spec(item, err))
                continue
            try:
                out.append(electrode_from_dict(item))
            except (TypeError, ValueError) as exc:
                raise err(str(exc)) from exc
        return out

    def current_patterns(self, n_electrodes: int) -> np.ndarray:
        p = dict(self.patterns)
        kind = p.pop("kind")
        try:
            return current_patterns(n_electrodes, kind=kind, amplitude=p.get("amplitude", 1.0),
                                    matrix=p.get("matrix"))
        except (TypeError, ValueError) as exc:
            raise self.error(str(exc), "patterns") from exc


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def generate_mesh(spec: dict, err=ConfigError) -> Mesh:
    gens = {"cylinder": meshgen.cylinder_mesh, "box": meshgen.box_mesh, "ball": meshgen.ball_mesh,
            "disk": meshgen.disk_mesh, "rectangle": meshgen.rectangle_mesh}
    kw = {k: v for k, v in spec.items() if k != "generator"}
    name = spec["generator"]
    if name not in gens:
        raise err(f"unknown mesh generator {name!r} (expected one of {sorted(gens)})")
    try:
        return gens[name](**kw)
    except TypeError as exc:
        raise err(f"bad generator arguments: {exc}") from exc


def cylinder_side_from_spec(spec: dict, err=ConfigError):
    """Rings of rectangular or disk electrodes; angles are given in degrees."""
    kw = {k: v for k, v in spec.items() if k != "generator"}
    for k in ("half_angle_deg", "offset_deg"):
        if k in kw:
            kw[k.replace("_deg", "")] = math.radians(kw.pop(k))
    try:
        return meshgen.cylinder_side_electrodes(**kw)
    except TypeError as exc:
        raise err(f"bad electrode generator arguments: {exc}") from exc


# --------------------------------------------------------------------------
# hashing and output files


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def write_json(path, doc: dict) -> None:
    with open(path, "w") as f:
        f.write(json.dumps(doc, sort_keys=True, indent=1, default=_jsonable) + "\n")


def read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def result_document(summary: dict, config_hash_: str, seed: int, mesh: Mesh, files: dict,
                    timings: dict, extra: dict | None = None) -> dict:
    """Result JSON body; everything except ``timings`` is covered by ``content_hash``."""
    body = {"format": RESULT_FORMAT, "version": 1, "config_hash": config_hash_, "seed": seed,
            "mesh": {"name": mesh.name, "mesh_id": mesh.fingerprint(), "nodes": mesh.n_nodes},
            "files": files, "reconstruction": summary}
    if extra:
        body.update(extra)
    body["content_hash"] = config_hash(body)
    body["timings"] = timings
    return body


def save_field(path, values: np.ndarray, mesh: Mesh, config_hash_: str = "", seed: int = 0) -> None:
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise ValueError(f"field has shape {values.shape}, mesh has {mesh.n_nodes} nodes")
    with open(path, "w") as f:
        f.write(f"{FIELD_HEADER} mesh_id={mesh.fingerprint()} nodes={mesh.n_nodes} "
                f"config_hash={config_hash_} seed={seed}\n")
        for v in values:
            f.write(repr(float(v)) + "\n")


def load_field(path) -> tuple:
    """Return (values, header dict)."""
    with open(path) as f:
        head = f.readline()
        if not head.startswith(FIELD_HEADER):
            raise ValueError(f"{path}: not a nodal field file")
        meta = dict(tok.split("=", 1) for tok in head[len(FIELD_HEADER):].split() if "=" in tok)
        vals = np.array([float(ln) for ln in f if ln.strip()])
    if "nodes" in meta and int(meta["nodes"]) != vals.size:
        raise ValueError(f"{path}: header says {meta['nodes']} nodes, found {vals.size} values")
    return vals, meta


_VTK_CELL = {2: 5, 3: 10}  # triangle, tetrahedron


def write_vtk(path, mesh: Mesh, point_data: dict, title: str = "eitrb") -> None:
    """Legacy ASCII VTK unstructured grid with scalar point data."""
    n, d = mesh.nodes.shape
    E = mesh.elements
    k = E.shape[1]
    pts = np.zeros((n, 3))
    pts[:, :d] = mesh.nodes
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist()]
    lines.append(f"CELLS {len(E)} {len(E) * (k + 1)}")
    lines += [f"{k} " + " ".join(map(str, e)) for e in E.tolist()]
    lines.append(f"CELL_TYPES {len(E)}")
    lines += [str(_VTK_CELL[d])] * len(E)
    lines.append(f"POINT_DATA {n}")
    for name, vals in point_data.items():
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (n,):
            raise ValueError(f"point data {name!r} has shape {vals.shape}, expected ({n},)")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(v) for v in vals.tolist()]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def mass_weighted_difference(mesh: Mesh, a: np.ndarray, b: np.ndarray) -> float:
    """|a - b|_M / |a|_M with the P1 mass matrix M."""
    Mm = mesh.mass_matrix()
    d = np.asarray(a) - np.asarray(b)
    den = float(a @ (Mm @ a))
    if den <= 0:
        raise ValueError("reference field has zero mass norm")
    return math.sqrt(max(float(d @ (Mm @ d)), 0.0) / den)
