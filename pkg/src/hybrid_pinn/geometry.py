"""Point clouds, sampling geometries, sparse-data selection and DoE sampling."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COORDS = ("x", "y", "z")
FIELD_COLUMNS = ("u", "v", "w", "p", "T", "nu_t")
NORMAL_COLUMNS = ("nx", "ny", "nz")
TAG_RE = re.compile(r"^(interior(:[\w.-]+)?|data(:[\w.-]+)?|boundary:[\w.-]+|interface:[\w.-]+)$")


class CloudFormatError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass
class PointCloud:
    """Tagged points with optional solution columns and unit normals.

    Missing values are stored as NaN; ``normals`` rows are NaN where a
    point carries no normal.
    """

    points: np.ndarray
    tags: np.ndarray
    fields: dict[str, np.ndarray] = field(default_factory=dict)
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            self.points = self.points.reshape(0, max(self.points.shape[1], 1))
        self.tags = np.asarray(self.tags, dtype=object)
        n, d = self.points.shape
        if self.tags.shape != (n,):
            raise ValueError("one tag per point required")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        bad = sorted({t for t in self.tags if not TAG_RE.match(str(t))})
        if bad:
            raise ValueError(f"invalid tags: {bad}")
        for name, col in list(self.fields.items()):
            if name not in FIELD_COLUMNS:
                raise ValueError(f"unknown field column {name!r}")
            col = np.asarray(col, dtype=float)
            if col.shape != (n,):
                raise ValueError(f"field {name!r} has shape {col.shape}, expected ({n},)")
            self.fields[name] = col
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(n, d)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def tag_set(self) -> list[str]:
        return sorted(set(self.tags.tolist()))

    def mask(self, tag: str) -> np.ndarray:
        return self.tags == tag

    def subset(self, index) -> "PointCloud":
        index = np.asarray(index)
        normals = None if self.normals is None else self.normals[index]
        return PointCloud(self.points[index], self.tags[index],
                          {k: v[index] for k, v in self.fields.items()}, normals)

    def with_tag(self, tag: str) -> "PointCloud":
        return self.subset(np.flatnonzero(self.mask(tag)))

    def retag(self, tag: str) -> "PointCloud":
        out = self.subset(np.arange(len(self)))
        out.tags = np.array([tag] * len(self), dtype=object)
        return out

    def field(self, name: str) -> np.ndarray:
        if name not in self.fields:
            return np.full(len(self), np.nan)
        return self.fields[name]

    def has_normals(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)

    @staticmethod
    def concat(clouds: list["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        d = clouds[0].dim
        names = sorted({k for c in clouds for k in c.fields}, key=FIELD_COLUMNS.index)
        fields = {k: np.concatenate([c.field(k) for c in clouds]) for k in names}
        normals = None
        if any(c.normals is not None for c in clouds):
            normals = np.concatenate([c.normals if c.normals is not None else np.full((len(c), d), np.nan)
                                      for c in clouds])
        return PointCloud(np.concatenate([c.points for c in clouds]),
                          np.concatenate([c.tags for c in clouds]), fields, normals)

    def equals(self, other: "PointCloud") -> bool:
        if self.points.shape != other.points.shape or not np.array_equal(self.points, other.points):
            return False
        if list(self.tags) != list(other.tags) or set(self.fields) != set(other.fields):
            return False
        for k in self.fields:
            if not np.array_equal(self.fields[k], other.fields[k], equal_nan=True):
                return False
        a = self.normals if self.has_normals().any() else None
        b = other.normals if other.has_normals().any() else None
        if (a is None) != (b is None):
            return False
        return a is None or np.array_equal(a, b, equal_nan=True)


# ---------------------------------------------------------------------------
# CSV

def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else format(float(v), ".17g")


def save_cloud(cloud: PointCloud, path) -> None:
    """Write the canonical CSV: ``x,y[,z],tag[,u,v,w,p,T,nu_t,nx,ny,nz]``."""
    d = cloud.dim
    names = [c for c in FIELD_COLUMNS if c in cloud.fields]
    with_normals = bool(cloud.has_normals().any())
    header = list(COORDS[:d]) + ["tag"] + names + (list(NORMAL_COLUMNS[:d]) if with_normals else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(cloud)):
            row = [_fmt(v) for v in cloud.points[i]] + [cloud.tags[i]]
            row += [_fmt(cloud.fields[k][i]) for k in names]
            if with_normals:
                row += [_fmt(v) for v in cloud.normals[i]]
            w.writerow(row)


def _parse_float(text: str, row: int, col: str) -> float:
    if text.strip() == "":
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise CloudFormatError(f"row {row}: column {col!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise CloudFormatError(f"row {row}: column {col!r} holds non-finite value {text!r}")
    return v


def load_cloud(path, normal_tol: float = 1e-6) -> PointCloud:
    """Read a cloud CSV; rejects unknown columns, ragged rows and non-finite values."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CloudFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    allowed = set(COORDS) | {"tag"} | set(FIELD_COLUMNS) | set(NORMAL_COLUMNS)
    unknown = [h for h in header if h not in allowed]
    if unknown:
        raise CloudFormatError(f"{path}: unknown column(s) {unknown}")
    if len(set(header)) != len(header):
        raise CloudFormatError(f"{path}: duplicate columns")
    for req in ("x", "tag"):
        if req not in header:
            raise CloudFormatError(f"{path}: missing required column {req!r}")
    coords = [c for c in COORDS if c in header]
    if coords != list(COORDS[: len(coords)]):
        raise CloudFormatError(f"{path}: coordinate columns must be a prefix of x,y,z")
    d = len(coords)
    normals = [c for c in NORMAL_COLUMNS if c in header]
    if normals and normals != list(NORMAL_COLUMNS[:d]):
        raise CloudFormatError(f"{path}: normal columns must be {list(NORMAL_COLUMNS[:d])}")
    idx = {h: i for i, h in enumerate(header)}
    body = rows[1:]
    pts = np.empty((len(body), d))
    tags = []
    fields = {k: np.empty(len(body)) for k in FIELD_COLUMNS if k in header}
    nrm = np.full((len(body), d), np.nan) if normals else None
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CloudFormatError(f"row {r}: expected {len(header)} fields, found {len(row)}")
        for j, c in enumerate(coords):
            v = _parse_float(row[idx[c]], r, c)
            if math.isnan(v):
                raise CloudFormatError(f"row {r}: missing coordinate {c!r}")
            pts[r - 2, j] = v
        tag = row[idx["tag"]].strip()
        if not TAG_RE.match(tag):
            raise CloudFormatError(f"row {r}: invalid tag {tag!r}")
        tags.append(tag)
        for k in fields:
            fields[k][r - 2] = _parse_float(row[idx[k]], r, k)
        if nrm is not None:
            vals = [_parse_float(row[idx[c]], r, c) for c in normals]
            if any(math.isnan(v) for v in vals):
                if not all(math.isnan(v) for v in vals):
                    raise CloudFormatError(f"row {r}: partially specified normal")
                continue
            if abs(math.sqrt(sum(v * v for v in vals)) - 1.0) > normal_tol:
                raise CloudFormatError(f"row {r}: normal is not unit length")
            nrm[r - 2] = vals
    return PointCloud(pts, np.array(tags, dtype=object), fields, nrm)


# ---------------------------------------------------------------------------
# geometries

class Shape:
    """Interface of a sampling geometry."""

    dim: int
    faces: tuple[str, ...] = ()

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def inside(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sdf(self, x: np.ndarray) -> np.ndarray:
        """Signed distance (approximate where noted), negative inside."""
        raise NotImplementedError

    def sample_face(self, name: str, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def region_of(self, x: np.ndarray) -> np.ndarray:
        return np.array([None] * len(x), dtype=object)


@dataclass
class Box(Shape):
    lo: list
    hi: list

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("box needs lo < hi in every dimension")
        self.dim = len(self.lo)
        self.faces = tuple(f"{c}{s}" for c in COORDS[: self.dim] for s in ("min", "max"))

    def bounds(self):
        return self.lo, self.hi

    def inside(self, x):
        return np.all((x > self.lo) & (x < self.hi), axis=1)

    def sdf(self, x):
        q = np.abs(x - (self.lo + self.hi) / 2) - (self.hi - self.lo) / 2
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(np.max(q, axis=1), 0.0)

    def sample_face(self, name, n, rng):
        if name not in self.faces:
            raise ValueError(f"box has no face {name!r}; faces are {self.faces}")
        k = COORDS.index(name[0])
        side = name[1:]
        x = rng.uniform(self.lo, self.hi, size=(n, self.dim))
        x[:, k] = self.lo[k] if side == "min" else self.hi[k]
        nrm = np.zeros((n, self.dim))
        nrm[:, k] = -1.0 if side == "min" else 1.0
        return x, nrm


@dataclass
class ChannelObstacle(Shape):
    """2D channel ``[0, length] x [0, height]`` around a rectangular obstacle.

    Faces: ``inlet`` (x = 0), ``outlet`` (x = length), ``walls`` (top and
    bottom) and ``obstacle``.  Normals point out of the fluid.
    """

    length: float = 2.0
    height: float = 1.0
    obstacle_lo: list = field(default_factory=lambda: [0.5, 0.0])
    obstacle_hi: list = field(default_factory=lambda: [0.7, 0.4])

    def __post_init__(self):
        self.dim = 2
        self.faces = ("inlet", "outlet", "walls", "obstacle")
        self._outer = Box([0.0, 0.0], [self.length, self.height])
        self._obs = Box(self.obstacle_lo, self.obstacle_hi)

    def bounds(self):
        return self._outer.bounds()

    def inside(self, x):
        obs = np.all((x >= self._obs.lo) & (x <= self._obs.hi), axis=1)
        return self._outer.inside(x) & ~obs

    def sdf(self, x):
        return np.maximum(self._outer.sdf(x), -self._obs.sdf(x))

    def sample_face(self, name, n, rng):
        if name == "inlet":
            return self._outer.sample_face("xmin", n, rng)
        if name == "outlet":
            return self._outer.sample_face("xmax", n, rng)
        if name == "walls":
            top = rng.random(n) < 0.5
            xb, nb = self._outer.sample_face("ymin", n, rng)
            xt, nt = self._outer.sample_face("ymax", n, rng)
            return np.where(top[:, None], xt, xb), np.where(top[:, None], nt, nb)
        if name == "obstacle":
            lo, hi = self._obs.lo, self._obs.hi
            edges = []
            for face in self._obs.faces:
                k = COORDS.index(face[0])
                at = lo[k] if face.endswith("min") else hi[k]
                # skip edges lying on the channel walls
                if k == 1 and (at <= 0.0 or at >= self.height):
                    continue
                edges.append(face)
            lengths = np.array([hi[1 - COORDS.index(f[0])] - lo[1 - COORDS.index(f[0])] for f in edges])
            which = rng.choice(len(edges), size=n, p=lengths / lengths.sum())
            x = np.empty((n, 2))
            nrm = np.empty((n, 2))
            for e, face in enumerate(edges):
                sel = which == e
                xs, ns = self._obs.sample_face(face, int(sel.sum()), rng)
                x[sel], nrm[sel] = xs, -ns
            return x, nrm
        raise ValueError(f"channel has no face {name!r}; faces are {self.faces}")


@dataclass
class ConstrictedTube(Shape):
    """Axisymmetric tube along x with a cosine-bump constriction.

    ``R(x) = R0 (1 - delta (1 + cos(2 pi (x - xc) / Lc)) / 2)`` inside the
    constriction, ``R0`` elsewhere, with ``delta = 1 - sqrt(area_ratio)``
    so the throat-to-inlet area ratio equals ``area_ratio``.  The signed
    distance is approximated by ``r - R(x)``.
    """

    length: float = 1.0
    radius: float = 0.1
    area_ratio: float = 0.36
    throat_x: float = 0.5
    throat_length: float = 0.3

    def __post_init__(self):
        if not 0 < self.area_ratio <= 1:
            raise ValueError("area_ratio must lie in (0, 1]")
        self.dim = 3
        self.faces = ("inlet", "outlet", "wall")
        self.delta = 1.0 - math.sqrt(self.area_ratio)

    @property
    def throat_radius(self) -> float:
        return float(self.radius_at(np.array([self.throat_x]))[0])

    def radius_at(self, x):
        x = np.asarray(x, dtype=float)
        t = (x - self.throat_x) / self.throat_length
        bump = np.where(np.abs(t) < 0.5, 0.5 * (1.0 + np.cos(2.0 * np.pi * t)), 0.0)
        return self.radius * (1.0 - self.delta * bump)

    def radius_slope(self, x):
        x = np.asarray(x, dtype=float)
        t = (x - self.throat_x) / self.throat_length
        d = np.where(np.abs(t) < 0.5, -np.pi * np.sin(2.0 * np.pi * t) / self.throat_length, 0.0)
        return -self.radius * self.delta * d

    def bounds(self):
        r = self.radius
        return np.array([0.0, -r, -r]), np.array([self.length, r, r])

    def inside(self, x):
        r = np.hypot(x[:, 1], x[:, 2])
        return (x[:, 0] > 0) & (x[:, 0] < self.length) & (r < self.radius_at(x[:, 0]))

    def sdf(self, x):
        r = np.hypot(x[:, 1], x[:, 2])
        radial = r - self.radius_at(x[:, 0])
        axial = np.maximum(-x[:, 0], x[:, 0] - self.length)
        return np.maximum(radial, axial)

    def _disk(self, n, rng, at):
        rad = self.radius_at(np.array([at]))[0] * np.sqrt(rng.random(n))
        phi = rng.uniform(0, 2 * np.pi, n)
        return np.column_stack([np.full(n, at), rad * np.cos(phi), rad * np.sin(phi)])

    def sample_face(self, name, n, rng):
        if name == "inlet":
            return self._disk(n, rng, 0.0), np.tile([-1.0, 0.0, 0.0], (n, 1))
        if name == "outlet":
            return self._disk(n, rng, self.length), np.tile([1.0, 0.0, 0.0], (n, 1))
        if name == "wall":
            xs = rng.uniform(0, self.length, n)
            phi = rng.uniform(0, 2 * np.pi, n)
            R = self.radius_at(xs)
            slope = self.radius_slope(xs)
            pts = np.column_stack([xs, R * np.cos(phi), R * np.sin(phi)])
            nrm = np.column_stack([-slope, np.cos(phi), np.sin(phi)])
            return pts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        raise ValueError(f"tube has no face {name!r}; faces are {self.faces}")

    def rings(self, planes, fractions, per_ring: int) -> np.ndarray:
        """Points on concentric rings at axial ``planes`` and radial ``fractions`` of R(x)."""
        out = []
        phi = np.linspace(0, 2 * np.pi, per_ring, endpoint=False)
        for xp in planes:
            R = self.radius_at(np.array([xp]))[0]
            for f in fractions:
                out.append(np.column_stack([np.full(per_ring, xp), f * R * np.cos(phi), f * R * np.sin(phi)]))
        return np.concatenate(out)


@dataclass
class TwoSlab(Shape):
    """1D bar ``[lo, hi]`` split at ``interface`` into regions slab1 and slab2.

    Faces ``left``/``right``; the interface normal is that of slab1 (+x).
    """

    lo: float = 0.0
    interface: float = 0.5
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.interface < self.hi:
            raise ValueError("two-slab needs lo < interface < hi")
        self.dim = 1
        self.faces = ("left", "right")

    def bounds(self):
        return np.array([self.lo]), np.array([self.hi])

    def inside(self, x):
        return (x[:, 0] > self.lo) & (x[:, 0] < self.hi) & (x[:, 0] != self.interface)

    def sdf(self, x):
        return np.maximum(self.lo - x[:, 0], x[:, 0] - self.hi)

    def region_of(self, x):
        return np.where(x[:, 0] < self.interface, "slab1", "slab2").astype(object)

    def sample_face(self, name, n, rng):
        if name == "left":
            return np.full((n, 1), self.lo), np.full((n, 1), -1.0)
        if name == "right":
            return np.full((n, 1), self.hi), np.full((n, 1), 1.0)
        raise ValueError(f"two-slab has no face {name!r}; faces are {self.faces}")

    def interface_points(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return np.full((n, 1), self.interface), np.full((n, 1), 1.0)


SHAPES = {"box": Box, "channel": ChannelObstacle, "tube": ConstrictedTube, "two_slab": TwoSlab}


def make_shape(spec: dict) -> Shape:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in SHAPES:
        raise ValueError(f"unknown geometry kind {kind!r}; choose from {sorted(SHAPES)}")
    return SHAPES[kind](**spec)


def _rejection(shape: Shape, n: int, rng, accept, max_attempts: int) -> np.ndarray:
    lo, hi = shape.bounds()
    out, drawn, kept = [], 0, 0
    while kept < n:
        if drawn >= max_attempts:
            rate = kept / max(drawn, 1)
            raise SamplingError(f"rejection sampling accepted {kept}/{drawn} draws "
                                f"(rate {rate:.3g}); could not reach {n} points")
        batch = max(2 * (n - kept), 64)
        x = rng.uniform(lo, hi, size=(batch, shape.dim))
        drawn += batch
        x = x[accept(x)]
        out.append(x)
        kept += len(x)
    return np.concatenate(out)[:n]


def sample_domain(shape: Shape, n_interior: int, n_boundary: dict[str, int], seed: int = 0,
                  refine_fraction: float = 0.0, refine_band: float = 0.05,
                  n_interface: int = 0, max_attempts: int = 1_000_000) -> PointCloud:
    """Random interior points plus boundary points with outward unit normals.

    ``refine_fraction`` of the interior points are drawn within
    ``refine_band`` of the boundary.  Multi-region shapes tag interior
    points ``interior:<region>``.
    """
    if n_interior <= 0 or any(v <= 0 for v in n_boundary.values()):
        raise ValueError("point counts must be positive")
    if not 0.0 <= refine_fraction < 1.0:
        raise ValueError("refine_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    n_near = int(round(refine_fraction * n_interior))
    parts = [_rejection(shape, n_interior - n_near, rng, shape.inside, max_attempts)]
    if n_near:
        near = lambda x: shape.inside(x) & (shape.sdf(x) > -refine_band)
        parts.append(_rejection(shape, n_near, rng, near, max_attempts))
    interior = np.concatenate(parts)
    regions = shape.region_of(interior)
    tags = np.array(["interior" if r is None else f"interior:{r}" for r in regions], dtype=object)
    clouds = [PointCloud(interior, tags, normals=np.full(interior.shape, np.nan))]
    for name, count in n_boundary.items():
        x, nrm = shape.sample_face(name, count, rng)
        clouds.append(PointCloud(x, np.array([f"boundary:{name}"] * count, dtype=object), normals=nrm))
    if n_interface:
        if not hasattr(shape, "interface_points"):
            raise ValueError("geometry has no interface")
        x, nrm = shape.interface_points(n_interface)
        clouds.append(PointCloud(x, np.array(["interface:iface"] * n_interface, dtype=object), normals=nrm))
    return PointCloud.concat(clouds)


# ---------------------------------------------------------------------------
# sparse data

def sparse_indices(n: int, fraction: float, seed: int = 0) -> np.ndarray:
    """Sorted uniform sample of ``round(fraction * n)`` indices without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    k = int(math.floor(fraction * n + 0.5))
    if k == 0:
        raise ValueError(f"fraction {fraction} of {n} points selects no points")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=k, replace=False))


def select_sparse_data(cloud: PointCloud, fraction: float, seed: int = 0,
                       channels=("u", "v", "w", "p", "T")) -> PointCloud:
    """Random subset of ``cloud`` retagged ``data``; needs at least one solution column."""
    if not any(c in cloud.fields for c in channels):
        raise ValueError("cloud carries no solution columns to select data from")
    return cloud.subset(sparse_indices(len(cloud), fraction, seed)).retag("data")


# ---------------------------------------------------------------------------
# design of experiments

@dataclass
class Axis:
    name: str
    lo: float
    hi: float
    unit: str = ""


@dataclass
class DesignSpace:
    axes: list[Axis]

    def __post_init__(self):
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ValueError("design axis names must be unique")
        for a in self.axes:
            if not a.lo < a.hi:
                raise ValueError(f"axis {a.name!r}: min must be below max")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.axes]

    @property
    def lo(self) -> np.ndarray:
        return np.array([a.lo for a in self.axes])

    @property
    def hi(self) -> np.ndarray:
        return np.array([a.hi for a in self.axes])

    def to_unit(self, u):
        return (np.asarray(u, dtype=float) - self.lo) / (self.hi - self.lo)

    def from_unit(self, t):
        return self.lo + np.asarray(t, dtype=float) * (self.hi - self.lo)


def heat_sink_space() -> DesignSpace:
    """Inflow velocity, fin height and chip power ranges of the heat-sink study."""
    return DesignSpace([
        Axis("inflow_velocity", 3.0, 7.0, "m/s"),
        Axis("fin_height", 15.0, 23.0, "mm"),
        Axis("power", 30.0, 60.0, "W"),
    ])


@dataclass
class DoETable:
    names: list[str]
    values: np.ndarray

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.names)
            for row in self.values:
                w.writerow([_fmt(v) for v in row])

    @classmethod
    def load(cls, path) -> "DoETable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        names = rows[0]
        vals = np.array([[_parse_float(v, i + 2, names[j]) for j, v in enumerate(r)]
                         for i, r in enumerate(rows[1:])])
        return cls(names, vals.reshape(len(rows) - 1, len(names)))


def _phi(dist: np.ndarray, p: float) -> float:
    iu = np.triu_indices(len(dist), 1)
    return float(np.sum(dist[iu] ** (-p)) ** (1.0 / p))


def _pairwise(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(d, np.inf)
    return d


def lhs_unit(n: int, k: int, rng) -> np.ndarray:
    """One random point per stratum along every axis of the unit cube."""
    t = np.empty((n, k))
    for j in range(k):
        t[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return t


def maximin_lhs(space: DesignSpace, n: int, seed: int = 0, iterations: int = 1000,
                p: float = 2.0, return_trace: bool = False):
    """Latin hypercube improved by coordinate swaps.

    A swap of two rows within one column is kept only if it lowers the
    Morris-Mitchell criterion ``(sum d_ij^-p)^(1/p)`` without reducing the
    minimum pairwise Euclidean distance (both in unit coordinates).
    """
    if n < 2:
        raise ValueError("maximin LHS needs n >= 2")
    rng = np.random.default_rng(seed)
    k = len(space.axes)
    t = lhs_unit(n, k, rng)
    dist = _pairwise(t)
    phi, dmin = _phi(dist, p), dist.min()
    trace = [dmin]
    for _ in range(iterations):
        j = rng.integers(k)
        a, b = rng.choice(n, size=2, replace=False)
        cand = t.copy()
        cand[[a, b], j] = cand[[b, a], j]
        cd = _pairwise(cand)
        cphi, cmin = _phi(cd, p), cd.min()
        if cphi < phi and cmin >= dmin:
            t, phi, dmin = cand, cphi, cmin
        trace.append(dmin)
    table = DoETable(space.names, space.from_unit(t))
    return (table, np.array(trace)) if return_trace else table


def reference_doe(which: str = "training") -> DoETable:
    """DoE tables shipped with the package (``training`` or ``testing``)."""
    path = Path(__file__).parent / "data" / f"heat_sink_doe_{which}.csv"
    return DoETable.load(path)
