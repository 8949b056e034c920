"""Run configuration files (JSON) and their translation into problems.

The schema is documented key by key in ``docs/config_reference.md``.
Parsing collects every violation with a dotted locator rather than stopping
at the first one.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

BATCH_GUIDANCE = 0.05


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FourierConfig(_Strict):
    m: int = Field(64, ge=1)
    sigma: float = Field(1.0, gt=0)


class NetworkSection(_Strict):
    outputs: list[Literal["u", "v", "w", "p", "T"]]
    hidden: list[int] = [128, 128, 128]
    activation: Literal["tanh", "sin", "cos"] = "tanh"
    fourier: Optional[FourierConfig] = None

    @field_validator("hidden")
    @classmethod
    def _widths(cls, v):
        if not v or any(w < 1 for w in v):
            raise ValueError("hidden widths must be positive and non-empty")
        return v

    @field_validator("outputs")
    @classmethod
    def _unique(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError("outputs must be non-empty and unique")
        return v


class MaterialSection(_Strict):
    rho: float = Field(1.0, gt=0)
    nu: float = Field(1.0, gt=0)
    k: float = Field(1.0, gt=0)
    s: float = Field(1.0, gt=0)
    q_src: float = Field(0.0, ge=0)


class SubdomainSection(_Strict):
    region: str = "main"
    physics: Literal["none", "poisson", "ns", "rans", "energy", "conjugate"]
    network: NetworkSection
    material: MaterialSection = MaterialSection()
    source: Union[float, Literal["poisson_sine"], None] = None


class InterfaceSection(_Strict):
    name: str = "iface"
    regions: tuple[str, str]
    field: Literal["T"] = "T"


class ParabolicSection(_Strict):
    peak: float
    center: list[float]
    radius: float = Field(gt=0)
    axis: int = Field(0, ge=0)


class BoundarySection(_Strict):
    tag: str
    field: Literal["u", "v", "w", "p", "T"]
    kind: Literal["dirichlet", "neumann"] = "dirichlet"
    value: Union[float, Literal["tabulated"], ParabolicSection] = 0.0
    region: Optional[str] = None


class GeometrySection(_Strict):
    shape: dict
    n_interior: int = Field(gt=0)
    n_boundary: Union[int, dict[str, int]] = 100
    n_interface: int = Field(0, ge=0)
    refine_fraction: float = Field(0.0, ge=0, lt=1)
    refine_band: float = Field(0.05, gt=0)


class DataSection(_Strict):
    fraction: float = Field(gt=0, le=1)
    keep_all_nodes: bool = True


class PhaseSection(_Strict):
    name: str
    losses: list[Literal["residual", "boundary", "data", "interface"]]
    max_steps: int = Field(ge=0)


class TrainingSection(_Strict):
    steps: int = Field(30_000, ge=0)
    warm_fraction: float = Field(0.0, ge=0, lt=1)
    phases: Optional[list[PhaseSection]] = None
    lr0: float = Field(1e-3, gt=0)
    lr_decay: float = Field(0.9, gt=0, le=1)
    decay_every: int = Field(10_000, ge=1)
    clip_norm: float = Field(1.0, gt=0)
    batch_fraction: float = Field(0.02, gt=0, le=1)
    min_batch: int = Field(1, ge=1)
    resample_every: int = Field(5_000, ge=1)
    log_every: int = Field(100, ge=1)
    divergence: float = Field(1e6, gt=0)
    weights: dict[str, float] = {}


class AnnealingSection(_Strict):
    enabled: bool = True
    alpha: float = Field(0.1, gt=0, le=1)
    every: int = Field(100, ge=1)
    threshold: float = Field(1e-5, ge=0)
    thresholds: dict[str, float] = {}


class ProbeSection(_Strict):
    name: str
    start: list[float]
    end: list[float]
    n: int = Field(101, ge=2)
    region: Optional[str] = None


class EvaluationSection(_Strict):
    exact: Optional[Literal["poisson_sine", "kovasznay", "two_slab"]] = None
    tags: Optional[list[str]] = None
    thresholds: list[float] = [0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5]
    probes: list[ProbeSection] = []

    @field_validator("thresholds")
    @classmethod
    def _sorted(cls, v):
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("thresholds must be sorted ascending")
        return v


class RunConfig(_Strict):
    experiment: str
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: Optional[str] = None
    geometry: Optional[GeometrySection] = None
    cloud: Optional[str] = None
    reference: Optional[Literal["poisson_sine", "kovasznay", "two_slab"]] = None
    data: Optional[DataSection] = None
    subdomains: list[SubdomainSection]
    interfaces: list[InterfaceSection] = []
    boundaries: list[BoundarySection] = []
    training: TrainingSection = TrainingSection()
    annealing: AnnealingSection = AnnealingSection()
    evaluation: EvaluationSection = EvaluationSection()


class ConfigError(ValueError):
    """All problems found in a config, each as ``(locator, message)``."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("\n".join(f"{loc}: {msg}" for loc, msg in errors))


def _loc(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _type_tag(p) -> bool:
    # union members show up in error locations as type names; they are not keys
    return isinstance(p, str) and (p in ("float", "int", "str", "bool") or "[" in p or p[:1].isupper())


def _pydantic_errors(exc: ValidationError) -> list[tuple[str, str]]:
    out = []
    for e in exc.errors():
        loc = [p for p in e["loc"] if not _type_tag(p)]
        if e["type"] == "extra_forbidden":
            out.append((_loc(loc), f"unknown key {loc[-1]!r}"))
        elif e["type"] == "missing":
            out.append((_loc(loc), "missing required key"))
        else:
            out.append((_loc(loc), e["msg"]))
    # a union reports one error per member; the deepest locator is the informative one
    locs = [l for l, _ in out]
    out = [(l, m) for l, m in out if not any(o.startswith(l + ".") or o.startswith(l + "[") for o in locs)]
    seen, uniq = set(), []
    for loc, msg in out:
        if loc not in seen:
            seen.add(loc)
            uniq.append((loc, msg))
    return uniq


# ---------------------------------------------------------------------------
# semantic checks (need the cloud / geometry)

def _cloud_tags(cfg: RunConfig, base: Path, errors) -> set[str] | None:
    from .geometry import load_cloud, make_shape
    if cfg.geometry is not None:
        try:
            shape = make_shape(cfg.geometry.shape)
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(("geometry.shape", f"invalid shape: {exc}"))
            return None
        faces = list(shape.faces)
        nb = cfg.geometry.n_boundary
        if isinstance(nb, dict):
            for f in nb:
                if f not in faces:
                    errors.append((f"geometry.n_boundary.{f}", f"shape has no face {f!r}; faces are {faces}"))
            faces = [f for f in nb if f in faces]
        tags = {f"boundary:{f}" for f in faces}
        if cfg.geometry.n_interface:
            tags.add("interface:iface")
        return tags
    path = base / cfg.cloud
    if not path.exists():
        errors.append(("cloud", f"file not found: {cfg.cloud}"))
        return None
    return set(load_cloud(path).tags.astype(str))


def semantic_errors(cfg: RunConfig, base: Path) -> list[tuple[str, str]]:
    errors: list[tuple[str, str]] = []
    if (cfg.geometry is None) == (cfg.cloud is None):
        errors.append(("<root>", "give exactly one of 'geometry' or 'cloud'"))
    regions = [s.region for s in cfg.subdomains]
    if len(set(regions)) != len(regions):
        errors.append(("subdomains", "region names must be unique"))
    if not cfg.subdomains:
        errors.append(("subdomains", "at least one subdomain is required"))
    in_iface = {r for itf in cfg.interfaces for r in itf.regions}
    for i, s in enumerate(cfg.subdomains):
        outs = set(s.network.outputs)
        need = {"poisson": {"T"}, "energy": {"T"}, "conjugate": {"T"},
                "ns": {"u", "v", "p"}, "rans": {"u", "v", "p"}}.get(s.physics, set())
        if not need <= outs:
            errors.append((f"subdomains[{i}].network.outputs", f"{s.physics} physics needs outputs {sorted(need)}"))
        if s.physics == "conjugate" and s.region not in in_iface:
            errors.append((f"subdomains[{i}].physics", "conjugate physics needs the region to share an interface"))
    for i, itf in enumerate(cfg.interfaces):
        for r in itf.regions:
            if r not in regions:
                errors.append((f"interfaces[{i}].regions", f"unknown region {r!r}"))
    for i, b in enumerate(cfg.boundaries):
        if b.region is not None and b.region not in regions:
            errors.append((f"boundaries[{i}].region", f"unknown region {b.region!r}"))
        if b.region is None and len(regions) > 1:
            errors.append((f"boundaries[{i}].region", "required when there are several subdomains"))
        if b.value == "tabulated" and cfg.reference is None and cfg.cloud is None:
            errors.append((f"boundaries[{i}].value", "tabulated values need a 'reference' solution or a cloud file"))
    if cfg.data is not None and cfg.reference is None and cfg.cloud is None:
        errors.append(("data", "sparse data needs a 'reference' solution or a cloud file with field columns"))
    if not errors:
        try:
            tags = _cloud_tags(cfg, base, errors)
        except (OSError, ValueError) as exc:
            errors.append(("cloud", str(exc)))
            tags = None
        if tags is not None:
            for i, b in enumerate(cfg.boundaries):
                if f"boundary:{b.tag}" not in tags:
                    errors.append((f"boundaries[{i}].tag", f"no points tagged boundary:{b.tag} in the cloud"))
            for i, itf in enumerate(cfg.interfaces):
                if f"interface:{itf.name}" not in tags:
                    errors.append((f"interfaces[{i}].name", f"no points tagged interface:{itf.name} in the cloud"))
    return errors


def config_warnings(cfg: RunConfig) -> list[str]:
    out = []
    if cfg.training.batch_fraction > BATCH_GUIDANCE:
        out.append(f"training.batch_fraction = {cfg.training.batch_fraction:g} is above the usual 1-5% of points;"
                   " expect slower steps")
    return out


def validate_dict(doc, base: Path | str = ".") -> tuple[RunConfig, list[str]]:
    """Validate a parsed document; returns ``(config, warnings)`` or raises :class:`ConfigError`."""
    if not isinstance(doc, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_pydantic_errors(exc)) from None
    errs = semantic_errors(cfg, Path(base))
    if errs:
        raise ConfigError(errs)
    return cfg, config_warnings(cfg)


def parse_config(path) -> tuple[RunConfig, list[str]]:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(f"line {exc.lineno}", f"malformed JSON: {exc.msg}")]) from None
    return validate_dict(doc, path.parent)


def dump_config(cfg: RunConfig) -> str:
    """Canonical JSON text; parsing it back gives an equal config."""
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# building runnable objects

def exact_solution(name: str):
    from . import problems
    if name == "poisson_sine":
        return lambda x: {"T": problems.poisson_exact(x)}
    if name == "kovasznay":
        return lambda x: problems.kovasznay(x)
    if name == "two_slab":
        return lambda x: {"T": problems.two_slab_exact(np.atleast_2d(x)[:, 0])}
    raise ValueError(f"unknown reference solution {name!r}")


def build_cloud(cfg: RunConfig, base: Path, seed: int):
    from .geometry import PointCloud, load_cloud, make_shape, sample_domain, select_sparse_data
    if cfg.geometry is not None:
        g = cfg.geometry
        shape = make_shape(g.shape)
        nb = g.n_boundary if isinstance(g.n_boundary, dict) else {f: g.n_boundary for f in shape.faces}
        cloud = sample_domain(shape, g.n_interior, nb, seed=seed, refine_fraction=g.refine_fraction,
                              refine_band=g.refine_band, n_interface=g.n_interface)
    else:
        cloud = load_cloud(base / cfg.cloud)
    if cfg.reference is not None:
        ref = exact_solution(cfg.reference)(cloud.points)
        for k, v in ref.items():
            cloud.fields.setdefault(k, v)
    if cfg.data is not None:
        tags = cloud.tags.astype(str)
        nodes_mask = np.array([t.startswith("interior") for t in tags], dtype=bool)
        nodes = cloud.subset(nodes_mask)
        data = select_sparse_data(nodes, cfg.data.fraction, seed=seed)
        keep = [cloud] if cfg.data.keep_all_nodes else [cloud.subset(~nodes_mask)]
        cloud = PointCloud.concat(keep + [data])
    return cloud


def _source(spec):
    if spec == "poisson_sine":
        from .problems import poisson_source
        return poisson_source
    return spec


def _boundary_value(v):
    from .physics import ParabolicProfile
    if isinstance(v, ParabolicSection):
        return ParabolicProfile(v.peak, v.center, v.radius, v.axis)
    return v


def build_problem(cfg: RunConfig, base: Path | str = ".", seed: int | None = None):
    """``(problem, train_config, cloud)`` ready for :func:`hybrid_pinn.trainer.train`."""
    from .network import FourierEmbedding, NetworkConfig
    from .physics import BoundarySpec, MaterialProps
    from .trainer import (AnnealConfig, DecomposedModel, InterfaceSpec, Phase, PinnProblem, Subdomain,
                          TrainConfig, fit_normalization)
    base = Path(base)
    seed = cfg.seed if seed is None else seed
    cloud = build_cloud(cfg, base, seed)
    single = len(cfg.subdomains) == 1
    subs = {}
    for j, s in enumerate(cfg.subdomains):
        d = cloud.dim
        emb = None
        if s.network.fourier is not None:
            emb = FourierEmbedding.create(s.network.fourier.m, d, s.network.fourier.sigma, seed + 101 + j)
        ncfg = NetworkConfig(d, list(s.network.outputs), list(s.network.hidden), s.network.activation,
                             embedding=emb, seed=seed + 1 + j)
        fit_normalization(ncfg, cloud, None if single else s.region, single=single)
        physics = "energy" if s.physics == "conjugate" else s.physics
        subs[s.region] = Subdomain(s.region, ncfg, physics=physics, props=MaterialProps(**s.material.model_dump()),
                                   source=_source(s.source))
    model = DecomposedModel(subs, [InterfaceSpec(i.name, tuple(i.regions), i.field) for i in cfg.interfaces])
    regions = list(subs)
    specs = [(BoundarySpec(b.tag, b.field, b.kind, _boundary_value(b.value)), b.region or regions[0])
             for b in cfg.boundaries]
    problem = PinnProblem(model, cloud, specs)
    t = cfg.training
    kw = dict(lr0=t.lr0, lr_decay=t.lr_decay, decay_every=t.decay_every, clip_norm=t.clip_norm,
              batch_fraction=t.batch_fraction, min_batch=t.min_batch, resample_every=t.resample_every, seed=seed,
              log_every=t.log_every, divergence=t.divergence, weights=dict(t.weights),
              anneal=AnnealConfig(**cfg.annealing.model_dump()))
    if t.phases:
        tc = TrainConfig([Phase(p.name, list(p.losses), p.max_steps) for p in t.phases], **kw)
    elif t.warm_fraction > 0:
        tc = TrainConfig.hybrid(t.steps, t.warm_fraction, **kw)
    else:
        tc = TrainConfig([Phase("physics", ["residual", "boundary", "data", "interface"], t.steps)], **kw)
    return problem, tc, cloud

