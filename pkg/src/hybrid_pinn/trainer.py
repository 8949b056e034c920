"""Hybrid data/physics training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import physics
from .annealing import AnnealingState
from .autodiff import NumericFault, ParameterStore, Tape, grad_params
from .geometry import PointCloud
from .network import NetworkConfig, Normalization, init_xavier, jet_forward, save_checkpoint
from .physics import BoundarySpec, MaterialProps

log = logging.getLogger(__name__)

PHYSICS_KINDS = ("none", "poisson", "energy", "ns", "rans")
LOSS_KINDS = ("residual", "boundary", "data", "interface")


class TrainingDiverged(RuntimeError):
    """Loss blew up; ``model`` holds the last good parameters."""

    def __init__(self, message, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history


# ---------------------------------------------------------------------------
# optimizer pieces

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[np.ndarray, AdamState, bool]:
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state, applied)``; a non-finite gradient
    leaves everything unchanged and ``applied`` False.
    """
    if grad.shape != params.shape:
        raise ValueError("gradient and parameter shapes differ")
    if not np.all(np.isfinite(grad)):
        log.warning("non-finite gradient at Adam step %d; update skipped", state.t + 1)
        return params, state, False
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t), True


def clip_global_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    """Rescale ``grad`` to at most ``max_norm``; also returns the original norm."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.sqrt(np.sum(grad * grad)))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def learning_rate(step: int, lr0: float = 1e-3, decay: float = 0.9, every: int = 10_000) -> float:
    return lr0 * decay ** (step // every)


# ---------------------------------------------------------------------------
# configuration

@dataclass
class Phase:
    name: str
    losses: list[str]
    max_steps: int

    def __post_init__(self):
        bad = [x for x in self.losses if x not in LOSS_KINDS]
        if bad:
            raise ValueError(f"phase {self.name!r}: unknown loss kinds {bad}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")

    @property
    def physics(self) -> bool:
        return "residual" in self.losses or "interface" in self.losses


@dataclass
class AnnealConfig:
    enabled: bool = True
    alpha: float = 0.1
    every: int = 100
    threshold: float = 1e-5
    thresholds: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainConfig:
    phases: list[Phase]
    lr0: float = 1e-3
    lr_decay: float = 0.9
    decay_every: int = 10_000
    clip_norm: float = 1.0
    batch_fraction: float = 0.02
    min_batch: int = 1
    resample_every: int = 5_000
    seed: int = 0
    log_every: int = 100
    divergence: float = 1e6
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.batch_fraction <= 1:
            raise ValueError("batch_fraction must lie in (0, 1]")
        seen_physics = False
        for ph in self.phases:
            if ph.physics:
                seen_physics = True
            elif seen_physics and ph.losses == ["data"]:
                raise ValueError("a data-only warm start must precede the physics phases")

    @classmethod
    def hybrid(cls, total_steps: int, warm_fraction: float = 0.2, **kw) -> "TrainConfig":
        """Warm start on data for ``warm_fraction`` of the budget, then everything."""
        warm = int(round(total_steps * warm_fraction))
        phases = [Phase("warm_start", ["data"], warm),
                  Phase("physics", ["residual", "boundary", "data", "interface"], total_steps - warm)]
        return cls(phases, **kw)

    @property
    def total_steps(self) -> int:
        return sum(p.max_steps for p in self.phases)


# ---------------------------------------------------------------------------
# model

@dataclass
class Subdomain:
    """One network and the physics it must satisfy in its region."""

    region: str
    config: NetworkConfig
    params: ParameterStore | None = None
    physics: str = "none"
    props: MaterialProps = field(default_factory=MaterialProps)
    source: float | Callable | None = None

    def __post_init__(self):
        if self.physics not in PHYSICS_KINDS:
            raise ValueError(f"physics must be one of {PHYSICS_KINDS}")
        if self.params is None:
            self.params = init_xavier(self.config)


@dataclass
class InterfaceSpec:
    """Continuity coupling of ``field`` between two regions on ``interface:<name>`` points.

    Stored normals are those of the first region.
    """

    name: str
    regions: tuple[str, str]
    field: str = "T"


@dataclass
class DecomposedModel:
    subdomains: dict[str, Subdomain]
    interfaces: list[InterfaceSpec] = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.subdomains, (list, tuple)):
            self.subdomains = {s.region: s for s in self.subdomains}
        for itf in self.interfaces:
            a, b = itf.regions
            if a == b or a not in self.subdomains or b not in self.subdomains:
                raise ValueError(f"interface {itf.name!r} must join two distinct existing regions")

    @classmethod
    def single(cls, sub: Subdomain) -> "DecomposedModel":
        return cls({sub.region: sub})

    @property
    def stores(self) -> list[ParameterStore]:
        return [s.params for s in self.subdomains.values()]

    def flat(self) -> np.ndarray:
        return np.concatenate([s.flat for s in self.stores])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for s in self.stores:
            s.flat[:] = flat[pos:pos + s.total_count]
            pos += s.total_count

    def predict(self, region: str, x) -> dict[str, np.ndarray]:
        from .network import forward_named
        sub = self.subdomains[region]
        return forward_named(sub.params, sub.config, x)


def fit_normalization(config: NetworkConfig, cloud: PointCloud, region: str | None = None,
                      single: bool = True) -> NetworkConfig:
    """Set input/output standard scores of ``config`` from the cloud in place."""
    mask = region_mask(cloud, region, single)
    x = cloud.points[mask]
    data = mask & np.char.startswith(cloud.tags.astype(str), "data")
    y = None
    if data.any():
        y = np.column_stack([cloud.field(n)[data] for n in config.output_names])
    norm = Normalization.fit(x, y, n_outputs=len(config.output_names))
    if y is None:
        norm = Normalization(norm.input_mean, norm.input_std, config.normalization.output_mean,
                             config.normalization.output_std)
    if config.param_inputs:
        raise ValueError("fit_normalization handles spatial-only networks")
    config.normalization = norm
    return config


def region_mask(cloud: PointCloud, region: str | None, single: bool) -> np.ndarray:
    tags = cloud.tags.astype(str)
    if single or region is None:
        return np.ones(len(cloud), dtype=bool)
    own = (tags == f"interior:{region}") | (tags == f"data:{region}")
    return own


@dataclass
class PinnProblem:
    model: DecomposedModel
    cloud: PointCloud
    boundaries: list[tuple[BoundarySpec, str]] = field(default_factory=list)

    def __post_init__(self):
        regions = list(self.model.subdomains)
        fixed = []
        for item in self.boundaries:
            spec, region = item if isinstance(item, tuple) else (item, None)
            if region is None:
                if len(regions) != 1:
                    raise ValueError(f"boundary {spec.tag!r} must name its region")
                region = regions[0]
            if region not in self.model.subdomains:
                raise ValueError(f"boundary {spec.tag!r} refers to unknown region {region!r}")
            if f"boundary:{spec.tag}" not in set(self.cloud.tags):
                raise ValueError(f"cloud has no points tagged boundary:{spec.tag}")
            fixed.append((spec, region))
        self.boundaries = fixed
        seen = set()
        for spec, region in fixed:
            key = (spec.tag, spec.field, region)
            if key in seen:
                raise ValueError(f"tag {spec.tag!r} has more than one spec for field {spec.field!r}")
            seen.add(key)
        self._groups = self._build_groups()

    @property
    def single(self) -> bool:
        return len(self.model.subdomains) == 1

    def _build_groups(self) -> dict[str, np.ndarray]:
        tags = self.cloud.tags.astype(str)
        groups = {}
        for region, sub in self.model.subdomains.items():
            if sub.physics != "none":
                m = (tags == f"interior:{region}") | ((tags == "interior") & self.single)
                groups[f"residual:{region}"] = np.flatnonzero(m)
            m = (tags == f"data:{region}") | ((tags == "data") & self.single)
            if m.any():
                groups[f"data:{region}"] = np.flatnonzero(m)
        for spec, _ in self.boundaries:
            groups[f"bc:{spec.tag}"] = np.flatnonzero(tags == f"boundary:{spec.tag}")
        for itf in self.model.interfaces:
            idx = np.flatnonzero(tags == f"interface:{itf.name}")
            if not len(idx):
                raise ValueError(f"cloud has no points tagged interface:{itf.name}")
            groups[f"iface:{itf.name}"] = idx
        return dict(sorted(groups.items()))

    @property
    def groups(self) -> dict[str, np.ndarray]:
        return self._groups

    def components(self, kinds) -> list[str]:
        """Loss component names produced by the given loss kinds."""
        out = []
        if "residual" in kinds and any(g.startswith("residual:") for g in self._groups):
            out.append("residual")
        if "boundary" in kinds:
            out += sorted({f"bc:{s.tag}" for s, _ in self.boundaries})
        if "data" in kinds and any(g.startswith("data:") for g in self._groups):
            out.append("data")
        if "interface" in kinds:
            for itf in self.model.interfaces:
                out += [f"flux:{itf.name}", f"val:{itf.name}"]
        return out

    def losses(self, tape: Tape, batches: dict[str, np.ndarray], kinds) -> dict:
        """Loss nodes for the enabled kinds on the given point indices."""
        cloud = self.cloud
        subs = self.model.subdomains
        out = {}
        if "residual" in kinds:
            terms = []
            for region, sub in subs.items():
                key = f"residual:{region}"
                if key not in batches:
                    continue
                idx = batches[key]
                x = cloud.points[idx]
                jets = jet_forward(sub.params, sub.config, x, tape, order=2)
                terms.append(physics.residual_loss(self._residual(sub, jets, idx)))
            if terms:
                out["residual"] = _sum(terms)
        if "boundary" in kinds:
            by_tag: dict[str, list] = {}
            for spec, region in self.boundaries:
                idx = batches[f"bc:{spec.tag}"]
                sub = subs[region]
                order = 1 if spec.kind == "neumann" else 0
                jets = jet_forward(sub.params, sub.config, cloud.points[idx], tape, order=order)
                nrm = None if cloud.normals is None else cloud.normals[idx]
                tab = cloud.field(spec.field)[idx] if spec.field in cloud.fields else None
                by_tag.setdefault(f"bc:{spec.tag}", []).append(
                    physics.boundary_loss(jets, spec, cloud.points[idx], nrm, tab))
            out.update({k: _sum(v) for k, v in by_tag.items()})
        if "data" in kinds:
            terms = []
            for region, sub in subs.items():
                key = f"data:{region}"
                if key not in batches:
                    continue
                idx = batches[key]
                jets = jet_forward(sub.params, sub.config, cloud.points[idx], tape, order=0)
                measured = {n: cloud.fields[n][idx] for n in sub.config.output_names if n in cloud.fields}
                if measured:
                    terms.append(physics.data_loss(jets, measured))
            if terms:
                out["data"] = _sum(terms)
        if "interface" in kinds:
            for itf in self.model.interfaces:
                idx = batches[f"iface:{itf.name}"]
                a, b = subs[itf.regions[0]], subs[itf.regions[1]]
                x = cloud.points[idx]
                ja = jet_forward(a.params, a.config, x, tape, order=1)[itf.field]
                jb = jet_forward(b.params, b.config, x, tape, order=1)[itf.field]
                n1 = cloud.normals[idx]
                flux, val = physics.interface_losses(ja, jb, n1, -n1, a.props.k, b.props.k)
                out[f"flux:{itf.name}"] = flux
                out[f"val:{itf.name}"] = val
        return out

    def _residual(self, sub: Subdomain, jets, idx) -> list:
        cloud = self.cloud
        x = cloud.points[idx]
        if sub.physics in ("ns", "rans"):
            nu_t = cloud.field("nu_t")[idx] if sub.physics == "rans" else 0.0
            if sub.physics == "rans" and not np.all(np.isfinite(nu_t)):
                raise ValueError("rans physics needs an nu_t column on every collocation point")
            return physics.ns_residual(jets, sub.props, nu_t)
        source = sub.source(x) if callable(sub.source) else sub.source
        u = None
        if sub.physics == "energy":
            names = [c for c in ("u", "v", "w")[: cloud.dim] if c in cloud.fields]
            if names:
                cols = [np.nan_to_num(cloud.fields[c][idx]) for c in names]
                u = cols
        return [physics.energy_residual(jets["T"], sub.props, u, source)]


def _sum(nodes):
    out = nodes[0]
    for n in nodes[1:]:
        out = out + n
    return out


# ---------------------------------------------------------------------------
# history

@dataclass
class TrainHistory:
    components: list[str]
    weighted: list[str]
    records: list[dict] = field(default_factory=list)
    events: list[str] = field(default_factory=list)

    def append(self, rec: dict) -> None:
        if self.records and rec["step"] <= self.records[-1]["step"]:
            raise ValueError("history steps must increase strictly")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.records], dtype=float)

    @property
    def header(self) -> list[str]:
        return (["step", "phase", "total"] + [f"loss_{c}" for c in self.components]
                + [f"lambda_{c}" for c in self.weighted] + [f"lambda_hat_{c}" for c in self.weighted]
                + ["lr", "grad_norm"])

    def to_csv(self, path) -> None:
        """Write every record; wall time is kept out so files are reproducible."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for r in self.records:
                row = []
                for h in self.header:
                    v = r.get(h, "")
                    if isinstance(v, float):
                        v = "" if math.isnan(v) else format(v, ".17g")
                    row.append(v)
                w.writerow(row)


# ---------------------------------------------------------------------------
# training

class Trainer:
    """Stateful driver; :func:`train` is the usual entry point."""

    def __init__(self, problem: PinnProblem, config: TrainConfig, out_dir=None):
        self.problem = problem
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        kinds = sorted({k for ph in config.phases for k in ph.losses}, key=LOSS_KINDS.index)
        comps = problem.components(kinds)
        weighted = [c for c in comps if c != "residual"]
        self.history = TrainHistory(comps, weighted)
        self.weights = {c: float(config.weights.get(c, 1.0)) for c in weighted}
        self.anneal = None
        if config.anneal.enabled:
            self.anneal = AnnealingState.initial(weighted, self._thresholds(weighted), config.anneal.alpha,
                                                 config.anneal.threshold)
            self.anneal.lambdas.update({c: self.weights[c] for c in weighted})
        self.adam = AdamState.zeros(problem.model.flat().size)
        self.batches: dict[str, np.ndarray] = {}
        self._last_good = problem.model.flat().copy()

    def _thresholds(self, weighted):
        th = dict(self.config.anneal.thresholds)
        return {c: th.get(c, self.config.anneal.threshold) for c in weighted}

    def batch_size(self, n: int) -> int:
        return min(n, max(self.config.min_batch, int(math.floor(self.config.batch_fraction * n + 0.5)), 1))

    def resample(self) -> None:
        """Draw new minibatch indices for every point group (fixed group order)."""
        self.batches = {}
        for name, idx in self.problem.groups.items():
            k = self.batch_size(len(idx))
            pick = idx if k == len(idx) else idx[np.sort(self.rng.choice(len(idx), size=k, replace=False))]
            self.batches[name] = pick

    def _grads(self, tape, node, adj=None) -> np.ndarray:
        adj = tape.backward(node) if adj is None else adj
        return np.concatenate([grad_params(tape, node, s, adj) for s in self.problem.model.stores])

    def current_weights(self) -> dict[str, float]:
        return dict(self.anneal.lambdas) if self.anneal is not None else dict(self.weights)

    def apply_annealing(self, losses: dict[str, float], grads: dict[str, np.ndarray],
                        grad_residual: np.ndarray) -> dict[str, float]:
        """Update the adaptive weights and return this update's lambda_hat values."""
        active = {c: self.anneal.lambdas[c] for c in losses if c in self.anneal.lambdas}
        sub = AnnealingState(active, {c: self.anneal.thresholds[c] for c in active}, self.anneal.alpha)
        sub.update(losses, grads, grad_residual)
        self.anneal.lambdas.update(sub.lambdas)
        self.anneal.last_hat = sub.last_hat
        self.anneal.history.append(dict(self.anneal.lambdas))
        return sub.last_hat

    def record(self, phase: str, losses: dict[str, float], total: float, lr: float, gnorm: float,
               hats: dict[str, float] | None = None, started: float | None = None) -> None:
        rec = {"step": self.step, "phase": phase, "total": float(total), "lr": float(lr),
               "grad_norm": float(gnorm)}
        for c, v in losses.items():
            rec[f"loss_{c}"] = float(v)
        for c, v in self.current_weights().items():
            rec[f"lambda_{c}"] = float(v)
        for c, v in (hats or {}).items():
            rec[f"lambda_hat_{c}"] = float(v)
        rec["wall_time"] = time.perf_counter() - started if started is not None else 0.0
        self.history.append(rec)

    def run(self):
        cfg = self.config
        model = self.problem.model
        started = time.perf_counter()
        flat = model.flat()
        for phase in cfg.phases:
            comps = self.problem.components(phase.losses)
            if not comps:
                raise ValueError(f"phase {phase.name!r} has no loss components for this problem")
            for _ in range(phase.max_steps):
                if self.step % cfg.resample_every == 0 or not self.batches:
                    self.resample()
                lr = learning_rate(self.step, cfg.lr0, cfg.lr_decay, cfg.decay_every)
                try:
                    tape = Tape()
                    nodes = self.problem.losses(tape, self.batches, phase.losses)
                    hats = None
                    anneal_now = (self.anneal is not None and phase.physics and "residual" in nodes
                                  and self.step % cfg.anneal.every == 0)
                    if anneal_now:
                        g_r = self._grads(tape, nodes["residual"])
                        vals = {c: float(n.value) for c, n in nodes.items() if c != "residual"}
                        grads = {c: self._grads(tape, n) for c, n in nodes.items() if c != "residual"}
                        hats = self.apply_annealing(vals, grads, g_r)
                    weights = self.current_weights()
                    total = physics.total_loss(nodes, weights)
                    grad = self._grads(tape, total)
                except NumericFault as exc:
                    self._diverge(f"step {self.step}: {exc}")
                tval = float(total.value)
                if not math.isfinite(tval) or tval > cfg.divergence:
                    self._diverge(f"step {self.step}: total loss {tval:.3g} exceeds {cfg.divergence:.3g}")
                grad, gnorm = clip_global_norm(grad, cfg.clip_norm)
                flat, self.adam, applied = adam_step(flat, grad, self.adam, lr)
                if not applied:
                    self.history.events.append(f"step {self.step}: non-finite gradient, update skipped")
                model.set_flat(flat)
                if self.step % cfg.log_every == 0 or hats is not None:
                    self.record(phase.name, {c: float(n.value) for c, n in nodes.items()}, tval, lr, gnorm,
                                hats, started)
                    self._last_good = flat.copy()
                self.step += 1
            self._checkpoint(phase.name)
        return model, self.history

    def _diverge(self, message: str):
        self.problem.model.set_flat(self._last_good)
        self.history.events.append(message)
        self._checkpoint("last_good")
        raise TrainingDiverged(message, self.problem.model, self.history)

    def _checkpoint(self, tag: str) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for region, sub in self.problem.model.subdomains.items():
            save_checkpoint(self.out_dir / f"checkpoint_{tag}_{region}.json", sub.params, sub.config,
                            {"region": region, "physics": sub.physics, "step": self.step})


def train(problem: PinnProblem, config: TrainConfig, out_dir=None):
    """Run every phase of ``config``; returns ``(model, history)``."""
    return Trainer(problem, config, out_dir).run()


def evaluate_losses(problem: PinnProblem, kinds=LOSS_KINDS) -> dict[str, float]:
    """Unweighted loss components on every point of the problem (no minibatching)."""
    tape = Tape()
    nodes = problem.losses(tape, problem.groups, kinds)
    return {c: float(n.value) for c, n in nodes.items()}
