"""Penalty-method particle swarm optimisation over a design box.

Objectives and constraint metrics are *batched*: they take an ``(N, d)``
array of design points and return ``N`` values.  That keeps the grid
oracle cheap and lets a whole swarm be scored in one surrogate call.

Fitness of a point ``u`` is::

    f(u) + sum_i lam_i * (g_i(u) - X_i)**2 * [g_i(u) > X_i] + beta * #violations

with ``g_i - X_i`` optionally divided by ``|X_i|`` so that one ``lam`` suits
constraints of very different magnitude.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import Axis, DesignSpace

Metric = Callable[[np.ndarray], np.ndarray]


@dataclass
class PSOConfig:
    n_particles: int = 30
    w: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    lambda_penalty: float | dict = 1e3
    beta: float = 1e4
    max_iters: int = 200
    seed: int = 0
    normalize: bool = True
    v_clamp: float = 0.5    # fraction of each axis range
    v_init: float = 0.1

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        for k in ("w", "c1", "c2", "beta", "v_clamp", "v_init"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def lam(self, name: str) -> float:
        if isinstance(self.lambda_penalty, dict):
            return float(self.lambda_penalty.get(name, 1e3))
        return float(self.lambda_penalty)


@dataclass
class ConstraintSpec:
    """``metric(u) <= bound``."""
    name: str
    metric: Metric
    bound: float

    def __post_init__(self):
        if not math.isfinite(self.bound):
            raise ValueError(f"constraint {self.name!r} needs a finite bound")


@dataclass
class Problem:
    space: DesignSpace
    objective: Metric
    constraints: list[ConstraintSpec] = field(default_factory=list)
    sense: str = "min"

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")

    def f(self, U: np.ndarray) -> np.ndarray:
        v = np.asarray(self.objective(U), dtype=float).reshape(-1)
        return -v if self.sense == "max" else v


def _batch(fn: Metric, U: np.ndarray) -> np.ndarray:
    """Evaluate in one call; fall back to point-by-point so one failure only hurts one point."""
    try:
        out = np.asarray(fn(U), dtype=float).reshape(-1)
        if out.shape == (len(U),):
            return out
    except Exception:
        pass
    out = np.empty(len(U))
    for i, u in enumerate(U):
        try:
            out[i] = float(np.asarray(fn(u[None, :]), dtype=float).reshape(-1)[0])
        except Exception:
            out[i] = np.nan
    return out


def score(problem: Problem, U, config: PSOConfig):
    """Penalised fitness, raw objective and feasibility for a batch of points.

    Points whose surrogate evaluation fails (exception or non-finite value)
    get ``+inf`` fitness and count as infeasible.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    f = _batch(problem.f, U)
    fit = f.copy()
    broken = ~np.isfinite(f)
    feasible = np.ones(len(U), dtype=bool)
    for c in problem.constraints:
        g = _batch(c.metric, U)
        broken |= ~np.isfinite(g)
        over = np.where(np.isfinite(g), g - c.bound, 0.0)
        if config.normalize and c.bound != 0.0:
            over = over / abs(c.bound)
        viol = over > 0.0
        fit = fit + np.where(viol, config.lam(c.name) * over * over + config.beta, 0.0)
        feasible &= ~viol
    broken |= ~np.isfinite(fit)
    fit = np.where(broken, np.inf, fit)
    return fit, f, feasible & ~broken


def penalty_objective(f, constraints, u, config: PSOConfig) -> float:
    """Penalised fitness of a single design point.

    ``f`` and each constraint metric are batched callables; ``u`` is one point.
    """
    prob = Problem(None, f, list(constraints))  # scoring never looks at the box
    return float(score(prob, np.atleast_1d(np.asarray(u, dtype=float))[None, :], config)[0][0])


# ---------------------------------------------------------------------------
# swarm

@dataclass
class Swarm:
    lo: np.ndarray
    hi: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    fitness: np.ndarray
    raw: np.ndarray
    feasible: np.ndarray
    pbest_pos: np.ndarray
    pbest_fit: np.ndarray
    gbest_pos: np.ndarray
    gbest_fit: float
    rngs: list = field(repr=False, default_factory=list)
    iteration: int = 0

    @property
    def n(self) -> int:
        return len(self.positions)


def init_swarm(problem: Problem, config: PSOConfig) -> Swarm:
    """Uniform positions, small random velocities, one RNG stream per particle."""
    lo, hi = problem.space.lo, problem.space.hi
    span = hi - lo
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.n_particles)]
    pos = np.array([lo + r.random(len(lo)) * span for r in rngs])
    vel = np.array([(2.0 * r.random(len(lo)) - 1.0) * config.v_init * span for r in rngs])
    fit, raw, feas = score(problem, pos, config)
    g = int(np.argmin(fit))
    return Swarm(lo, hi, pos, vel, fit, raw, feas, pos.copy(), fit.copy(), pos[g].copy(), float(fit[g]), rngs)


def pso_step(swarm: Swarm, problem: Problem, config: PSOConfig) -> Swarm:
    """Velocity update, then position update, clamping, rescoring and best tracking (in place)."""
    span = swarm.hi - swarm.lo
    vmax = config.v_clamp * span
    for i in range(swarm.n):
        r1, r2 = swarm.rngs[i].random(2)
        u = swarm.positions[i]
        v = (config.w * swarm.velocities[i]
             + config.c1 * r1 * (swarm.pbest_pos[i] - u)
             + config.c2 * r2 * (swarm.gbest_pos - u))
        v = np.clip(v, -vmax, vmax)
        u = u + v
        out = (u < swarm.lo) | (u > swarm.hi)
        u = np.clip(u, swarm.lo, swarm.hi)
        v[out] = 0.0
        swarm.positions[i] = u
        swarm.velocities[i] = v
    fit, raw, feas = score(problem, swarm.positions, config)
    swarm.fitness, swarm.raw, swarm.feasible = fit, raw, feas
    better = fit < swarm.pbest_fit
    swarm.pbest_pos[better] = swarm.positions[better]
    swarm.pbest_fit[better] = fit[better]
    g = int(np.argmin(swarm.pbest_fit))
    if swarm.pbest_fit[g] < swarm.gbest_fit:
        swarm.gbest_fit = float(swarm.pbest_fit[g])
        swarm.gbest_pos = swarm.pbest_pos[g].copy()
    swarm.iteration += 1
    return swarm


def snapshot_rows(swarm: Swarm) -> list[list]:
    return [[swarm.iteration, i, *swarm.positions[i].tolist(), float(swarm.fitness[i]), int(swarm.feasible[i])]
            for i in range(swarm.n)]


@dataclass
class OptimizeResult:
    best: np.ndarray              # best feasible point, or best penalised one if none was feasible
    best_objective: float         # raw objective in the problem's own sense
    best_fitness: float
    feasible: bool
    swarm: Swarm
    snapshots: dict[int, list[list]]
    gbest_history: list[float]
    names: list[str]

    def write_snapshots(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for it, rows in sorted(self.snapshots.items()):
            p = out_dir / f"swarm_iter_{it:05d}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iteration", "particle", *self.names, "fitness", "feasible"])
                for r in rows:
                    w.writerow([r[0], r[1], *[format(v, ".17g") for v in r[2:-1]], r[-1]])
            paths.append(p)
        return paths

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "gbest_fitness"])
            for i, v in enumerate(self.gbest_history):
                w.writerow([i, format(v, ".17g")])


def optimize(problem: Problem, config: PSOConfig | None = None) -> OptimizeResult:
    """Run ``max_iters`` swarm steps.

    The returned point is the lowest raw objective among all feasible
    evaluations seen during the run.  If nothing feasible turned up the
    global best of the penalised fitness is returned with ``feasible=False``.
    """
    config = config or PSOConfig()
    swarm = init_swarm(problem, config)
    sense = -1.0 if problem.sense == "max" else 1.0
    best_u, best_f = None, np.inf

    def harvest():
        nonlocal best_u, best_f
        if swarm.feasible.any():
            idx = np.flatnonzero(swarm.feasible)
            j = idx[int(np.argmin(swarm.raw[idx]))]
            if swarm.raw[j] < best_f:
                best_f, best_u = float(swarm.raw[j]), swarm.positions[j].copy()

    mid = config.max_iters // 2
    snaps = {0: snapshot_rows(swarm)}
    history = [swarm.gbest_fit]
    harvest()
    for _ in range(config.max_iters):
        pso_step(swarm, problem, config)
        harvest()
        history.append(swarm.gbest_fit)
        if swarm.iteration in (mid, config.max_iters):
            snaps[swarm.iteration] = snapshot_rows(swarm)
    if best_u is not None:
        return OptimizeResult(best_u, sense * best_f, best_f, True, swarm, snaps, history, problem.space.names)
    raw = problem.f(swarm.gbest_pos[None, :])[0]
    return OptimizeResult(swarm.gbest_pos.copy(), sense * raw, swarm.gbest_fit, False, swarm, snaps, history,
                          problem.space.names)


# ---------------------------------------------------------------------------
# brute-force oracle

def grid_search(problem: Problem, per_axis: int = 101, config: PSOConfig | None = None, chunk: int = 200_000):
    """Exhaustive search on a regular grid (endpoints included).

    Returns ``(point, objective)`` of the best feasible cell, the objective
    in the problem's own sense, or ``(None, nan)`` if no cell is feasible.
    """
    config = config or PSOConfig()
    axes = [np.linspace(a.lo, a.hi, per_axis) for a in problem.space.axes]
    cells = per_axis ** len(axes)
    if cells > 10 ** 7:
        raise ValueError(f"grid of {cells} cells is too large")
    best_u, best_f = None, np.inf
    for start in range(0, cells, chunk):
        flat = np.arange(start, min(cells, start + chunk))
        idx = np.unravel_index(flat, [per_axis] * len(axes))
        U = np.stack([ax[i] for ax, i in zip(axes, idx)], axis=1)
        _, f, feas = score(problem, U, config)
        f = np.where(feas, f, np.inf)
        j = int(np.argmin(f))
        if f[j] < best_f:
            best_f, best_u = float(f[j]), U[j].copy()
    if best_u is None:
        return None, float("nan")
    return best_u, -best_f if problem.sense == "max" else best_f


# ---------------------------------------------------------------------------
# metric library used by problem files

def sphere(U):
    return np.sum(np.atleast_2d(U) ** 2, axis=1)


def rosenbrock(U):
    U = np.atleast_2d(U)
    return np.sum(100.0 * (U[:, 1:] - U[:, :-1] ** 2) ** 2 + (1.0 - U[:, :-1]) ** 2, axis=1)


def rastrigin(U):
    U = np.atleast_2d(U)
    return 10.0 * U.shape[1] + np.sum(U * U - 10.0 * np.cos(2.0 * np.pi * U), axis=1)


def coordinate(j: int, sign: float = 1.0) -> Metric:
    return lambda U: sign * np.atleast_2d(U)[:, j]


def heat_sink_toy(U) -> dict[str, np.ndarray]:
    """Closed-form stand-in for a heat-sink surrogate.

    Columns are inflow velocity [m/s], fin height [mm] and chip power [W].
    Pressure drop grows with velocity squared and fin height; the chip runs
    hotter with power and cooler with more flow and more fin area.  Only
    the qualitative trade-off is meant to resemble the real device.
    """
    U = np.atleast_2d(U)
    vel, h, q = U[:, 0], U[:, 1], U[:, 2]
    dp = 0.22 * vel ** 2 * (1.0 + 0.04 * (h - 15.0))
    resist = 3.6 / (vel ** 0.6 * (1.0 + 0.05 * (h - 15.0)))
    return {"power": q, "delta_p": dp, "t_max": 300.0 + q * resist}


BUILTIN = {
    "sphere": lambda spec: sphere,
    "rosenbrock": lambda spec: rosenbrock,
    "rastrigin": lambda spec: rastrigin,
    "coordinate": lambda spec: coordinate(int(spec["index"]), float(spec.get("sign", 1.0))),
    "heat_sink_toy": lambda spec: (lambda U, k=spec["output"]: heat_sink_toy(U)[k]),
}


class NetworkMetric:
    """Design metric read off a parametric surrogate network.

    The network's leading ``param_inputs`` inputs are the design variables;
    the remaining inputs are the fixed spatial ``points``.  For each design
    the chosen field is reduced over the points with ``mean`` (pressure
    drop over an inlet) or ``max`` (peak temperature).
    """

    def __init__(self, params, config, points, field: str, reduce: str = "mean"):
        from .network import forward_named
        self._fwd = forward_named
        self.params, self.config = params, config
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if config.param_inputs < 1:
            raise ValueError("surrogate network has no design-parameter inputs")
        if field not in config.output_names:
            raise ValueError(f"network has no output {field!r}")
        if reduce not in ("mean", "max", "min"):
            raise ValueError("reduce must be mean, max or min")
        self.field, self.reduce = field, reduce

    def __call__(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        m = len(self.points)
        out = np.empty(len(U))
        for i, u in enumerate(U):
            x = np.hstack([np.repeat(u[None, :], m, axis=0), self.points])
            vals = self._fwd(self.params, self.config, x)[self.field]
            out[i] = getattr(np, self.reduce)(vals)
        return out


def _metric_from_spec(spec: dict, base: Path) -> Metric:
    if "builtin" in spec:
        name = spec["builtin"]
        if name not in BUILTIN:
            raise ValueError(f"unknown builtin metric {name!r}; choose from {sorted(BUILTIN)}")
        return BUILTIN[name](spec)
    if "checkpoint" in spec:
        from .geometry import load_cloud
        from .network import load_checkpoint
        params, cfg, _ = load_checkpoint(base / spec["checkpoint"])
        cloud = load_cloud(base / spec["points"])
        pts = cloud.points
        if "tag" in spec:
            from .evaluation import region_mask
            m = region_mask(cloud, spec["tag"])
            if not m.any():
                raise ValueError(f"no points tagged {spec['tag']!r} in {spec['points']}")
            pts = pts[m]
        return NetworkMetric(params, cfg, pts, spec["field"], spec.get("reduce", "mean"))
    raise ValueError("a metric needs either 'builtin' or 'checkpoint'")


def load_problem(path) -> tuple[Problem, PSOConfig]:
    """Read a JSON problem file (see ``docs/config_reference.md``)."""
    path = Path(path)
    doc = json.loads(path.read_text())
    unknown = set(doc) - {"space", "objective", "constraints", "pso"}
    if unknown:
        raise ValueError(f"unknown keys in problem file: {sorted(unknown)}")
    space = DesignSpace([Axis(a["name"], float(a["lo"]), float(a["hi"]), a.get("unit", "")) for a in doc["space"]])
    obj = doc["objective"]
    problem = Problem(space, _metric_from_spec(obj, path.parent),
                      [ConstraintSpec(c["name"], _metric_from_spec(c, path.parent), float(c["bound"]))
                       for c in doc.get("constraints", [])],
                      obj.get("sense", "min"))
    return problem, PSOConfig(**doc.get("pso", {}))


def config_dict(config: PSOConfig) -> dict:
    return asdict(config)
