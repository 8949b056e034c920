"""Desk-scale benchmark problems with analytic reference solutions."""

from __future__ import annotations

import math

import numpy as np

from .geometry import Box, PointCloud, TwoSlab, sample_domain, select_sparse_data
from .network import NetworkConfig
from .physics import BoundarySpec, MaterialProps, ParabolicProfile
from .trainer import (DecomposedModel, InterfaceSpec, PinnProblem, Subdomain, fit_normalization)


# ---------------------------------------------------------------------------
# Poisson on the unit square

def poisson_exact(x):
    x = np.atleast_2d(x)
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


def poisson_source(x):
    """Source ``q`` with ``lap(T) + q = 0`` for the sine-product solution."""
    return 2.0 * np.pi ** 2 * poisson_exact(x)


def poisson_problem(n_interior=2000, n_face=100, hidden=(32, 32), seed=0) -> PinnProblem:
    box = Box([0.0, 0.0], [1.0, 1.0])
    cloud = sample_domain(box, n_interior, {f: n_face for f in box.faces}, seed=seed)
    cfg = NetworkConfig(2, ["T"], list(hidden), seed=seed + 1)
    fit_normalization(cfg, cloud)
    sub = Subdomain("main", cfg, physics="poisson", source=poisson_source)
    specs = [BoundarySpec(f, "T", "dirichlet", 0.0) for f in box.faces]
    return PinnProblem(DecomposedModel.single(sub), cloud, specs)


# ---------------------------------------------------------------------------
# plane Poiseuille flow

POISEUILLE_BOX = ([0.0, -0.5], [1.0, 0.5])


def poiseuille(x, peak=1.0, half_width=0.5, nu=0.1, rho=1.0, length=1.0) -> dict[str, np.ndarray]:
    """Fully developed channel flow, outlet pressure zero at ``x = length``."""
    x = np.atleast_2d(x)
    grad = 2.0 * rho * nu * peak / half_width ** 2
    return {"u": peak * (1.0 - (x[:, 1] / half_width) ** 2), "v": np.zeros(len(x)),
            "p": grad * (length - x[:, 0]) / rho}


def poiseuille_problem(n_interior=1000, n_face=100, nu=0.1, hidden=(32, 32), data_fraction=0.0,
                       seed=0) -> PinnProblem:
    """Channel with parabolic inlet, no-slip walls and a zero-pressure, zero-gradient outlet.

    ``data_fraction > 0`` adds that share of the interior points, carrying
    the exact solution, as sparse data.
    """
    box = Box(*POISEUILLE_BOX)
    cloud = sample_domain(box, n_interior, {f: n_face for f in box.faces}, seed=seed)
    if data_fraction > 0:
        cloud.fields.update(poiseuille(cloud.points, nu=nu))
        cloud = PointCloud.concat([cloud, select_sparse_data(cloud.with_tag("interior"), data_fraction, seed)])
    cfg = NetworkConfig(2, ["u", "v", "p"], list(hidden), seed=seed + 1)
    fit_normalization(cfg, cloud)
    sub = Subdomain("main", cfg, physics="ns", props=MaterialProps(rho=1.0, nu=nu))
    inlet = ParabolicProfile(1.0, [0.0, 0.0], 0.5, axis=0)
    specs = [BoundarySpec("xmin", "u", value=inlet), BoundarySpec("xmin", "v", value=0.0),
             BoundarySpec("ymin", "u", value=0.0), BoundarySpec("ymin", "v", value=0.0),
             BoundarySpec("ymax", "u", value=0.0), BoundarySpec("ymax", "v", value=0.0),
             BoundarySpec("xmax", "p", value=0.0),
             BoundarySpec("xmax", "u", "neumann", 0.0), BoundarySpec("xmax", "v", "neumann", 0.0)]
    return PinnProblem(DecomposedModel.single(sub), cloud, specs)


# ---------------------------------------------------------------------------
# Kovasznay flow

KOVASZNAY_BOX = ([-0.5, -0.5], [1.0, 1.5])


def kovasznay_lambda(re: float) -> float:
    return re / 2.0 - math.sqrt(re * re / 4.0 + 4.0 * math.pi ** 2)


def kovasznay(x, re: float = 40.0) -> dict[str, np.ndarray]:
    """Exact steady Navier-Stokes solution with ``rho = 1`` and ``nu = 1/re``."""
    x = np.atleast_2d(x)
    lam = kovasznay_lambda(re)
    e = np.exp(lam * x[:, 0])
    return {
        "u": 1.0 - e * np.cos(2 * np.pi * x[:, 1]),
        "v": lam / (2 * np.pi) * e * np.sin(2 * np.pi * x[:, 1]),
        "p": 0.5 * (1.0 - e * e),
    }


def kovasznay_cloud(n_nodes=10_000, n_face=100, re=40.0, seed=0) -> PointCloud:
    """Interior "nodes" and boundary points carrying the exact solution."""
    box = Box(*KOVASZNAY_BOX)
    cloud = sample_domain(box, n_nodes, {f: n_face for f in box.faces}, seed=seed)
    cloud.fields.update(kovasznay(cloud.points, re))
    return cloud


def kovasznay_case(cloud: PointCloud, data_fraction: float, with_physics: bool, re=40.0,
                   hidden=(40, 40, 40), seed=0) -> PinnProblem:
    """Hybrid (or data-only) flow problem: sparse node data plus optional physics.

    Physics cases add the momentum/continuity residual on every interior
    node and Dirichlet velocity on the four faces.
    """
    nodes = cloud.with_tag("interior")
    data = select_sparse_data(nodes, data_fraction, seed=seed)
    parts = [data]
    specs = []
    if with_physics:
        parts.insert(0, nodes)
        for tag in cloud.tag_set:
            if tag.startswith("boundary:"):
                parts.append(cloud.with_tag(tag))
                name = tag.split(":", 1)[1]
                specs += [BoundarySpec(name, "u", value="tabulated"), BoundarySpec(name, "v", value="tabulated")]
    full = PointCloud.concat(parts)
    cfg = NetworkConfig(2, ["u", "v", "p"], list(hidden), seed=seed + 1)
    fit_normalization(cfg, full)
    sub = Subdomain("main", cfg, physics="ns" if with_physics else "none",
                    props=MaterialProps(rho=1.0, nu=1.0 / re))
    return PinnProblem(DecomposedModel.single(sub), full, specs)


# ---------------------------------------------------------------------------
# two-slab conduction

def two_slab_exact(x, k1=2.0, k2=1.0, t_left=1.0, t_right=0.0, lo=0.0, interface=0.5, hi=1.0):
    """Piecewise-linear steady temperature with flux continuity at the interface."""
    x = np.asarray(x, dtype=float).reshape(-1)
    r1 = (interface - lo) / k1
    r2 = (hi - interface) / k2
    q = (t_left - t_right) / (r1 + r2)
    t_i = t_left - q * r1
    return np.where(x <= interface, t_left - q * (x - lo) / k1, t_i - q * (x - interface) / k2)


def two_slab_problem(k1=2.0, k2=1.0, n_interior=200, hidden=(16, 16), seed=0) -> PinnProblem:
    shape = TwoSlab(0.0, 0.5, 1.0)
    cloud = sample_domain(shape, n_interior, {"left": 1, "right": 1}, seed=seed, n_interface=1)
    subs = {}
    for j, (region, k) in enumerate((("slab1", k1), ("slab2", k2))):
        cfg = NetworkConfig(1, ["T"], list(hidden), seed=seed + 10 + j)
        fit_normalization(cfg, cloud, region, single=False)
        subs[region] = Subdomain(region, cfg, physics="energy", props=MaterialProps(k=k))
    model = DecomposedModel(subs, [InterfaceSpec("iface", ("slab1", "slab2"), "T")])
    specs = [(BoundarySpec("left", "T", value=1.0), "slab1"), (BoundarySpec("right", "T", value=0.0), "slab2")]
    return PinnProblem(model, cloud, specs)


# ---------------------------------------------------------------------------
# high-frequency regression

def spectral_bias_data(n=256, freq=16.0):
    x = np.linspace(0.0, 1.0, n)
    return x, np.sin(freq * np.pi * x)


def regression_problem(x, y, config: NetworkConfig) -> PinnProblem:
    """Pure data fit of a scalar field ``T`` on 1D inputs."""
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    cloud = PointCloud(x, np.array(["data"] * len(x), dtype=object), {"T": np.asarray(y, dtype=float)})
    fit_normalization(config, cloud)
    return PinnProblem(DecomposedModel.single(Subdomain("main", config)), cloud)
