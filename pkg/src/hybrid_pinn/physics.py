"""PDE residuals and loss terms assembled on a tape.

All functions take :class:`~hybrid_pinn.autodiff.Jet` objects whose nodes
have shape (N,) and return tape nodes, so the composite loss can be
differentiated with respect to the network parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .autodiff import Jet, Node, Tape

VELOCITY = ("u", "v", "w")


@dataclass
class MaterialProps:
    rho: float = 1.0
    nu: float = 1.0
    k: float = 1.0
    s: float = 1.0
    q_src: float = 0.0

    def __post_init__(self):
        for name in ("rho", "nu", "k", "s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"material property {name} must be positive")
        if self.q_src < 0:
            raise ValueError("q_src must be nonnegative")


@dataclass
class ParabolicProfile:
    """``peak * (1 - (r / radius)**2)`` with ``r`` measured from the axis
    through ``center`` along coordinate ``axis``."""

    peak: float
    center: list
    radius: float
    axis: int = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        off = x - np.asarray(self.center, dtype=float)[: x.shape[1]]
        off[:, self.axis] = 0.0
        r2 = np.sum(off * off, axis=1)
        return self.peak * (1.0 - r2 / self.radius ** 2)


BoundaryValue = Union[float, ParabolicProfile, Callable, str, None]


@dataclass
class BoundarySpec:
    """Condition ``Phi(field) = g`` on points tagged ``boundary:<tag>``.

    ``value`` is a constant, a :class:`ParabolicProfile`, any callable of
    the (N, d) coordinates, or ``"tabulated"`` to read the target from the
    cloud's column of the same field name.
    """

    tag: str
    field: str
    kind: str = "dirichlet"
    value: BoundaryValue = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ValueError(f"boundary kind must be dirichlet or neumann, got {self.kind!r}")

    def target(self, x: np.ndarray, tabulated: np.ndarray | None = None) -> np.ndarray:
        n = len(x)
        if isinstance(self.value, str):
            if self.value != "tabulated":
                raise ValueError(f"unknown boundary value {self.value!r}")
            if tabulated is None or not np.all(np.isfinite(tabulated)):
                raise ValueError(f"boundary '{self.tag}' needs tabulated '{self.field}' values")
            return np.asarray(tabulated, dtype=float)
        if callable(self.value):
            return np.broadcast_to(np.asarray(self.value(x), dtype=float), (n,)).copy()
        return np.full(n, 0.0 if self.value is None else float(self.value))


def _velocity(jets: dict[str, Jet]) -> list[Jet]:
    d = next(iter(jets.values())).dim
    missing = [c for c in VELOCITY[:d] if c not in jets]
    if missing or "p" not in jets:
        raise ValueError(f"flow residual needs jets for {VELOCITY[:d]} and p, missing {missing or ['p']}")
    return [jets[c] for c in VELOCITY[:d]]


def ns_residual(jets: dict[str, Jet], props: MaterialProps, nu_t=0.0) -> list[Node]:
    """Continuity and momentum residuals of steady incompressible (RANS) flow.

    ``nu_t`` is the eddy viscosity, a scalar or per-point array; zero gives
    the laminar equations.  Returns ``[div u, mom_x, mom_y(, mom_z)]``.
    """
    vel = _velocity(jets)
    p = jets["p"]
    d = len(vel)
    if any(c.order < 2 for c in vel):
        raise ValueError("velocity jets must carry first and second derivatives")
    if p.order < 1:
        raise ValueError("pressure jet must carry first derivatives")
    nu_eff = props.nu + np.asarray(nu_t, dtype=float)
    if np.any(nu_eff < props.nu):
        raise ValueError("eddy viscosity must be nonnegative")

    cont = vel[0].grad(0)
    for j in range(1, d):
        cont = cont + vel[j].grad(j)
    out = [cont]
    for i in range(d):
        ui = vel[i]
        conv = vel[0].value * ui.grad(0)
        for j in range(1, d):
            conv = conv + vel[j].value * ui.grad(j)
        lap = ui.lap_term(0)
        for j in range(1, d):
            lap = lap + ui.lap_term(j)
        out.append(conv + p.grad(i) * (1.0 / props.rho) - lap * nu_eff)
    return out


def energy_residual(T: Jet, props: MaterialProps, u=None, source=None) -> Node:
    """``k lap(T) + q - rho s u.grad(T)``.

    ``u`` is a list of per-component arrays or nodes (``None`` in solids);
    ``source`` overrides ``props.q_src`` with a scalar or per-point array.
    """
    d = T.dim
    if T.order < 2:
        raise ValueError("temperature jet must carry second derivatives")
    lap = T.lap_term(0)
    for j in range(1, d):
        lap = lap + T.lap_term(j)
    q = props.q_src if source is None else np.asarray(source, dtype=float)
    r = lap * props.k + q
    if u is not None:
        adv = None
        for j, uj in enumerate(u):
            if isinstance(uj, Jet):
                uj = uj.value
            term = T.grad(j) * uj
            adv = term if adv is None else adv + term
        if adv is not None:
            r = r - adv * (props.rho * props.s)
    return r


def boundary_loss(jets: dict[str, Jet], spec: BoundarySpec, x: np.ndarray,
                  normals: np.ndarray | None = None, tabulated: np.ndarray | None = None) -> Node:
    """Mean squared mismatch of ``Phi(field)`` against the spec's target."""
    jet = jets[spec.field]
    g = spec.target(np.atleast_2d(x), tabulated)
    if spec.kind == "dirichlet":
        pred = jet.value
    else:
        if normals is None or not np.all(np.isfinite(normals)):
            raise ValueError(f"neumann boundary '{spec.tag}' requires normals on every point")
        normals = np.atleast_2d(normals)
        pred = None
        for k in range(jet.dim):
            term = jet.grad(k) * normals[:, k]
            pred = term if pred is None else pred + term
    diff = pred - g
    return _mean_sq(diff)


def _mean_sq(node: Node) -> Node:
    tape = node.tape
    return tape.mean(tape.square(node))


def residual_loss(residuals: list[Node]) -> Node:
    """Mean over points of the summed squared residual components."""
    if not residuals:
        raise ValueError("no residual components")
    tape = residuals[0].tape
    n = residuals[0].value.size
    if n == 0:
        raise ValueError("empty collocation set")
    total = tape.sum(tape.square(residuals[0]))
    for r in residuals[1:]:
        total = total + tape.sum(tape.square(r))
    return total * (1.0 / n)


def data_loss(jets: dict[str, Jet], measured: dict[str, np.ndarray]) -> Node:
    """Squared error averaged over points and supplied channels.

    NaN entries in ``measured`` mark missing values and are skipped.
    """
    if not measured:
        raise ValueError("no measured channels supplied")
    total, count = None, 0
    for name, vals in measured.items():
        vals = np.asarray(vals, dtype=float)
        if vals.size == 0:
            raise ValueError("empty data point set")
        mask = np.isfinite(vals)
        if not mask.any():
            continue
        diff = jets[name].value - np.where(mask, vals, 0.0)
        if not mask.all():
            diff = diff * mask.astype(float)
        term = diff.tape.sum(diff.tape.square(diff))
        total = term if total is None else total + term
        count += int(mask.sum())
    if total is None:
        raise ValueError("measured channels contain no finite values")
    return total * (1.0 / count)


def interface_losses(T1: Jet, T2: Jet, n1: np.ndarray, n2: np.ndarray, k1: float, k2: float,
                     atol: float = 1e-12) -> tuple[Node, Node]:
    """Flux- and value-continuity losses across an interface.

    ``n1`` is the outward unit normal of side 1 and must equal ``-n2``.
    The value term averages over points and both sides the squared
    deviation from the two-side mean.
    """
    n1 = np.atleast_2d(np.asarray(n1, dtype=float))
    n2 = np.atleast_2d(np.asarray(n2, dtype=float))
    if n1.shape != n2.shape or not np.allclose(n1, -n2, rtol=0, atol=atol):
        raise ValueError("interface normals must satisfy n2 = -n1")
    flux = None
    for k in range(T1.dim):
        term = T1.grad(k) * (-k1 * n1[:, k]) + T2.grad(k) * (-k2 * n2[:, k])
        flux = term if flux is None else flux + term
    jump = T1.value - T2.value
    # both sides deviate from the mean by jump/2
    l_val = _mean_sq(jump) * 0.25
    return _mean_sq(flux), l_val


@dataclass
class LossBreakdown:
    """Named loss nodes with their weights; ``residual`` has implicit weight 1."""

    components: dict[str, Node] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {k: float(v.value) for k, v in self.components.items()}

    def total(self) -> Node:
        return total_loss(self.components, self.weights)


def total_loss(components: dict[str, Node], weights: dict[str, float]) -> Node:
    """``L_r + sum_i lambda_i L_i`` over the supplied components."""
    out = None
    for name, node in components.items():
        if name == "residual":
            term = node
        else:
            lam = float(weights.get(name, 1.0))
            if lam < 0:
                raise ValueError(f"negative weight for loss component {name!r}")
            term = node * lam
        out = term if out is None else out + term
    if out is None:
        raise ValueError("no loss components")
    return out


def coordinate_jets(tape: Tape, x: np.ndarray) -> list[Jet]:
    """Jets of the raw coordinates; handy for pushing analytic fields through residuals."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    jets = []
    for k in range(d):
        d1 = [tape.const(np.full(len(x), float(j == k))) for j in range(d)]
        jets.append(Jet(tape.const(x[:, k]), d1, [None] * d))
    return jets


def constant_jet(tape: Tape, value, n: int, d: int) -> Jet:
    return Jet(tape.const(np.full(n, float(value))), [None] * d, [None] * d)
