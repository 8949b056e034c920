"""Error metrics, line probes and derived design quantities.

The headline error is the root of the mean squared error.  It keeps the
conventional label ``mse_paper`` so that reported numbers are not mistaken
for a plain MSE.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import PointCloud
from .network import forward_named

VELOCITY = ("u", "v", "w")


def mse_paper(pred, truth) -> float:
    """``sqrt(sum((pred - truth)**2) / N)``.

    Raises
    ------
    ValueError
        On a length mismatch or empty input.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} reference values")
    if pred.size == 0:
        raise ValueError("need at least one node")
    return float(np.sqrt(np.sum((pred - truth) ** 2) / pred.size))


def speed(fields: dict[str, np.ndarray]) -> np.ndarray:
    comps = [np.asarray(fields[c], dtype=float) for c in VELOCITY if c in fields]
    if not comps:
        raise KeyError("no velocity components among the fields")
    return np.sqrt(sum(c * c for c in comps))


def mae_exceedance(pred, truth, thresholds) -> np.ndarray:
    """Fraction of nodes whose absolute error is strictly above each threshold."""
    err = np.abs(np.asarray(pred, dtype=float).reshape(-1) - np.asarray(truth, dtype=float).reshape(-1))
    t = np.asarray(thresholds, dtype=float).reshape(-1)
    if np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be sorted ascending")
    if err.size == 0:
        return np.zeros_like(t)
    srt = np.sort(err)
    # count of errors > t  ==  N - (count of errors <= t)
    return (err.size - np.searchsorted(srt, t, side="right")) / err.size


# ---------------------------------------------------------------------------
# predictors

Predictor = Callable[[np.ndarray], dict]


def as_predictor(model, region: str | None = None) -> Predictor:
    """Wrap a model into ``x -> {name: values}``.

    Accepts a :class:`~hybrid_pinn.trainer.DecomposedModel` (``region``
    picks the subdomain, optional for single-region models), a
    ``(params, config)`` pair, or any callable already of that shape.
    """
    if hasattr(model, "subdomains") and hasattr(model, "predict"):
        if region is None:
            if len(model.subdomains) != 1:
                raise ValueError("region is required for a decomposed model")
            region = next(iter(model.subdomains))
        return lambda x: model.predict(region, x)
    if isinstance(model, tuple) and len(model) == 2:
        params, config = model
        return lambda x: forward_named(params, config, x)
    if callable(model):
        return model
    raise TypeError(f"cannot evaluate a {type(model).__name__}")


def line_probe(model, start, end, n: int, region: str | None = None) -> dict[str, np.ndarray]:
    """Evaluate the model at ``n`` equally spaced points from ``start`` to ``end``.

    Returns a dict with ``s`` (arc length), the coordinates ``x0..`` and one
    column per output field.
    """
    start = np.asarray(start, dtype=float).reshape(-1)
    end = np.asarray(end, dtype=float).reshape(-1)
    if n < 2:
        raise ValueError("a line probe needs n >= 2")
    if start.shape != end.shape:
        raise ValueError("start and end have different dimensions")
    length = float(np.linalg.norm(end - start))
    if not length > 0.0:
        raise ValueError("degenerate probe segment (start == end)")
    t = np.linspace(0.0, 1.0, n)
    x = start[None, :] + t[:, None] * (end - start)[None, :]
    x[-1] = end
    out = {"s": t * length}
    for j in range(x.shape[1]):
        out[f"x{j}"] = x[:, j]
    pred = as_predictor(model, region)(x)
    for k, v in pred.items():
        out[k] = np.asarray(v, dtype=float).reshape(-1)
    return out


def write_columns(path, columns: dict[str, np.ndarray]) -> None:
    """Columns of equal length to CSV, full float precision."""
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([format(float(columns[c][i]), ".17g") for c in names])


# ---------------------------------------------------------------------------
# derived design metrics

def region_mask(cloud: PointCloud, name: str) -> np.ndarray:
    """Points whose tag is ``name`` or whose tag suffix (after ``:``) is ``name``."""
    tags = cloud.tags.astype(str)
    suffix = np.array([t.split(":", 1)[1] if ":" in t else "" for t in tags], dtype=object)
    return (tags == name) | (suffix == name)


def _field_on(cloud, mask, name, predictor):
    if predictor is None:
        if name not in cloud.fields:
            raise KeyError(f"cloud has no {name!r} column and no model was given")
        return np.asarray(cloud.fields[name], dtype=float)[mask]
    return np.asarray(predictor(cloud.points[mask])[name], dtype=float).reshape(-1)


def derived_metrics(model, cloud: PointCloud, inlet: str | None = "inlet", hot_region: str | None = "chip",
                    pressure: str = "p", temperature: str = "T", region: str | None = None) -> dict[str, float]:
    """Pressure drop and peak temperature of a design.

    ``delta_p`` is the plain mean of pressure over the inlet points (the
    outlet is pinned at zero gauge pressure).  ``t_max`` is the largest
    temperature over the points of ``hot_region``.  ``model=None`` reads the
    values straight from the cloud's columns.
    """
    pred = None if model is None else as_predictor(model, region)
    out = {}
    if inlet is not None:
        m = region_mask(cloud, inlet)
        if not m.any():
            raise ValueError(f"no points tagged {inlet!r}")
        out["delta_p"] = float(np.mean(_field_on(cloud, m, pressure, pred)))
    if hot_region is not None:
        m = region_mask(cloud, hot_region)
        if not m.any():
            raise ValueError(f"no points tagged {hot_region!r}")
        out["t_max"] = float(np.max(_field_on(cloud, m, temperature, pred)))
    return out


# ---------------------------------------------------------------------------
# reports

DEFAULT_THRESHOLDS = np.array([0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5])


@dataclass
class MetricReport:
    mse: dict[str, float] = field(default_factory=dict)
    exceedance: dict[str, np.ndarray] = field(default_factory=dict)
    thresholds: np.ndarray = field(default_factory=lambda: DEFAULT_THRESHOLDS.copy())
    extrema: dict[str, tuple[float, float]] = field(default_factory=dict)
    probes: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    n_nodes: int = 0

    def rows(self) -> list[tuple[str, str, str, str]]:
        rows = []
        for k in sorted(self.mse):
            rows.append((k, "mse_paper", "", format(self.mse[k], ".17g")))
        for k in sorted(self.extrema):
            lo, hi = self.extrema[k]
            rows.append((k, "min", "", format(lo, ".17g")))
            rows.append((k, "max", "", format(hi, ".17g")))
        for k in sorted(self.exceedance):
            for t, f in zip(self.thresholds, self.exceedance[k]):
                rows.append((k, "mae_exceedance", format(float(t), ".17g"), format(float(f), ".17g")))
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["field", "metric", "threshold", "value"])
            w.writerows(self.rows())
        for name, cols in self.probes.items():
            write_columns(Path(path).with_name(f"probe_{name}.csv"), cols)

    def summary(self) -> str:
        buf = io.StringIO()
        buf.write(f"nodes evaluated: {self.n_nodes}\n\n")
        buf.write("field        mse_paper        min            max\n")
        for k in sorted(set(self.mse) | set(self.extrema)):
            lo, hi = self.extrema.get(k, (float("nan"), float("nan")))
            buf.write(f"{k:<12s} {self.mse.get(k, float('nan')):<16.6g} {lo:<14.6g} {hi:<14.6g}\n")
        if self.exceedance:
            buf.write("\nfraction of nodes with |error| above threshold\n")
            buf.write("threshold    " + " ".join(f"{k:>10s}" for k in sorted(self.exceedance)) + "\n")
            for i, t in enumerate(self.thresholds):
                vals = " ".join(f"{self.exceedance[k][i]:>10.4f}" for k in sorted(self.exceedance))
                buf.write(f"{t:<12.4g} {vals}\n")
        for name, cols in self.probes.items():
            buf.write(f"\nprobe {name}: {len(cols['s'])} samples over length {cols['s'][-1]:.4g}\n")
        return buf.getvalue()


def compare(pred: dict[str, np.ndarray], truth: dict[str, np.ndarray], thresholds=None) -> MetricReport:
    """Per-field errors for every field present in both dicts.

    When velocity components are present the speed ``|U|`` is reported as an
    extra field so that both per-component and magnitude errors are available.
    """
    thresholds = DEFAULT_THRESHOLDS.copy() if thresholds is None else np.asarray(thresholds, dtype=float)
    names = [k for k in pred if k in truth]
    rep = MetricReport(thresholds=thresholds)
    pairs = {k: (np.asarray(pred[k], float).reshape(-1), np.asarray(truth[k], float).reshape(-1)) for k in names}
    if any(c in names for c in VELOCITY):
        vel = {c: pairs[c] for c in VELOCITY if c in pairs}
        pairs["|U|"] = (speed({c: p for c, (p, _) in vel.items()}), speed({c: t for c, (_, t) in vel.items()}))
    for k, (p, t) in pairs.items():
        ok = np.isfinite(t)
        p, t = p[ok], t[ok]
        rep.mse[k] = mse_paper(p, t)
        rep.exceedance[k] = mae_exceedance(p, t, thresholds)
        rep.extrema[k] = (float(np.min(p)), float(np.max(p)))
        rep.n_nodes = max(rep.n_nodes, int(p.size))
    return rep


def evaluate(model, cloud: PointCloud, region: str | None = None, tags=None, thresholds=None) -> MetricReport:
    """Compare model predictions to the reference columns of ``cloud``.

    ``tags`` restricts the comparison to points with those tags (default:
    all points).
    """
    mask = np.ones(len(cloud), dtype=bool) if not tags else np.isin(cloud.tags.astype(str), list(tags))
    if not mask.any():
        raise ValueError("no points selected for evaluation")
    pred = as_predictor(model, region)(cloud.points[mask])
    truth = {k: np.asarray(v, float)[mask] for k, v in cloud.fields.items() if k in pred}
    if not truth:
        raise ValueError("cloud carries none of the model's output fields")
    return compare(pred, truth, thresholds)
