"""Fully connected networks with optional Fourier feature inputs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ACTIVATIONS, Jet, ParameterStore, Tape, jet_affine, jet_take

FIELD_NAMES = ("u", "v", "w", "p", "T")
CHECKPOINT_FORMAT = "hybrid_pinn.checkpoint/1"


@dataclass
class FourierEmbedding:
    """Fixed random Fourier features ``[cos(2 pi b_j.v), sin(2 pi b_j.v)]``.

    ``B`` has one frequency vector per row and is never trained.
    """

    B: np.ndarray
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))

    @classmethod
    def create(cls, m: int, input_dim: int, sigma: float = 1.0, seed: int = 0) -> "FourierEmbedding":
        rng = np.random.default_rng(seed)
        B = rng.normal(0.0, sigma, size=(m, input_dim)) if m > 0 else np.zeros((0, input_dim))
        return cls(B, sigma, seed)

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def width(self) -> int:
        return 2 * self.m if self.m else self.B.shape[1]


def fourier_embed(v, emb: FourierEmbedding) -> np.ndarray:
    """Interleaved cos/sin features of ``v`` (shape (..., input_dim)).

    With ``m = 0`` the input is passed through unchanged.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != emb.B.shape[1]:
        raise ValueError(f"input has {v.shape[-1]} components, embedding expects {emb.B.shape[1]}")
    if emb.m == 0:
        return v.copy()
    phase = 2.0 * np.pi * (v @ emb.B.T)
    out = np.empty(phase.shape[:-1] + (2 * emb.m,))
    out[..., 0::2] = np.cos(phase)
    out[..., 1::2] = np.sin(phase)
    return out


@dataclass
class Normalization:
    """Standard-score scaling of inputs and outputs."""

    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray

    def __post_init__(self):
        for name in ("input_mean", "input_std", "output_mean", "output_std"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.input_std <= 0) or np.any(self.output_std <= 0):
            raise ValueError("normalization std components must be strictly positive")

    @classmethod
    def identity(cls, input_dim: int, n_outputs: int) -> "Normalization":
        return cls(np.zeros(input_dim), np.ones(input_dim), np.zeros(n_outputs), np.ones(n_outputs))

    @classmethod
    def fit(cls, x, y=None, n_outputs: int | None = None) -> "Normalization":
        """Statistics from inputs ``x`` and (optionally) outputs ``y``.

        NaN entries of ``y`` are ignored per column; columns without data
        keep mean 0 and std 1.  Zero spreads fall back to 1.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        in_std = x.std(axis=0)
        in_std[in_std == 0] = 1.0
        if y is None:
            return cls(x.mean(axis=0), in_std, np.zeros(n_outputs), np.ones(n_outputs))
        y = np.asarray(y, dtype=float)
        y = y.reshape(len(y), -1)
        mean = np.zeros(y.shape[1])
        std = np.ones(y.shape[1])
        for j in range(y.shape[1]):
            col = y[:, j][np.isfinite(y[:, j])]
            if col.size:
                mean[j] = col.mean()
                s = col.std()
                std[j] = s if s > 0 else 1.0
        return cls(x.mean(axis=0), in_std, mean, std)

    def normalize_inputs(self, x):
        return (np.asarray(x, dtype=float) - self.input_mean) / self.input_std

    def denormalize_inputs(self, xn):
        return np.asarray(xn) * self.input_std + self.input_mean

    def normalize_outputs(self, y):
        return (np.asarray(y, dtype=float) - self.output_mean) / self.output_std

    def denormalize_outputs(self, yn):
        return np.asarray(yn) * self.output_std + self.output_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("input_mean", "input_std", "output_mean", "output_std")}


@dataclass
class NetworkConfig:
    """Architecture of one fully connected network.

    ``param_inputs`` leading input columns are design parameters: they are
    fed to the network but carry no spatial derivatives in jets.
    """

    input_dim: int
    output_names: list[str]
    hidden: list[int] = field(default_factory=lambda: [128, 128, 128])
    activation: str = "tanh"
    embedding: FourierEmbedding | None = None
    normalization: Normalization | None = None
    seed: int = 0
    param_inputs: int = 0

    def __post_init__(self):
        self.output_names = list(self.output_names)
        self.hidden = [int(h) for h in self.hidden]
        if not self.output_names or len(set(self.output_names)) != len(self.output_names):
            raise ValueError("output_names must be nonempty and unique")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if any(h <= 0 for h in self.hidden):
            raise ValueError(f"layer widths must be positive, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if not 0 <= self.param_inputs < self.input_dim:
            raise ValueError("param_inputs must leave at least one spatial input")
        if self.embedding is not None and self.embedding.B.shape[1] != self.input_dim:
            raise ValueError("embedding frequency matrix does not match input_dim")
        if self.normalization is None:
            self.normalization = Normalization.identity(self.input_dim, len(self.output_names))

    @classmethod
    def flow(cls, input_dim: int, output_names=("u", "v", "p"), fourier: bool = False, m: int = 64,
             sigma: float = 1.0, seed: int = 0, **kw) -> "NetworkConfig":
        """3 x 128 tanh network, optionally fed ``m`` Fourier frequencies."""
        emb = FourierEmbedding.create(m, input_dim, sigma, seed + 1) if fourier else None
        return cls(input_dim, list(output_names), kw.pop("hidden", [128] * 3), embedding=emb, seed=seed, **kw)

    @classmethod
    def thermal(cls, input_dim: int, fourier: bool = False, m: int = 32, sigma: float = 1.0,
                seed: int = 0, **kw) -> "NetworkConfig":
        """2 x 64 tanh network for a single temperature field."""
        emb = FourierEmbedding.create(m, input_dim, sigma, seed + 1) if fourier else None
        return cls(input_dim, ["T"], kw.pop("hidden", [64, 64]), embedding=emb, seed=seed, **kw)

    @property
    def spatial_dim(self) -> int:
        return self.input_dim - self.param_inputs

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        width = self.embedding.width if self.embedding is not None else self.input_dim
        dims = [width] + self.hidden + [len(self.output_names)]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    def to_dict(self) -> dict:
        d = {
            "input_dim": self.input_dim,
            "output_names": self.output_names,
            "hidden": self.hidden,
            "activation": self.activation,
            "seed": self.seed,
            "param_inputs": self.param_inputs,
            "normalization": self.normalization.to_dict(),
            "embedding": None,
        }
        if self.embedding is not None:
            e = self.embedding
            d["embedding"] = {"m": e.m, "sigma": e.sigma, "seed": e.seed, "B": e.B.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        emb = d.pop("embedding", None)
        norm = d.pop("normalization", None)
        if emb is not None:
            B = np.array(emb["B"], dtype=float).reshape(int(emb["m"]), int(d["input_dim"]))
            emb = FourierEmbedding(B, emb["sigma"], emb["seed"])
        if norm is not None:
            norm = Normalization(**norm)
        return cls(embedding=emb, normalization=norm, **d)


def init_xavier(config: NetworkConfig, seed: int | None = None) -> ParameterStore:
    """Glorot-uniform weights, zero biases; deterministic in ``seed`` (default ``config.seed``)."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    store = ParameterStore(config.layer_shapes)
    for W, _ in store.layers:
        fan_out, fan_in = W.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return store


def _check_inputs(config: NetworkConfig, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"expected inputs with {config.input_dim} columns, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return x


def forward(params: ParameterStore, config: NetworkConfig, x) -> np.ndarray:
    """Plain evaluation: rows are points, columns follow ``config.output_names``."""
    x = _check_inputs(config, x)
    if params.shapes != config.layer_shapes:
        raise ValueError("parameter layout does not match network config")
    norm = config.normalization
    h = norm.normalize_inputs(x)
    if config.embedding is not None:
        h = fourier_embed(h, config.embedding)
    act = {"tanh": np.tanh, "sin": np.sin, "cos": np.cos}[config.activation]
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        h = h @ W.T + b
        if i < last:
            h = act(h)
    return norm.denormalize_outputs(h)


def forward_named(params, config, x) -> dict[str, np.ndarray]:
    y = forward(params, config, x)
    return {name: y[:, j] for j, name in enumerate(config.output_names)}


def _input_jet(tape: Tape, config: NetworkConfig, x: np.ndarray, order: int) -> Jet:
    """Normalized (and embedded) inputs as a jet of constants."""
    norm = config.normalization
    xn = norm.normalize_inputs(x)
    dims = range(config.param_inputs, config.input_dim)
    emb = config.embedding
    if emb is None or emb.m == 0:
        d1 = []
        for k in dims:
            e = np.zeros(config.input_dim)
            e[k] = 1.0 / norm.input_std[k]
            d1.append(tape.const(e))
        if order == 0:
            return Jet(tape.const(xn))
        return Jet(tape.const(xn), d1, [None] * len(d1) if order >= 2 else [])
    phase = 2.0 * np.pi * (xn @ emb.B.T)
    c, s = np.cos(phase), np.sin(phase)
    value = np.empty(phase.shape[:-1] + (2 * emb.m,))
    value[:, 0::2], value[:, 1::2] = c, s
    d1, d2 = [], []
    if order >= 1:
        for k in dims:
            w = 2.0 * np.pi * emb.B[:, k] / norm.input_std[k]
            g = np.empty_like(value)
            g[:, 0::2], g[:, 1::2] = -s * w, c * w
            d1.append(tape.const(g))
            if order >= 2:
                hh = np.empty_like(value)
                hh[:, 0::2], hh[:, 1::2] = -c * w * w, -s * w * w
                d2.append(tape.const(hh))
    return Jet(tape.const(value), d1, d2)


def jet_forward(params: ParameterStore, config: NetworkConfig, x, tape: Tape | None = None,
                order: int = 2) -> dict[str, Jet]:
    """Per-output jets over the spatial inputs, recorded on ``tape``.

    ``order`` 0 gives values only, 1 adds gradients, 2 adds the diagonal
    second derivatives.  Each returned node has shape (N,).
    """
    x = _check_inputs(config, x)
    if params.shapes != config.layer_shapes:
        raise ValueError("parameter layout does not match network config")
    tape = Tape() if tape is None else tape
    bound = tape.bind(params)
    activate = ACTIVATIONS[config.activation]
    jet = _input_jet(tape, config, x, order)
    last = len(bound) - 1
    for i, (W, b) in enumerate(bound):
        jet = jet_affine(jet, W, b)
        if i < last:
            jet = activate(jet)
    norm = config.normalization
    std, mean = norm.output_std, norm.output_mean
    out = {}
    for j, name in enumerate(config.output_names):
        col = jet_take(jet, j)
        sc = lambda n: None if n is None else n * std[j]
        out[name] = Jet(col.value * std[j] + mean[j], [sc(n) for n in col.d1], [sc(n) for n in col.d2])
    return out


def finite_diff_check(params: ParameterStore, config: NetworkConfig, x, h: float = 1e-4) -> dict:
    """Worst normwise relative error of jet derivatives against central differences.

    Returns ``{output: {"d1": err, "d2": err}}`` where
    ``err = max|jet - fd| / max|fd|`` over points and spatial directions
    (absolute error when the reference is identically zero).
    """
    if not h > 0:
        raise ValueError("finite-difference step h must be positive")
    x = _check_inputs(config, x)
    jets = jet_forward(params, config, x)
    f0 = forward(params, config, x)
    report = {}
    dims = list(range(config.param_inputs, config.input_dim))
    fd1 = np.empty((len(dims),) + f0.shape)
    fd2 = np.empty_like(fd1)
    for a, k in enumerate(dims):
        e = np.zeros(config.input_dim)
        e[k] = h
        fp, fm = forward(params, config, x + e), forward(params, config, x - e)
        fd1[a] = (fp - fm) / (2 * h)
        fd2[a] = (fp - 2 * f0 + fm) / (h * h)
    for j, name in enumerate(config.output_names):
        jet = jets[name]
        n = len(x)
        a1 = np.stack([np.broadcast_to(jet.grad(k).value, (n,)) for k in range(len(dims))])
        a2 = np.stack([np.broadcast_to(jet.lap_term(k).value, (n,)) for k in range(len(dims))])
        report[name] = {"d1": _rel(a1, fd1[..., j]), "d2": _rel(a2, fd2[..., j])}
    return report


def _rel(a, b) -> float:
    scale = np.max(np.abs(b))
    err = np.max(np.abs(a - b))
    return float(err / scale) if scale > 0 else float(err)


def save_checkpoint(path, params: ParameterStore, config: NetworkConfig, extra: dict | None = None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "shapes": [list(s) for s in params.shapes],
        "params": params.to_list(),
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[ParameterStore, NetworkConfig, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} document")
    config = NetworkConfig.from_dict(doc["config"])
    params = ParameterStore.from_list(doc["shapes"], doc["params"])
    if params.shapes != config.layer_shapes:
        raise ValueError(f"{path}: parameter shapes disagree with config")
    return params, config, doc.get("extra", {})
