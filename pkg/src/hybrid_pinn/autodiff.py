"""Array-valued reverse-mode tape and spatial jets built on top of it.

Every node on a :class:`Tape` holds a numpy array (usually batched over
points).  A :class:`Jet` bundles a value node with its first and diagonal
second spatial derivatives; because those derivatives are ordinary tape
nodes, one reverse sweep from a scalar loss yields exact parameter
gradients (reverse-over-forward).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericFault(FloatingPointError):
    """A tape operation produced a non-finite value."""

    def __init__(self, index: int, op: str):
        super().__init__(f"non-finite value produced by '{op}' at tape node {index}")
        self.index = index
        self.op = op


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """Handle to one entry of a tape.  Supports +, -, * and division by constants."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.shape})"

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.add(self, -other if not isinstance(other, Node) else self.tape.scale(other, -1.0))

    def __rsub__(self, other):
        return self.tape.add(self.tape.scale(self, -1.0), other)

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division by a tape node is not supported")
        return self.tape.scale(self, 1.0 / np.asarray(other, dtype=float))


class Tape:
    """Ordered record of primitive array operations.

    Parameters
    ----------
    check_finite : bool
        Raise :class:`NumericFault` as soon as an operation yields a
        non-finite value.
    """

    def __init__(self, check_finite: bool = True):
        self.values: list[np.ndarray] = []
        self.ops: list[tuple] = []
        self.requires: list[bool] = []
        self.check_finite = check_finite
        self._bindings: dict[int, list[tuple[Node, Node]]] = {}

    def __len__(self):
        return len(self.values)

    def _push(self, value, op, parents=(), aux=None) -> Node:
        value = np.asarray(value, dtype=float)
        index = len(self.values)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericFault(index, op)
        self.values.append(value)
        self.ops.append((op, parents, aux))
        self.requires.append(any(self.requires[p] for p in parents) or op == "param")
        return Node(self, index)

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise ValueError("node belongs to a different tape")
            return x
        return self.const(x)

    # leaves
    def const(self, value) -> Node:
        return self._push(value, "const")

    def param(self, value) -> Node:
        return self._push(np.array(value, dtype=float), "param")

    def bind(self, store: "ParameterStore") -> list[tuple[Node, Node]]:
        """Parameter leaves for every layer of ``store`` (created once per tape)."""
        key = id(store)
        if key not in self._bindings:
            self._bindings[key] = [(self.param(W), self.param(b)) for W, b in store.layers]
        return self._bindings[key]

    # primitives
    def add(self, a, b) -> Node:
        if not isinstance(b, Node):
            a = self._lift(a)
            c = np.asarray(b, dtype=float)
            return self._push(a.value + c, "shift", (a.index,), c)
        if not isinstance(a, Node):
            c = np.asarray(a, dtype=float)
            return self._push(b.value + c, "shift", (b.index,), c)
        return self._push(a.value + b.value, "add", (a.index, b.index))

    def mul(self, a, b) -> Node:
        if not isinstance(b, Node):
            return self.scale(a, b)
        if not isinstance(a, Node):
            return self.scale(b, a)
        return self._push(a.value * b.value, "mul", (a.index, b.index))

    def scale(self, a: Node, c) -> Node:
        c = np.asarray(c, dtype=float)
        return self._push(a.value * c, "scale", (a.index,), c)

    def tanh(self, a: Node) -> Node:
        return self._push(np.tanh(a.value), "tanh", (a.index,))

    def sin(self, a: Node) -> Node:
        return self._push(np.sin(a.value), "sin", (a.index,))

    def cos(self, a: Node) -> Node:
        return self._push(np.cos(a.value), "cos", (a.index,))

    def affine(self, x, W: Node, b: Node | None = None) -> Node:
        """``x @ W.T + b``; ``x`` may be a node or a constant array."""
        x = self._lift(x)
        out = x.value @ W.value.T
        if b is None:
            return self._push(out, "matmul", (x.index, W.index))
        return self._push(out + b.value, "affine", (x.index, W.index, b.index))

    def take(self, a: Node, col: int) -> Node:
        """Column ``col`` of the last axis."""
        return self._push(a.value[..., col], "take", (a.index,), (col, a.shape))

    def sum(self, a: Node) -> Node:
        return self._push(a.value.sum(), "sum", (a.index,), a.shape)

    def mean(self, a: Node) -> Node:
        return self.scale(self.sum(a), 1.0 / a.value.size)

    def square(self, a: Node) -> Node:
        return self.mul(a, a)

    # replay / reverse
    def replay(self) -> list[np.ndarray]:
        """Recompute every node value from the recorded leaves."""
        vals: list[np.ndarray] = []
        for (op, parents, aux), stored in zip(self.ops, self.values):
            p = [vals[i] for i in parents]
            if op in ("const", "param"):
                v = stored
            elif op == "add":
                v = p[0] + p[1]
            elif op == "shift":
                v = p[0] + aux
            elif op == "mul":
                v = p[0] * p[1]
            elif op == "scale":
                v = p[0] * aux
            elif op == "tanh":
                v = np.tanh(p[0])
            elif op == "sin":
                v = np.sin(p[0])
            elif op == "cos":
                v = np.cos(p[0])
            elif op == "matmul":
                v = p[0] @ p[1].T
            elif op == "affine":
                v = p[0] @ p[1].T + p[2]
            elif op == "take":
                v = p[0][..., aux[0]]
            elif op == "sum":
                v = p[0].sum()
            else:  # pragma: no cover
                raise ValueError(op)
            vals.append(np.asarray(v, dtype=float))
        return vals

    def backward(self, root: Node) -> list:
        """Reverse sweep from scalar ``root``; returns the adjoint buffer.

        Entries for nodes that do not influence ``root`` are ``None``; use
        :meth:`adjoint` to read them as zero arrays.
        """
        if root.value.size != 1:
            raise ValueError(f"backward requires a scalar node, got shape {root.shape}")
        vals = self.values
        adj: list = [None] * (root.index + 1)
        adj[root.index] = np.ones_like(vals[root.index])

        def acc(i, g):
            if not self.requires[i]:
                return
            g = _unbroadcast(g, vals[i].shape)
            adj[i] = g if adj[i] is None else adj[i] + g

        for i in range(root.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            op, parents, aux = self.ops[i]
            if op in ("const", "param"):
                continue
            if op == "add":
                acc(parents[0], g)
                acc(parents[1], g)
            elif op == "shift":
                acc(parents[0], g)
            elif op == "mul":
                a, b = parents
                acc(a, g * vals[b])
                acc(b, g * vals[a])
            elif op == "scale":
                acc(parents[0], g * aux)
            elif op == "tanh":
                acc(parents[0], g * (1.0 - vals[i] ** 2))
            elif op == "sin":
                acc(parents[0], g * np.cos(vals[parents[0]]))
            elif op == "cos":
                acc(parents[0], -g * np.sin(vals[parents[0]]))
            elif op in ("matmul", "affine"):
                x, W = parents[0], parents[1]
                xv, Wv = vals[x], vals[W]
                if self.requires[x]:
                    acc(x, g @ Wv)
                if self.requires[W]:
                    g2 = g.reshape(-1, Wv.shape[0])
                    if xv.ndim == 1 and g.ndim > 1:
                        # x was broadcast across the batch
                        acc(W, np.outer(g2.sum(axis=0), xv))
                    else:
                        acc(W, g2.T @ xv.reshape(-1, Wv.shape[1]))
                if op == "affine":
                    acc(parents[2], g)
            elif op == "take":
                col, shape = aux
                full = np.zeros(shape)
                full[..., col] = g
                acc(parents[0], full)
            elif op == "sum":
                acc(parents[0], np.broadcast_to(g, aux))
            else:  # pragma: no cover
                raise ValueError(op)
        return adj

    def adjoint(self, adj: list, node: Node) -> np.ndarray:
        g = adj[node.index] if node.index < len(adj) else None
        return np.zeros_like(node.value) if g is None else g


@dataclass
class ParameterStore:
    """Flat parameter vector with per-layer (weight, bias) views.

    ``layers[i]`` is ``(W, b)`` with ``W`` of shape (out, in).  The arrays
    are views into :attr:`flat`, so in-place updates of ``flat`` are seen
    by every layer.
    """

    shapes: list[tuple[int, int]]
    flat: np.ndarray = None
    layers: list[tuple[np.ndarray, np.ndarray]] = field(init=False, repr=False)

    def __post_init__(self):
        n = sum(o * i + o for o, i in self.shapes)
        if self.flat is None:
            self.flat = np.zeros(n)
        self.flat = np.ascontiguousarray(self.flat, dtype=float)
        if self.flat.shape != (n,):
            raise ValueError(f"flat vector has {self.flat.size} entries, layout needs {n}")
        self.layers = []
        pos = 0
        for o, i in self.shapes:
            W = self.flat[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = self.flat[pos:pos + o]
            pos += o
            self.layers.append((W, b))

    @property
    def total_count(self) -> int:
        return self.flat.size

    def index(self, layer: int, row: int, col: int | None = None) -> int:
        """Flat index of ``W[row, col]`` (or of ``b[row]`` when ``col`` is None)."""
        pos = sum(o * i + o for o, i in self.shapes[:layer])
        o, i = self.shapes[layer]
        if col is None:
            return pos + o * i + row
        return pos + row * i + col

    def copy(self) -> "ParameterStore":
        return ParameterStore(list(self.shapes), self.flat.copy())

    def to_list(self) -> list[float]:
        return self.flat.tolist()

    @classmethod
    def from_list(cls, shapes, values) -> "ParameterStore":
        return cls([tuple(s) for s in shapes], np.array(values, dtype=float))


def grad_params(tape: Tape, loss: Node, store: ParameterStore, adj: list | None = None) -> np.ndarray:
    """Gradient of scalar ``loss`` with respect to every entry of ``store.flat``.

    Parameters never used by ``loss`` get zero gradient.  Pass a
    precomputed adjoint buffer ``adj`` to reuse one sweep for several
    stores.
    """
    if loss.value.size != 1:
        raise ValueError("loss node must be scalar")
    if adj is None:
        adj = tape.backward(loss)
    out = np.zeros(store.total_count)
    bound = tape._bindings.get(id(store))
    if bound is None:
        return out
    pos = 0
    for (Wn, bn), (W, b) in zip(bound, store.layers):
        out[pos:pos + W.size] = tape.adjoint(adj, Wn).ravel()
        pos += W.size
        out[pos:pos + b.size] = tape.adjoint(adj, bn)
        pos += b.size
    return out


# ---------------------------------------------------------------------------
# jets

@dataclass
class Jet:
    """Value with first and diagonal second spatial derivatives.

    ``d1[k]`` / ``d2[k]`` hold d/dx_k and d^2/dx_k^2.  ``None`` entries are
    structural zeros; they stay ``None`` through linear maps.  An empty
    ``d2`` marks a first-order jet.
    """

    value: Node
    d1: list = field(default_factory=list)
    d2: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.d1)

    @property
    def order(self) -> int:
        if not self.d1:
            return 0
        return 2 if len(self.d2) == len(self.d1) else 1

    def grad(self, k: int):
        return _zero_like(self.value) if self.d1[k] is None else self.d1[k]

    def lap_term(self, k: int):
        return _zero_like(self.value) if self.d2[k] is None else self.d2[k]

    def __add__(self, other):
        return jet_add(self, other)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        return jet_scale(self, other)

    __rmul__ = __mul__


def _zero_like(node: Node) -> Node:
    return node.tape.const(np.zeros_like(node.value))


def _add_opt(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _mul_opt(a, b):
    if a is None or b is None:
        return None
    return a * b


def jet_add(a: Jet, b: Jet) -> Jet:
    return Jet(a.value + b.value,
               [_add_opt(x, y) for x, y in zip(a.d1, b.d1)],
               [_add_opt(x, y) for x, y in zip(a.d2, b.d2)])


def jet_scale(a: Jet, c: float) -> Jet:
    sc = lambda n: None if n is None else n * c
    return Jet(a.value * c, [sc(n) for n in a.d1], [sc(n) for n in a.d2])


def jet_mul(a: Jet, b: Jet) -> Jet:
    d1 = [_add_opt(_mul_opt(a.value, db), _mul_opt(b.value, da)) for da, db in zip(a.d1, b.d1)]
    d2 = []
    for k, (dda, ddb) in enumerate(zip(a.d2, b.d2)):
        cross = _mul_opt(a.d1[k], b.d1[k])
        term = _add_opt(_mul_opt(a.value, ddb), _mul_opt(b.value, dda))
        d2.append(_add_opt(term, None if cross is None else cross * 2.0))
    return Jet(a.value * b.value, d1, d2)


def jet_affine(a: Jet, W: Node, b: Node | None) -> Jet:
    tape = W.tape
    lin = lambda n: None if n is None else tape.affine(n, W)
    return Jet(tape.affine(a.value, W, b), [lin(n) for n in a.d1], [lin(n) for n in a.d2])


def _jet_unary(a: Jet, f, f1, f2) -> Jet:
    """Chain rule for an elementwise map with value nodes f, f', f''."""
    d1 = [_mul_opt(f1, da) for da in a.d1]
    d2 = [_add_opt(_mul_opt(f1, dda), _mul_opt(f2, _mul_opt(da, da))) for da, dda in zip(a.d1, a.d2)]
    return Jet(f, d1, d2)


def jet_tanh(a: Jet) -> Jet:
    tape = a.value.tape
    t = tape.tanh(a.value)
    s = 1.0 - t * t
    return _jet_unary(a, t, s, (t * s) * -2.0)


def jet_sin(a: Jet) -> Jet:
    tape = a.value.tape
    s = tape.sin(a.value)
    return _jet_unary(a, s, tape.cos(a.value), -s)


def jet_cos(a: Jet) -> Jet:
    tape = a.value.tape
    c = tape.cos(a.value)
    return _jet_unary(a, c, -tape.sin(a.value), -c)


def jet_take(a: Jet, col: int) -> Jet:
    tape = a.value.tape
    pick = lambda n: None if n is None else tape.take(_broadcast_rows(n, a.value), col)
    return Jet(tape.take(a.value, col), [pick(n) for n in a.d1], [pick(n) for n in a.d2])


def _broadcast_rows(n: Node, like: Node) -> Node:
    if n.shape == like.shape:
        return n
    return n + np.zeros(like.shape)


ACTIVATIONS = {"tanh": jet_tanh, "sin": jet_sin, "cos": jet_cos}
