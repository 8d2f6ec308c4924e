"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op appends a record to the :class:`Graph` that owns its inputs. Graphs
are cheap and meant to be rebuilt for every batch; nothing is cached between
forward passes.
"""

from __future__ import annotations

import itertools
import math
import weakref
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

NORM_EPS = 1e-12
MASK_FILL = -1e9

_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    pass


class DegenerateMaskError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "node_id", "graph", "requires_grad", "name", "__weakref__")

    def __init__(self, graph: "Graph", node_id: int, values: np.ndarray,
                 requires_grad: bool, name: Optional[str] = None):
        self.graph = graph
        self.node_id = node_id
        self.values = values
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor#{self.node_id}{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class OpRecord:
    kind: str
    inputs: tuple[int, ...]
    needs_grad: tuple[bool, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Graph:
    """Tape of op records in creation (hence topological) order.

    Tensors are held weakly and backward closures capture arrays only, so a
    graph and its activations are freed as soon as the caller drops them.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.records: list[OpRecord] = []
        self.tensors: "weakref.WeakValueDictionary[int, Tensor]" = weakref.WeakValueDictionary()
        self._ids = itertools.count()

    def _new(self, values: np.ndarray, requires_grad: bool, name=None) -> Tensor:
        t = Tensor(self, next(self._ids), values, requires_grad, name)
        self.tensors[t.node_id] = t
        return t

    def constant(self, values, name: Optional[str] = None) -> Tensor:
        return self._new(np.array(values, dtype=np.float64), False, name)

    def param(self, values, name: Optional[str] = None) -> Tensor:
        """Leaf that receives a gradient. The array is copied into the graph."""
        return self._new(np.array(values, dtype=np.float64), True, name)

    def emit(self, kind: str, inputs: Sequence[Tensor], values: np.ndarray,
             backward: Callable) -> Tensor:
        for t in inputs:
            if t.graph is not self:
                raise GraphError(f"{kind}: input {t!r} belongs to a different graph")
        needs = any(t.requires_grad for t in inputs)
        out = self._new(values, needs)
        if needs:
            self.records.append(OpRecord(kind, tuple(t.node_id for t in inputs),
                                         tuple(t.requires_grad for t in inputs),
                                         out.node_id, backward))
        return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return like.graph.constant(x)


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return a.graph.emit("add", (a, b), a.values + b.values,
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return a.graph.emit("sub", (a, b), a.values - b.values,
                        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    av, bv = a.values, b.values
    return a.graph.emit("mul", (a, b), av * bv,
                        lambda g: (_unbroadcast(g * bv, av.shape),
                                   _unbroadcast(g * av, bv.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return a.graph.emit("scale", (a,), a.values * c, lambda g: (g * c,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return a.graph.emit("sum", (a,), np.array(a.values.sum()),
                        lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.values.size
    return a.graph.emit("mean", (a,), np.array(a.values.mean()),
                        lambda g: (np.full(shape, float(g) / n),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    out = np.ascontiguousarray(a.values).reshape(tuple(shape))
    if out.size != a.values.size:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}")
    return a.graph.emit("reshape", (a,), out, lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes (default: swap the last two). Output is a contiguous copy."""
    if axes is None:
        axes = list(range(a.values.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.values, axes))
    return a.graph.emit("transpose", (a,), out,
                        lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} @ {b.shape}") from exc

    def backward(g):
        if bv.ndim == 2 and av.ndim > 2:
            # activations [..., k] against a shared weight [k, n]
            k, n = bv.shape
            ga = g @ bv.T
            gb = av.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return a.graph.emit("matmul", (a, b), out, backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` at integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    vocab, width = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range [0, {vocab})")

    def backward(g):
        gt = np.zeros((vocab, width))
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, width))
        return (gt,)

    return table.graph.emit("embedding", (table,), table.values[ids], backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalisation
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.values
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return a.graph.emit("softmax", (a,), y, backward)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x = a.values
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return a.graph.emit("gelu", (a,), y, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xv = x.values
    n = xv.shape[-1]
    mu = xv.mean(axis=-1, keepdims=True)
    centered = xv - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    gv = gain.values

    def backward(g):
        dxhat = g * gv
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return x.graph.emit("layer_norm", (x, gain, bias), xhat * gv + bias.values, backward)


def mean_pool_masked(h: Tensor, mask) -> Tensor:
    """Average ``h[b, t]`` over positions where ``mask[b, t] == 1``."""
    m = np.asarray(mask.values if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if h.values.ndim != 3 or m.shape != h.shape[:2]:
        raise ShapeError(f"mean_pool_masked: H {h.shape} vs mask {m.shape}")
    counts = m.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DegenerateMaskError(f"mask rows {empty.tolist()} have no unmasked position")
    w = m[:, :, None] / counts[:, None, None]
    out = (h.values * w).sum(axis=1)
    return h.graph.emit("mean_pool_masked", (h,), out, lambda g: (g[:, None, :] * w,))


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Divide each row (last axis) by ``max(||row||, NORM_EPS)``."""
    xv = x.values
    norm = np.sqrt((xv * xv).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, NORM_EPS)
    y = xv / denom
    live = norm > NORM_EPS

    def backward(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        return (np.where(live, (g - y * proj) / denom, g / denom),)

    return x.graph.emit("l2_normalize_rows", (x,), y, backward)


def logsumexp_rows(s: np.ndarray) -> np.ndarray:
    peak = s.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(s - peak).sum(axis=1, keepdims=True)))[:, 0]


def softmax_cross_entropy_rows(s: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over rows of ``logsumexp(S[i]) - S[i, targets[i]]``."""
    sv = s.values
    if sv.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy_rows expects a matrix, got {s.shape}")
    rows, cols = sv.shape
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.shape != (rows,):
        raise ShapeError(f"need {rows} targets, got {tgt.shape}")
    if rows and (tgt.min() < 0 or tgt.max() >= cols):
        raise IndexError(f"target index out of range [0, {cols})")
    lse = logsumexp_rows(sv)
    picked = sv[np.arange(rows), tgt]
    loss = np.array((lse - picked).mean())

    def backward(g):
        p = np.exp(sv - lse[:, None])
        p[np.arange(rows), tgt] -= 1.0
        return (p * (float(g) / rows),)

    return s.graph.emit("softmax_cross_entropy_rows", (s,), loss, backward)


# ---------------------------------------------------------------------------
# reverse pass and checking
# ---------------------------------------------------------------------------

def backward(graph: Graph, loss: Tensor) -> dict[int, np.ndarray]:
    """Populate ``.grad`` on every differentiable node reachable from ``loss``.

    Returns the full node-id -> gradient map.
    """
    if loss.graph is not graph or graph.tensors.get(loss.node_id) is not loss:
        raise GraphError("loss is not a node of this graph")
    if loss.values.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
    for rec in reversed(graph.records):
        gout = grads.get(rec.output)
        if gout is None:
            continue
        for node, needed, gin in zip(rec.inputs, rec.needs_grad, rec.backward(gout)):
            if gin is None or not needed:
                continue
            prev = grads.get(node)
            grads[node] = gin if prev is None else prev + gin
    for node, g in grads.items():
        t = graph.tensors.get(node)
        if t is not None:
            t.grad = g
    return grads


def grad_check(f: Callable[[Graph, Tensor], Tensor], x0, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of ``f`` and central differences.

    ``f(graph, x)`` must build a scalar from the parameter ``x`` inside ``graph``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x0 = np.array(x0, dtype=np.float64)

    def value(point: np.ndarray) -> float:
        g = Graph()
        out = f(g, g.param(point)).item()
        if not math.isfinite(out):
            raise NonFiniteError(f"non-finite function value {out} at probe point")
        return out

    g = Graph()
    x = g.param(x0)
    loss = f(g, x)
    if not math.isfinite(loss.item()):
        raise NonFiniteError("non-finite function value at x0")
    backward(g, loss)
    analytic = np.zeros_like(x0) if x.grad is None else x.grad

    flat = x0.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] += h
        up = value(probe.reshape(x0.shape))
        probe[i] -= 2 * h
        down = value(probe.reshape(x0.shape))
        numeric[i] = (up - down) / (2 * h)
    a = analytic.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
    return float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
