"""Multiple-negatives ranking loss and Adam with weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, MutableMapping

import numpy as np

from . import tensor as T

UNIT_NORM_TOL = 1e-6


class NonFiniteGradientError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MnrlConfig:
    scale: float = 20.0
    symmetric: bool = True

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("MNRL scale must be positive")


def mnrl_loss(u: T.Tensor, v: T.Tensor, cfg: MnrlConfig = MnrlConfig()) -> T.Tensor:
    """In-batch-negatives cross-entropy over ``scale * U V^T`` with diagonal targets.

    Row ``i`` of ``v`` is the positive for row ``i`` of ``u``; every other row of
    ``v`` is a negative. With ``symmetric`` the loss is averaged with the same
    objective read column-wise (V -> U).
    """
    if u.shape != v.shape or len(u.shape) != 2:
        raise T.ShapeError(f"mnrl_loss needs equal [B, d] inputs, got {u.shape} and {v.shape}")
    if u.shape[0] < 1:
        raise ValueError("empty batch")
    for label, x in (("U", u), ("V", v)):
        norms = np.linalg.norm(x.values, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            raise ValueError(f"{label} rows {bad[:5].tolist()} are not unit-norm")
    diag = np.arange(u.shape[0])
    sims = T.scale(T.matmul(u, T.transpose(v)), cfg.scale)
    loss = T.softmax_cross_entropy_rows(sims, diag)
    if cfg.symmetric:
        back = T.softmax_cross_entropy_rows(T.transpose(sims), diag)
        loss = T.scale(T.add(loss, back), 0.5)
    return loss


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("cosine_similarity of non-finite vector")
    mu, mv = float(np.abs(u).max(initial=0.0)), float(np.abs(v).max(initial=0.0))
    if mu == 0.0 and mv == 0.0:
        raise ValueError("cosine similarity undefined for two zero vectors")
    if mu == 0.0 or mv == 0.0:
        return 0.0
    # rescale first so tiny or huge entries neither underflow nor overflow when squared
    u, v = u / mu, v / mv
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    return min(1.0, max(-1.0, float(u @ v) / (nu * nv)))


def decays(name: str, value: np.ndarray) -> bool:
    """Weight decay applies to matrices only; gains and biases are exempt."""
    return value.ndim >= 2


@dataclass
class AdamState:
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled: bool = True
    warmup_steps: int = 0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self, step: int) -> float:
        if self.warmup_steps > 0:
            return self.lr * min(1.0, step / self.warmup_steps)
        return self.lr


def adamw_step(state: AdamState, params: MutableMapping[str, np.ndarray],
               grads: Mapping[str, np.ndarray]) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    Parameters without an entry in ``grads`` are left untouched. Every gradient
    is validated before anything is modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise T.ShapeError(f"{name}: grad {g.shape} vs param {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    t = state.t
    lr = state.current_lr(t)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        theta = params[name]
        decay = state.weight_decay if decays(name, theta) else 0.0
        if decay and not state.decoupled:
            g = g + decay * theta
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if decay and state.decoupled:
            theta -= lr * decay * theta
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state

