"""Stochastic binary-action policies with a softmax output.

A policy scores a context with two logits (one per action) and turns them
into action probabilities via a numerically stabilized softmax. Two scorer
families are supported: a linear map and a one-hidden-layer tanh network.
Analytic gradients of the action probability with respect to every
parameter are provided for importance-weighted training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from banditrank.data import _as_text, _as_text_writer


@dataclass(frozen=True)
class ActionDistribution:
    p0: float
    p1: float

    def __post_init__(self):
        if not (0.0 < self.p0 < 1.0 and 0.0 < self.p1 < 1.0):
            raise ValueError(f"probabilities must be strictly inside (0,1): {self}")
        if abs(self.p0 + self.p1 - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1: {self}")


class PolicyParams:
    """Parameters of a binary-action scorer.

    ``kind`` is ``"linear"`` (weights 2xd, bias 2) or ``"mlp"`` (hidden
    weights hxd, hidden bias h, output weights 2xh, output bias 2).
    Instances are treated as immutable; training produces new instances.
    """

    def __init__(self, kind: str, arrays: Sequence[np.ndarray]):
        if kind not in ("linear", "mlp"):
            raise ValueError(f"unknown policy kind {kind!r}")
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        if kind == "linear":
            if len(arrays) != 2:
                raise ValueError("linear policy needs [weights, bias]")
            w, b = arrays
            if w.ndim != 2 or w.shape[0] != 2 or b.shape != (2,):
                raise ValueError(f"bad linear shapes {[a.shape for a in arrays]}")
        else:
            if len(arrays) != 4:
                raise ValueError("mlp policy needs [w1, b1, w2, b2]")
            w1, b1, w2, b2 = arrays
            h = w1.shape[0]
            if (
                w1.ndim != 2
                or b1.shape != (h,)
                or w2.shape != (2, h)
                or b2.shape != (2,)
            ):
                raise ValueError(f"bad mlp shapes {[a.shape for a in arrays]}")
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise ValueError("policy parameters must be finite")
            a.setflags(write=False)
        self.kind = kind
        self.arrays = tuple(arrays)

    @property
    def feature_dim(self) -> int:
        return self.arrays[0].shape[1]

    @property
    def hidden(self) -> int:
        return self.arrays[0].shape[0] if self.kind == "mlp" else 0

    def replace_arrays(self, arrays: Sequence[np.ndarray]) -> "PolicyParams":
        return PolicyParams(self.kind, arrays)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def unflatten(self, flat: np.ndarray) -> "PolicyParams":
        out, i = [], 0
        for a in self.arrays:
            out.append(np.asarray(flat[i : i + a.size]).reshape(a.shape).copy())
            i += a.size
        return self.replace_arrays(out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.kind == other.kind and all(
            np.array_equal(a, b) for a, b in zip(self.arrays, other.arrays)
        )

    def save(self, sink: IO | str) -> None:
        out = _as_text_writer(sink)
        obj = {
            "kind": self.kind,
            "feature_dim": self.feature_dim,
            "hidden": self.hidden,
            "arrays": [[float(x) for x in a.ravel()] for a in self.arrays],
            "shapes": [list(a.shape) for a in self.arrays],
        }
        json.dump(obj, out)
        out.flush()

    @classmethod
    def load(cls, source: IO | str) -> "PolicyParams":
        obj = json.load(_as_text(source))
        arrays = [
            np.array(flat, dtype=np.float64).reshape(shape)
            for flat, shape in zip(obj["arrays"], obj["shapes"])
        ]
        return cls(obj["kind"], arrays)


def init_params(
    kind: str, feature_dim: int, hidden: int = 0, seed: int = 0
) -> PolicyParams:
    """Seeded init: weights ~ N(0, 1/fan_in), biases zero."""
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    rng = np.random.default_rng(seed)
    if kind == "linear":
        w = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(2, feature_dim))
        return PolicyParams("linear", [w, np.zeros(2)])
    if kind == "mlp":
        if hidden < 1:
            raise ValueError(f"hidden must be >= 1 for mlp, got {hidden}")
        w1 = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(hidden, feature_dim))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(2, hidden))
        return PolicyParams("mlp", [w1, np.zeros(hidden), w2, np.zeros(2)])
    raise ValueError(f"unknown policy kind {kind!r}")


def _check_batch(params: PolicyParams, contexts: np.ndarray) -> np.ndarray:
    X = np.asarray(contexts, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.feature_dim:
        raise ValueError(
            f"context dimension {X.shape[1]} does not match policy dimension "
            f"{params.feature_dim}"
        )
    return X


def _forward(params: PolicyParams, X: np.ndarray):
    """Return (logits, hidden activations or None) for a batch of contexts."""
    if params.kind == "linear":
        w, b = params.arrays
        return X @ w.T + b, None
    w1, b1, w2, b2 = params.arrays
    H = np.tanh(X @ w1.T + b1)
    return H @ w2.T + b2, H


def batch_probabilities(params: PolicyParams, contexts: np.ndarray) -> np.ndarray:
    """Action probabilities for a batch of contexts, shape (m, 2)."""
    X = _check_batch(params, contexts)
    logits, _ = _forward(params, X)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def action_probabilities(params: PolicyParams, context: np.ndarray) -> ActionDistribution:
    p = batch_probabilities(params, context)[0]
    return ActionDistribution(p0=float(p[0]), p1=float(p[1]))


def rank_products(
    params: PolicyParams, candidates: Sequence[tuple[str, np.ndarray]]
) -> list[tuple[str, float]]:
    """Order candidates by show-probability, ties broken by product id."""
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    ids = [pid for pid, _ in candidates]
    X = _check_batch(params, np.stack([np.asarray(c, dtype=np.float64) for _, c in candidates]))
    p1 = batch_probabilities(params, X)[:, 1]
    order = sorted(range(len(ids)), key=lambda i: (-p1[i], ids[i]))
    return [(ids[i], float(p1[i])) for i in order]


def logit_backprop(
    params: PolicyParams, X: np.ndarray, dlogits: np.ndarray
) -> list[np.ndarray]:
    """Backpropagate a gradient at the logits to all parameters.

    X is (m, d), dlogits is (m, 2); returns arrays matching params.arrays,
    summed over the batch.
    """
    if params.kind == "linear":
        return [dlogits.T @ X, dlogits.sum(axis=0)]
    w1, b1, w2, b2 = params.arrays
    H = np.tanh(X @ w1.T + b1)
    d_w2 = dlogits.T @ H
    d_b2 = dlogits.sum(axis=0)
    dH = dlogits @ w2
    dZ = dH * (1.0 - H * H)
    return [dZ.T @ X, dZ.sum(axis=0), d_w2, d_b2]


def grad_action_prob(
    params: PolicyParams, context: np.ndarray, action: int
) -> list[np.ndarray]:
    """Gradient of pi(action | context) with respect to every parameter."""
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    X = _check_batch(params, context)
    P = batch_probabilities(params, X)
    # d pi(a) / d logits = pi(a) * (onehot(a) - pi)
    onehot = np.zeros((1, 2))
    onehot[0, action] = 1.0
    dlogits = P[:, action : action + 1] * (onehot - P)
    return logit_backprop(params, X, dlogits)


def weighted_prob_gradient(
    params: PolicyParams,
    contexts: np.ndarray,
    actions: np.ndarray,
    coeffs: np.ndarray,
) -> list[np.ndarray]:
    """Sum over a batch of coeff_i * grad pi(a_i | c_i)."""
    X = _check_batch(params, contexts)
    actions = np.asarray(actions, dtype=np.int64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    P = batch_probabilities(params, X)
    m = X.shape[0]
    onehot = np.zeros((m, 2))
    onehot[np.arange(m), actions] = 1.0
    p_a = P[np.arange(m), actions]
    dlogits = (coeffs * p_a)[:, None] * (onehot - P)
    return logit_backprop(params, X, dlogits)
