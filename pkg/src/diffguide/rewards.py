"""Reward models over continuous vectors, token sequences, and rotations.

Each model evaluates single states and batches; differentiable kinds expose
analytic gradients, and table rewards expose the exact multilinear extension
over per-position simplex inputs (used by Taylor-style guidance).
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import NotDifferentiable


class RewardModel:
    kind = "abstract"
    differentiable = False

    def __call__(self, x) -> float:
        return float(self.batch(np.asarray(x)[None, ...])[0])

    def batch(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotDifferentiable(f"{self.kind} reward has no gradient")

    def batch_gradient(self, states: np.ndarray) -> np.ndarray:
        raise NotDifferentiable(f"{self.kind} reward has no gradient")


class LinearReward(RewardModel):
    """r(x) = c . x"""

    kind = "linear"
    differentiable = True

    def __init__(self, coef):
        self.coef = np.atleast_1d(np.asarray(coef, dtype=float))

    def batch(self, states):
        return np.atleast_2d(states) @ self.coef

    def gradient(self, x):
        return self.coef.copy()

    def batch_gradient(self, states):
        return np.broadcast_to(self.coef, np.atleast_2d(states).shape).copy()


class QuadraticReward(RewardModel):
    """r(x) = -w |x - center|^2"""

    kind = "quadratic"
    differentiable = True

    def __init__(self, center, weight: float = 1.0):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.weight = float(weight)

    def batch(self, states):
        d = np.atleast_2d(states) - self.center
        return -self.weight * np.sum(d * d, axis=-1)

    def gradient(self, x):
        return -2.0 * self.weight * (np.asarray(x, dtype=float) - self.center)

    def batch_gradient(self, states):
        return -2.0 * self.weight * (np.atleast_2d(states) - self.center)


class TableReward(RewardModel):
    """Lookup reward on full K^L sequences, with its multilinear extension.

    The extension is affine in each position's probability row, so a unit
    forward difference of the extension is an exact partial derivative.
    """

    kind = "table"
    differentiable = False  # on token states; the relaxed extension has exact partials

    def __init__(self, values: np.ndarray, K: int, L: int):
        values = np.asarray(values, dtype=float)
        if values.shape != (K**L,):
            raise ValueError(f"need {K**L} values for K={K}, L={L}")
        self.values = values
        self.K, self.L = int(K), int(L)
        self._radix = K ** np.arange(L)
        self._support = np.array(list(itertools.product(range(K), repeat=L)),
                                 dtype=np.int64)[:, ::-1]

    @classmethod
    def from_entries(cls, entries: dict, K: int, L: int, default: float = 0.0):
        from .processes import tokens_from_string
        values = np.full(K**L, default)
        radix = K ** np.arange(L)
        for key, val in entries.items():
            toks = tokens_from_string(key, K) if isinstance(key, str) else np.asarray(key)
            if len(toks) != L or np.any(toks >= K):
                raise ValueError(f"bad table key {key!r}")
            values[int(toks @ radix)] = float(val)
        return cls(values, K, L)

    def batch(self, states):
        states = np.atleast_2d(states)
        if np.any(states >= self.K):
            raise ValueError("table reward is defined on fully unmasked sequences")
        return self.values[states @ self._radix]

    # -- multilinear extension ------------------------------------------------

    def extension_batch(self, probs: np.ndarray) -> np.ndarray:
        """Evaluate the extension at (N, L, K) per-position rows."""
        probs = np.asarray(probs, dtype=float)
        if probs.ndim == 2:
            probs = probs[None, ...]
        w = np.ones((probs.shape[0], len(self._support)))
        for l in range(self.L):
            w *= probs[:, l, self._support[:, l]]
        return w @ self.values

    def extension(self, probs: np.ndarray) -> float:
        return float(self.extension_batch(probs)[0])

    def extension_partials(self, probs: np.ndarray) -> np.ndarray:
        """Exact partials (L, K) of the extension at one (L, K) input."""
        probs = np.asarray(probs, dtype=float)
        out = np.empty((self.L, self.K))
        for l in range(self.L):
            for k in range(self.K):
                p = probs.copy()
                p[l] = 0.0
                p[l, k] = 1.0
                out[l, k] = self.extension(p)
        return out

    def gradient(self, x):
        x = np.asarray(x)
        if x.ndim == 2 and np.issubdtype(x.dtype, np.floating):
            return self.extension_partials(x)
        raise NotDifferentiable("table reward on token states has no gradient")


class FrobeniusReward(RewardModel):
    """r(R) = Tr(target^T R) on rotation matrices."""

    kind = "frobenius"
    differentiable = True

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=float)

    def batch(self, states):
        states = np.asarray(states)
        if states.ndim == 2:
            states = states[None, ...]
        return np.einsum("ij,nij->n", self.target, states)

    def gradient(self, x):
        return self.target.copy()

    def batch_gradient(self, states):
        states = np.asarray(states)
        n = 1 if states.ndim == 2 else len(states)
        return np.broadcast_to(self.target, (n, 3, 3)).copy()


class CompositeReward(RewardModel):
    """Weighted sum of sub-rewards over a shared state kind."""

    kind = "composite"

    def __init__(self, parts: list[tuple[float, RewardModel]]):
        if not parts:
            raise ValueError("composite reward needs at least one part")
        self.parts = [(float(w), r) for w, r in parts]
        self.differentiable = all(r.differentiable for _, r in self.parts)

    def batch(self, states):
        return sum(w * r.batch(states) for w, r in self.parts)

    def gradient(self, x):
        return sum(w * r.gradient(x) for w, r in self.parts)

    def batch_gradient(self, states):
        return sum(w * r.batch_gradient(states) for w, r in self.parts)


def constant_table_reward(c: float, K: int, L: int) -> TableReward:
    return TableReward(np.full(K**L, float(c)), K, L)


def reward_eval(r: RewardModel, x) -> float:
    """Evaluate a reward at a single state."""
    return r(x)


def reward_grad(r: RewardModel, x) -> np.ndarray:
    """Gradient at a single state; raises NotDifferentiable for opaque kinds."""
    return r.gradient(x)
