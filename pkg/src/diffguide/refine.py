"""Iterative refinement: renoise a design, re-denoise with a guided sampler,
filter by constraints, accept greedily on reward.

The renoise level k controls the edit radius: k = 0 leaves the design alone,
k = T+1 discards it and regenerates from scratch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import StallError
from .rewards import RewardModel


@dataclass
class RefineConfig:
    k: int
    S: int
    constraint: Callable | None = None     # predicate(candidate) -> bool
    max_retries: int = 10
    accept: str = "greedy"                 # greedy (reward must not drop) | always
    seed: int = 0


def hamming_constraint(seed_state: np.ndarray, max_dist: int) -> Callable:
    """Predicate: candidate within `max_dist` token changes of the seed."""
    seed_state = np.asarray(seed_state)

    def ok(candidate) -> bool:
        return int(np.sum(np.asarray(candidate) != seed_state)) <= max_dist

    return ok


@dataclass
class RefineResult:
    designs: np.ndarray                    # (S+1, ...) accepted design per iteration
    records: list[dict] = field(default_factory=list)

    def rewards(self) -> np.ndarray:
        return np.array([rec["reward"] for rec in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["iteration", "reward",
                                               "constraint_distance", "accepted"])
            w.writeheader()
            for rec in self.records:
                w.writerow(rec)


def _distance(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if np.issubdtype(a.dtype, np.integer):
        return float(np.sum(a != b))
    return float(np.linalg.norm(a - b))


def iterative_refine(model, inner_sampler: Callable, r: RewardModel,
                     x_seed: np.ndarray, cfg: RefineConfig,
                     rng: np.random.Generator | None = None) -> RefineResult:
    """Run S refinement iterations from a clean seed design.

    `inner_sampler(x_noisy, t, rng) -> x0` re-denoises from level t; with
    cfg.k = T+1 the noisy state is a fresh draw from the initial law, so each
    iteration is an independent guided generation.  A proposal failing the
    constraint is retried up to `max_retries` times, then the previous iterate
    is kept; 10*S consecutive constraint rejections raise StallError.
    """
    if not 0 <= cfg.k <= model.T + 1:
        raise ValueError(f"renoise level k={cfg.k} outside [0, {model.T + 1}]")
    if cfg.S < 0:
        raise ValueError("S must be >= 0")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    current = np.asarray(x_seed).copy()
    current_reward = float(r.batch(current[None, ...])[0])
    designs = [current.copy()]
    records = [{"iteration": 0, "reward": current_reward,
                "constraint_distance": 0.0, "accepted": True}]
    consecutive_rejects = 0
    stall_budget = 10 * max(cfg.S, 1)
    for s in range(1, cfg.S + 1):
        candidate = None
        for _ in range(cfg.max_retries):
            if cfg.k == model.T + 1:
                noisy, t0 = model.init_sample(1, rng)[0], model.T
            elif cfg.k == 0:
                noisy, t0 = current.copy(), 0
            else:
                noisy, t0 = model.forward_sample(current, cfg.k, rng), cfg.k
            prop = inner_sampler(noisy, t0, rng) if t0 > 0 else noisy
            if cfg.constraint is None or cfg.constraint(prop):
                candidate = prop
                consecutive_rejects = 0
                break
            consecutive_rejects += 1
            if consecutive_rejects >= stall_budget:
                raise StallError(f"constraint rejected {consecutive_rejects} "
                                 "consecutive proposals")
        accepted = False
        if candidate is not None:
            cand_reward = float(r.batch(candidate[None, ...])[0])
            if cfg.accept == "always" or cand_reward >= current_reward:
                current, current_reward, accepted = candidate, cand_reward, True
        designs.append(current.copy())
        records.append({"iteration": s, "reward": current_reward,
                        "constraint_distance": _distance(current, x_seed),
                        "accepted": accepted})
    return RefineResult(designs=np.asarray(designs), records=records)
