"""Brute-force ground truth and statistical metrics.

The oracle target p^(a)(x) = exp(r(x)/a) p_pre(x) / Z is built by enumeration
over an explicit base table (for masked processes, the exact induced terminal
law of the pretrained process; for continuous toys, a fine grid).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeightsError
from .processes import DistributionTable, GaussianMixtureData, string_from_tokens
from .rewards import RewardModel


@dataclass(frozen=True)
class OracleTarget:
    """Tilted target table with its log partition function."""

    table: DistributionTable
    log_z: float
    alpha: float

    def write_csv(self, path, K: int | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "prob"])
            for s, p in zip(self.table.support, self.table.probs):
                label = string_from_tokens(s, K) if K is not None else " ".join(map(repr, s))
                w.writerow([label, f"{p:.12g}"])


def brute_force_target(base: DistributionTable, r: RewardModel, alpha: float) -> OracleTarget:
    """Exact tilted target over an enumerable support, via log-sum-exp."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if len(base.probs) > 1_000_000:
        raise ValueError("support too large to enumerate")
    with np.errstate(divide="ignore"):
        log_mass = np.log(base.probs) + r.batch(base.support) / alpha
    table = DistributionTable.from_unnormalized(base.support, log_mass)
    return OracleTarget(table=table, log_z=table.log_z, alpha=alpha)


def gaussian_grid_table(data: GaussianMixtureData, lo: float, hi: float,
                        cells: int = 4096) -> DistributionTable:
    """1-D grid discretization of a mixture density (cell-centered)."""
    if data.dim != 1:
        raise ValueError("grid tables are 1-D only")
    edges = np.linspace(lo, hi, cells + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    dens = np.exp(data.log_density(centers[:, None]))
    probs = dens / dens.sum()
    return DistributionTable(support=centers[:, None], probs=probs)


def empirical_on_grid(grid: DistributionTable, samples: np.ndarray,
                      weights: np.ndarray | None = None) -> DistributionTable:
    """Bin continuous 1-D samples onto a grid table's support (nearest cell)."""
    centers = np.asarray(grid.support)[:, 0]
    x = np.asarray(samples).reshape(-1)
    if weights is None:
        weights = np.ones(len(x))
    edges = 0.5 * (centers[1:] + centers[:-1])
    idx = np.searchsorted(edges, x)
    counts = np.zeros(len(centers))
    np.add.at(counts, idx, weights)
    return DistributionTable(support=grid.support, probs=counts / counts.sum())


def ess(log_weights: np.ndarray) -> float:
    """(sum w)^2 / sum w^2, computed stably in the log domain."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise DegenerateWeightsError("all weights are zero")
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


def tv_distance(p: DistributionTable, q: DistributionTable) -> float:
    """Half the L1 distance between two tables on the same support."""
    ps, qs = np.asarray(p.support), np.asarray(q.support)
    if ps.shape != qs.shape or not np.array_equal(ps, qs):
        raise ValueError("tables must share an identical support")
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def kl_divergence(p: DistributionTable, q: DistributionTable) -> float:
    """KL(p || q) on a shared support; infinite if p charges a q-null state."""
    if not np.array_equal(np.asarray(p.support), np.asarray(q.support)):
        raise ValueError("tables must share an identical support")
    mask = p.probs > 0
    if np.any(q.probs[mask] == 0):
        return float("inf")
    return float(np.sum(p.probs[mask] * (np.log(p.probs[mask]) - np.log(q.probs[mask]))))


@dataclass
class MetricsSummary:
    n_samples: int
    mean_reward: float
    max_reward: float
    std_reward: float
    diversity: float
    duplicate_fraction: float
    tv_to_oracle: float | None = None
    kl_to_oracle: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _pairwise_diversity(samples: np.ndarray, rng: np.random.Generator,
                        cap: int = 512) -> float:
    """Mean pairwise distance (normalized Hamming for int states, Euclidean
    otherwise) over a subsample of at most `cap` states."""
    n = len(samples)
    if n < 2:
        return 0.0
    idx = np.arange(n) if n <= cap else rng.choice(n, size=cap, replace=False)
    sub = samples[idx]
    flat = sub.reshape(len(sub), -1)
    if np.issubdtype(flat.dtype, np.integer):
        diff = (flat[:, None, :] != flat[None, :, :]).mean(axis=2)
    else:
        delta = flat[:, None, :] - flat[None, :, :]
        diff = np.sqrt(np.sum(delta**2, axis=2))
    iu = np.triu_indices(len(sub), k=1)
    return float(diff[iu].mean())


def report_metrics(samples: np.ndarray, r: RewardModel,
                   oracle: OracleTarget | None = None,
                   weights: np.ndarray | None = None,
                   seed: int = 0) -> MetricsSummary:
    """Reward statistics, diversity, and (optionally) distance to the oracle.

    `weights` are self-normalized importance weights; when given, the reward
    mean/std and the oracle comparison are weighted.
    """
    samples = np.asarray(samples)
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    rewards = r.batch(samples)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        mean_r = float(w @ rewards)
        std_r = float(np.sqrt(max(w @ (rewards - mean_r) ** 2, 0.0)))
    else:
        mean_r = float(rewards.mean())
        std_r = float(rewards.std())
    flat = samples.reshape(len(samples), -1)
    uniq = len(np.unique(flat, axis=0))
    rng = np.random.default_rng(seed)
    tv = kl = None
    if oracle is not None:
        if np.issubdtype(flat.dtype, np.integer):
            from .processes import empirical_table
            emp = empirical_table(oracle.table.support, samples, weights)
        else:
            emp = empirical_on_grid(oracle.table, samples, weights)
        tv = tv_distance(emp, oracle.table)
        kl = kl_divergence(emp, oracle.table)
    return MetricsSummary(
        n_samples=len(samples),
        mean_reward=mean_r,
        max_reward=float(rewards.max()),
        std_reward=std_r,
        diversity=_pairwise_diversity(samples, rng),
        duplicate_fraction=1.0 - uniq / len(samples),
        tv_to_oracle=tv,
        kl_to_oracle=kl,
    )
