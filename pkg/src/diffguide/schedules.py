"""Noise schedules shared by every forward/backward process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALPHA_BAR_EPS = 1e-4


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step retention factors for a T-step diffusion.

    Index convention: t = 0 is clean data, t = T is pure noise / fully masked.
    ``alpha[t]`` and ``sigma2[t]`` are defined for t = 1..T (index 0 is a
    placeholder); ``alpha_bar[t]`` is the cumulative product with
    ``alpha_bar[0] = 1`` exactly.
    """

    T: int
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        ab = np.asarray(self.alpha_bar, dtype=float)
        if ab.shape != (self.T + 1,):
            raise ValueError("alpha_bar must have length T+1")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if np.any(ab <= 0):
            raise ValueError("alpha_bar must be strictly positive")
        if np.any(np.diff(ab) > 0):
            raise ValueError("alpha_bar must be non-increasing")
        # Backward variance (1-alpha_t)(1-alpha_bar_{t-1})/(1-alpha_bar_t);
        # zero at t=1 where alpha_bar_0 = 1.
        s2 = np.zeros(self.T + 1)
        for t in range(1, self.T + 1):
            denom = 1.0 - ab[t]
            if denom > 0:
                s2[t] = (1.0 - self.alpha[t]) * (1.0 - ab[t - 1]) / denom
        object.__setattr__(self, "sigma2", s2)

    @property
    def dt(self) -> float:
        return 1.0 / self.T


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    """Build a schedule of the given kind.

    ``linear`` interpolates alpha_bar from 1-eps down to eps over t = 1..T
    (so alpha_bar[T] = eps regardless of T); ``cosine`` follows the squared
    cosine profile mapped into [eps, 1-eps].
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    eps = ALPHA_BAR_EPS
    u = np.arange(T + 1) / T
    if kind == "linear":
        ab = (1.0 - u) * (1.0 - eps) + u * eps
    elif kind == "cosine":
        ab = eps + (1.0 - 2.0 * eps) * np.cos(0.5 * np.pi * u) ** 2
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    ab[0] = 1.0
    alpha = np.ones(T + 1)
    alpha[1:] = ab[1:] / ab[:-1]
    return NoiseSchedule(T=T, alpha=alpha, alpha_bar=ab)
