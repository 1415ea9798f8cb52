"""Inference-time guidance algorithms.

All samplers draw a batch of trajectories from t = T down to t = 0 under some
combination of proposal kernel, soft value reweighting, and selection:

* best_of_n            -- unguided sampling, keep the reward argmax
* smc_guidance         -- importance weights + global resampling on low ESS
* svdd                 -- per-particle M-candidate value-tilted selection
* nested_smc           -- SVDD-style local step + global resampling and a
                          normalizing-constant estimate
* beam_search          -- per-particle value argmax (the alpha = 0 limit)
* classifier_guidance_continuous / _so3 -- gradient-shifted kernels
* discrete_guidance_exact / _taylor     -- rate-tilted masked kernels
* walk_jump            -- Langevin iteration at a single smoothing level

Everything is vectorized over particles with a single seeded generator; the
RNG consumption patterns of svdd(M=1), beam_search, and plain proposal
sampling are aligned so the documented reductions are bitwise identities.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import (DegenerateWeightsError, NotDifferentiable,
                     UnsupportedValueModelError)
from .oracles import ess
from .processes import MaskedProcess
from .rewards import RewardModel
from .so3 import So3Process, so3_exp


@dataclass
class GuidanceConfig:
    """Knobs shared by the particle samplers.

    alpha = 0 is accepted only by the argmax-style samplers (svdd/beam).
    ess_threshold is the resampling trigger as a fraction of N.
    """

    alpha: float = 1.0
    n_particles: int = 1
    duplication: int = 1
    ess_threshold: float = 0.5
    proposal: object = "pretrained"
    seed: int = 0
    resampling: str = "multinomial"

    def __post_init__(self):
        if self.n_particles < 1 or self.duplication < 1:
            raise ValueError("n_particles and duplication must be >= 1")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in [0, 1]")
        if self.resampling not in ("multinomial", "systematic"):
            raise ValueError(f"unknown resampling {self.resampling!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass
class ParticleSystem:
    """States, log-weights, and ancestry bookkeeping of one sampler run."""

    states: np.ndarray
    log_weights: np.ndarray
    ancestry: list = field(default_factory=list)
    step: int = 0


@dataclass
class SamplerReport:
    final_states: np.ndarray
    final_log_weights: np.ndarray
    ess_trace: np.ndarray
    resample_steps: list
    rewards: np.ndarray | None = None
    mean_reward: float | None = None
    max_reward: float | None = None
    log_z: float | None = None
    wall_clock: float = 0.0
    extras: dict = field(default_factory=dict)

    def normalized_weights(self) -> np.ndarray:
        lw = self.final_log_weights
        return np.exp(lw - logsumexp(lw))

    def summary_dict(self) -> dict:
        return {
            "n_particles": len(self.final_states),
            "mean_reward": self.mean_reward,
            "max_reward": self.max_reward,
            "min_ess": float(np.min(self.ess_trace)),
            "resample_events": len(self.resample_steps),
            "log_z": self.log_z,
        }


@dataclass
class TransitionKernel:
    """A proposal: batched sampler plus evaluable log-probability."""

    sampler: Callable  # (states, t, rng, M) -> (N, M, ...)
    logprob: Callable  # (next (N, M, ...), prev, t) -> (N, M)
    kind: str = "custom"


def pretrained_kernel(model) -> TransitionKernel:
    return TransitionKernel(
        sampler=lambda states, t, rng, M: model.step_sample(t, states, rng, M),
        logprob=lambda nxt, prev, t: model.step_logprob(t, prev, nxt),
        kind="pretrained",
    )


def _finish(report_start: float, states, log_weights, ess_trace, resample_steps,
            reward: RewardModel | None, log_z=None, extras=None) -> SamplerReport:
    rewards = mean_r = max_r = None
    if reward is not None:
        rewards = reward.batch(states)
        w = np.exp(log_weights - logsumexp(log_weights))
        mean_r = float(w @ rewards)
        max_r = float(rewards.max())
    return SamplerReport(
        final_states=states,
        final_log_weights=log_weights,
        ess_trace=np.asarray(ess_trace, dtype=float),
        resample_steps=resample_steps,
        rewards=rewards,
        mean_reward=mean_r,
        max_reward=max_r,
        log_z=log_z,
        wall_clock=time.perf_counter() - report_start,
        extras=extras or {},
    )


def _values_at(values, t: int, states: np.ndarray) -> np.ndarray:
    return np.asarray(values.at(t, states), dtype=float)


def _values_flat(values, t: int, cands: np.ndarray) -> np.ndarray:
    """Candidates (N, M, ...) -> values (N, M)."""
    n, m = cands.shape[:2]
    flat = cands.reshape((n * m,) + cands.shape[2:])
    return _values_at(values, t, flat).reshape(n, m)


def resample_indices(weights: np.ndarray, n: int, rng: np.random.Generator,
                     scheme: str = "multinomial") -> np.ndarray:
    """Draw n ancestor indices with replacement from normalized weights."""
    if scheme == "multinomial":
        return rng.choice(len(weights), size=n, p=weights)
    # systematic: one uniform offset, stratified inverse CDF
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(weights), positions).clip(max=len(weights) - 1)


def _check_weights(log_w: np.ndarray) -> None:
    if not np.any(np.isfinite(log_w)):
        raise DegenerateWeightsError("every particle weight collapsed to zero")


def resolve_kernel(model, values, cfg: GuidanceConfig) -> TransitionKernel:
    if isinstance(cfg.proposal, TransitionKernel):
        return cfg.proposal
    if cfg.proposal == "pretrained":
        return pretrained_kernel(model)
    if cfg.proposal == "classifier_guided":
        if model.kind == "gaussian":
            return continuous_guided_kernel(model, values, cfg.alpha)
        if model.kind == "masked":
            return taylor_guided_kernel(model, values, cfg.alpha)
        raise ValueError("classifier_guided proposal needs a gaussian or masked model")
    raise ValueError(f"unknown proposal {cfg.proposal!r}")


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def best_of_n(model, r: RewardModel, N: int, rng: np.random.Generator):
    """Draw N unguided samples and return (reward argmax, all rewards)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    finals = model.rollout(N, rng)
    rewards = r.batch(finals)
    return finals[int(np.argmax(rewards))], rewards


def pretrained_sampling(model, cfg: GuidanceConfig,
                        reward: RewardModel | None = None) -> SamplerReport:
    """Plain proposal sampling wrapped in a report (uniform weights)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    x = model.init_sample(cfg.n_particles, rng)
    trace = [float(cfg.n_particles)]
    for t in range(model.T, 0, -1):
        x = model.step_sample(t, x, rng, 1)[:, 0]
        trace.append(float(cfg.n_particles))
    return _finish(t0, x, np.zeros(cfg.n_particles), trace, [], reward)


# ---------------------------------------------------------------------------
# SMC guidance
# ---------------------------------------------------------------------------


def smc_guidance(model, values, cfg: GuidanceConfig,
                 reward: RewardModel | None = None) -> SamplerReport:
    """Weighted particle guidance with ESS-triggered global resampling.

    Incremental log-weight: log p_pre - log q + (v_{t-1}(x') - v_t(x))/alpha;
    a stochastic initial law contributes an extra v_T(x_T)/alpha factor.
    Weights reset to uniform after each resampling event.
    """
    if cfg.alpha <= 0:
        raise ValueError("smc_guidance needs alpha > 0")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    kernel = resolve_kernel(model, values, cfg)
    N = cfg.n_particles
    sys = ParticleSystem(states=model.init_sample(N, rng), log_weights=np.zeros(N))
    if model.init_is_stochastic():
        sys.log_weights = sys.log_weights + _values_at(values, model.T, sys.states) / cfg.alpha
    trace = [ess(sys.log_weights)]
    resampled = []
    v_cur = _values_at(values, model.T, sys.states)
    for t in range(model.T, 0, -1):
        cand = kernel.sampler(sys.states, t, rng, 1)
        v_next = _values_flat(values, t - 1, cand)[:, 0]
        inc = (v_next - v_cur) / cfg.alpha
        if kernel.kind != "pretrained":
            inc = inc + model.step_logprob(t, sys.states, cand)[:, 0] \
                - kernel.logprob(cand, sys.states, t)[:, 0]
        sys.states = cand[:, 0]
        sys.log_weights = sys.log_weights + inc
        _check_weights(sys.log_weights)
        e = ess(sys.log_weights)
        if e < cfg.ess_threshold * N:
            w = np.exp(sys.log_weights - logsumexp(sys.log_weights))
            idx = resample_indices(w, N, rng, cfg.resampling)
            sys.states = sys.states[idx]
            v_next = v_next[idx]
            sys.log_weights = np.zeros(N)
            sys.ancestry.append(idx)
            resampled.append(t - 1)
            e = float(N)
        trace.append(e)
        v_cur = v_next
        sys.step = t - 1
    return _finish(t0, sys.states, sys.log_weights, trace, resampled, reward)


# ---------------------------------------------------------------------------
# Per-particle value selection (SVDD / beam search)
# ---------------------------------------------------------------------------


def _select_rows(log_w: np.ndarray, rng: np.random.Generator,
                 argmax: bool) -> np.ndarray:
    """Pick one index per row; categorical by inverse CDF, or argmax."""
    if argmax:
        return np.argmax(log_w, axis=1)
    if log_w.shape[1] == 1:
        return np.zeros(len(log_w), dtype=np.int64)
    norm = log_w - logsumexp(log_w, axis=1, keepdims=True)
    cdf = np.cumsum(np.exp(norm), axis=1)
    u = rng.random((len(log_w), 1))
    return np.argmax(u < cdf, axis=1)


def _per_particle_guidance(model, values, cfg: GuidanceConfig,
                           reward: RewardModel | None, argmax: bool) -> SamplerReport:
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    kernel = resolve_kernel(model, values, cfg)
    N, M = cfg.n_particles, cfg.duplication
    x = model.init_sample(N, rng)
    trace = [float(N)]
    local_ess = []
    for t in range(model.T, 0, -1):
        cand = kernel.sampler(x, t, rng, M)
        v = _values_flat(values, t - 1, cand)
        if argmax:
            sel = np.argmax(v, axis=1)
            log_w = v
        else:
            log_w = v / cfg.alpha
            if kernel.kind != "pretrained":
                log_w = log_w + model.step_logprob(t, x, cand) \
                    - kernel.logprob(cand, x, t)
            if not np.all(np.any(np.isfinite(log_w), axis=1)):
                raise DegenerateWeightsError("a particle's candidate weights all vanished")
            sel = _select_rows(log_w, rng, argmax=False)
        if M > 1:
            rows = log_w - logsumexp(log_w, axis=1, keepdims=True)
            local_ess.append(float(np.mean(np.exp(-logsumexp(2.0 * rows, axis=1)))))
        x = cand[np.arange(N), sel]
        trace.append(float(N))
    extras = {"mean_local_ess": float(np.mean(local_ess)) if local_ess else float(M)}
    return _finish(t0, x, np.zeros(N), trace, [], reward, extras=extras)


def svdd(model, values, cfg: GuidanceConfig,
         reward: RewardModel | None = None) -> SamplerReport:
    """Per-particle value-tilted importance selection among M candidates.

    With alpha = 0 the categorical degenerates to the value argmax, which is
    exactly beam_search; with M = 1 it is plain proposal sampling.
    """
    return _per_particle_guidance(model, values, cfg, reward, argmax=cfg.alpha == 0)


def beam_search(model, values, cfg: GuidanceConfig,
                reward: RewardModel | None = None) -> SamplerReport:
    """Width-M beam per particle, keeping the value-argmax child each step."""
    return _per_particle_guidance(model, values, cfg, reward, argmax=True)


# ---------------------------------------------------------------------------
# Nested SMC (local SVDD step + global resampling + normalizer estimate)
# ---------------------------------------------------------------------------


def nested_smc(model, values, cfg: GuidanceConfig,
               reward: RewardModel | None = None) -> SamplerReport:
    """Local M-candidate selection plus global N-way resampling every step.

    The per-particle global weight is the local-mean candidate weight divided
    by exp(v_t(x_t)/alpha), so the running product of batch means is an
    estimate of Z = sum_x exp(r(x)/alpha) p_pre(x); with exact values the
    per-step factors concentrate at 1 and log Z is carried by the initial
    v_T term.
    """
    if cfg.alpha <= 0:
        raise ValueError("nested_smc needs alpha > 0")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    kernel = resolve_kernel(model, values, cfg)
    N, M = cfg.n_particles, cfg.duplication
    x = model.init_sample(N, rng)
    v_cur = _values_at(values, model.T, x) / cfg.alpha
    # initial factor: batch mean of exp(v_T/alpha) (a constant for a
    # deterministic initial law)
    log_z = float(logsumexp(v_cur) - np.log(N))
    if model.init_is_stochastic():
        w0 = np.exp(v_cur - logsumexp(v_cur))
        idx = resample_indices(w0, N, rng, cfg.resampling)
        x = x[idx]
        v_cur = v_cur[idx]
    trace = [ess(v_cur)]
    resampled = []
    for t in range(model.T, 0, -1):
        cand = kernel.sampler(x, t, rng, M)
        v = _values_flat(values, t - 1, cand) / cfg.alpha
        local_log_w = v
        if kernel.kind != "pretrained":
            local_log_w = local_log_w + model.step_logprob(t, x, cand) \
                - kernel.logprob(cand, x, t)
        sel = _select_rows(local_log_w, rng, argmax=False)
        picked = cand[np.arange(N), sel]
        v_sel = v[np.arange(N), sel]
        # corrected global weight: mean local weight / exp(v_t(parent)/alpha)
        global_log_w = logsumexp(local_log_w, axis=1) - np.log(M) - v_cur
        _check_weights(global_log_w)
        log_z += float(logsumexp(global_log_w) - np.log(N))
        gw = np.exp(global_log_w - logsumexp(global_log_w))
        idx = resample_indices(gw, N, rng, cfg.resampling)
        x = picked[idx]
        v_cur = v_sel[idx]
        resampled.append(t - 1)
        trace.append(ess(global_log_w))
    return _finish(t0, x, np.zeros(N), trace, resampled, reward, log_z=log_z)


# ---------------------------------------------------------------------------
# Classifier guidance, continuous (Gaussian kernel shift)
# ---------------------------------------------------------------------------


def continuous_guided_kernel(model, values, alpha: float) -> TransitionKernel:
    """Pretrained Gaussian kernel with mean shifted by sigma_t^2 grad v_t / alpha."""
    if not hasattr(values, "grad"):
        raise UnsupportedValueModelError("value model exposes no gradient")

    def guided_mean_var(t, states):
        mean, var = model.backward_mean_var(t, states)
        try:
            g = values.grad(t, states)
        except NotDifferentiable as exc:
            raise UnsupportedValueModelError(str(exc)) from exc
        return mean + var * g / alpha, var

    def sampler(states, t, rng, M):
        mean, var = guided_mean_var(t, states)
        eps = rng.standard_normal((len(states), M, model.dim))
        return mean[:, None, :] + np.sqrt(var) * eps

    def logprob(nxt, prev, t):
        mean, var = guided_mean_var(t, prev)
        if var == 0.0:
            return np.zeros(nxt.shape[:2])
        diff = nxt - mean[:, None, :]
        return -0.5 * np.sum(diff**2 / var + np.log(2 * np.pi * var), axis=2)

    return TransitionKernel(sampler=sampler, logprob=logprob, kind="classifier_guided")


def classifier_guidance_continuous(model, values, cfg: GuidanceConfig,
                                   reward: RewardModel | None = None) -> SamplerReport:
    """Sample every backward step from the gradient-shifted Gaussian kernel."""
    if cfg.alpha <= 0:
        raise ValueError("classifier guidance needs alpha > 0")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    kernel = continuous_guided_kernel(model, values, cfg.alpha)
    N = cfg.n_particles
    x = model.init_sample(N, rng)
    trace = [float(N)]
    for t in range(model.T, 0, -1):
        x = kernel.sampler(x, t, rng, 1)[:, 0]
        trace.append(float(N))
    return _finish(t0, x, np.zeros(N), trace, [], reward)


# ---------------------------------------------------------------------------
# Classifier guidance on SO(3)
# ---------------------------------------------------------------------------


def _so3_value_grad(model: So3Process, reward: RewardModel, alpha: float,
                    t: int, states: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Riemannian gradient of the posterior-mean value by tangent differences.

    Central differences along the three tangent basis directions give the
    gradient coordinates directly (metric factor 2 included), which matches
    the skew-projection of an ambient gradient when one exists.
    """
    out = np.empty((len(states), 3))
    value = lambda s: reward.batch(model.denoise(t, s))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        hi = so3_exp(states, np.broadcast_to(e, (len(states), 3)))
        lo = so3_exp(states, np.broadcast_to(-e, (len(states), 3)))
        out[:, i] = 0.5 * (value(hi) - value(lo)) / (2.0 * h)
    return out


def classifier_guidance_so3(model: So3Process, r: RewardModel | None,
                            cfg: GuidanceConfig) -> SamplerReport:
    """Geodesic random walk with an added Riemannian value gradient.

    vel_t = dt * (score + grad^g v_t / alpha) + sqrt(dt) * eps; passing
    r = None runs the unguided walk with the same noise consumption, for
    paired comparisons.
    """
    if r is not None and cfg.alpha <= 0:
        raise ValueError("guided SO(3) sampling needs alpha > 0")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    N = cfg.n_particles
    x = model.init_sample(N, rng)
    trace = [float(N)]
    for t in range(model.T, 0, -1):
        drift = None
        if r is not None:
            drift = _so3_value_grad(model, r, cfg.alpha, t, x) / cfg.alpha
        x = model.step_sample(t, x, rng, drift_extra=drift)
        trace.append(float(N))
    return _finish(t0, x, np.zeros(N), trace, [], r)


# ---------------------------------------------------------------------------
# Discrete guidance (exact rates and Taylor rates)
# ---------------------------------------------------------------------------


def _neighbor_values(model: MaskedProcess, values, alpha: float, t: int,
                     codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values at the current states and at every single-token unmasking.

    Returns (v_x (N,), v_nbr (N, L, K)) at time t; entries for non-masked
    positions are filled but unused by the callers (their rates are zero).
    """
    if not hasattr(values, "at_codes"):
        raise UnsupportedValueModelError("discrete guidance needs code-addressable values")
    K, L = model.K, model.L
    states = model.decode(codes)
    v_x = np.asarray(values.at_codes(t, codes), dtype=float)
    radix = (K + 1) ** np.arange(L)
    k_grid = np.arange(K)
    nbr = codes[:, None, None] + (k_grid[None, None, :] - K) * radix[None, :, None]
    masked = states == model.mask
    nbr = np.where(masked[:, :, None], nbr, codes[:, None, None])
    v_nbr = np.asarray(values.at_codes(t, nbr.reshape(-1)), dtype=float).reshape(len(codes), L, K)
    return v_x, v_nbr


def _exact_guided_step(model: MaskedProcess, values, alpha: float, t: int,
                       x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One Euler step of the value-tilted single-change kernel.

    Neighbor probability exp((v(x') - v(x))/alpha) * Q_pre * dt, stay
    probability the clamped complement (renormalized when negative).
    """
    K, L = model.K, model.L
    codes = model.encode(x)
    marg = model.denoiser_marginals(x)                      # (N, L, K)
    ab_t = model.schedule.alpha_bar[t]
    ab_prev = model.schedule.alpha_bar[t - 1]
    unmask_w = (ab_prev - ab_t) / (1.0 - ab_t)              # = Q * dt
    v_x, v_nbr = _neighbor_values(model, values, alpha, t - 1, codes)
    masked = (x == model.mask)[:, :, None]
    rate_dt = np.where(masked, unmask_w * marg, 0.0)
    with np.errstate(invalid="ignore"):
        tilt = np.exp((v_nbr - v_x[:, None, None]) / alpha)
    probs = np.where(rate_dt > 0, rate_dt * tilt, 0.0)      # (N, L, K)
    flat = probs.reshape(len(x), L * K)
    total = flat.sum(axis=1)
    # clamp-and-renormalize when the complement would be negative
    scale = np.ones_like(total)
    np.divide(1.0, total, out=scale, where=total > 1.0)
    flat = flat * scale[:, None]
    full = np.concatenate([flat, np.maximum(1.0 - flat.sum(axis=1), 0.0)[:, None]], axis=1)
    full = full / full.sum(axis=1, keepdims=True)
    cdf = np.cumsum(full, axis=1)
    u = rng.random((len(x), 1))
    choice = np.argmax(u < cdf, axis=1)
    out = x.copy()
    moves = choice < L * K
    l_idx, k_idx = choice[moves] // K, choice[moves] % K
    out[np.where(moves)[0], l_idx] = k_idx
    return out


def discrete_guidance_exact(model: MaskedProcess, values, cfg: GuidanceConfig,
                            reward: RewardModel | None = None) -> SamplerReport:
    """Single-token-change guided sampling with exact rate tilts.

    The Euler kernel moves at most one token per step, so positions still
    masked after the t = 1 step are completed by reapplying the t = 1 kernel
    (the continuous-time limit allows several jumps inside one step).
    """
    if cfg.alpha <= 0:
        raise ValueError("discrete_guidance_exact needs alpha > 0")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    N = cfg.n_particles
    x = model.init_sample(N, rng)
    trace = [float(N)]
    for t in range(model.T, 0, -1):
        x = _exact_guided_step(model, values, cfg.alpha, t, x, rng)
        trace.append(float(N))
    guard = 0
    while np.any(x == model.mask):
        left = np.any(x == model.mask, axis=1)
        x[left] = _exact_guided_step(model, values, cfg.alpha, 1, x[left], rng)
        guard += 1
        if guard > model.L + 1:
            raise RuntimeError("masked positions survived the completion sweep")
    return _finish(t0, x, np.zeros(N), trace, [], reward)


def taylor_position_dists(model: MaskedProcess, values, alpha: float, t: int,
                          x: np.ndarray) -> np.ndarray:
    """Per-position guided next-token distributions (N, L, K+1).

    Pretrained unmasking probabilities are multiplied by the first-order
    factor 1 + (v(x^{l->k}) - v(x))/alpha, computed from exact multilinear
    extension partials (vertex differences), floored at zero; the stay-masked
    probability is the clamped complement.  Where the pretrained kernel
    forces unmasking (stay probability exactly zero, i.e. the final step) the
    guided kernel does too, so it never creates mass outside the pretrained
    support.
    """
    codes = model.encode(x)
    base = model.backward_position_dists(t, x)              # (N, L, K+1)
    v_x, v_nbr = _neighbor_values(model, values, alpha, t - 1, codes)
    factor = np.maximum(1.0 + (v_nbr - v_x[:, None, None]) / alpha, 0.0)
    masked = (x == model.mask)[:, :, None]
    out = base.copy()
    out[:, :, :model.K] = np.where(masked, base[:, :, :model.K] * factor,
                                   base[:, :, :model.K])
    unmask_total = out[:, :, :model.K].sum(axis=2)
    stay = np.where(x == model.mask, np.maximum(1.0 - unmask_total, 0.0), 0.0)
    forced = (x == model.mask) & (base[:, :, model.K] == 0.0)
    stay = np.where(forced, 0.0, stay)
    out[:, :, model.K] = np.where(x == model.mask, stay, base[:, :, model.K])
    # all-zero rows (every tilt factor floored at a forced unmask) fall back
    # to the pretrained row
    norm = out.sum(axis=2, keepdims=True)
    dead = norm[..., 0] == 0.0
    if np.any(dead):
        out[dead] = base[dead]
        norm = out.sum(axis=2, keepdims=True)
    return out / norm


def taylor_guided_kernel(model: MaskedProcess, values, alpha: float) -> TransitionKernel:
    def sampler(states, t, rng, M):
        dists = taylor_position_dists(model, values, alpha, t, states)
        cdf = np.cumsum(dists, axis=-1)
        u = rng.random((len(states), M, model.L))
        return np.argmax(u[..., None] < cdf[:, None, :, :], axis=-1)

    def logprob(nxt, prev, t):
        dists = taylor_position_dists(model, values, alpha, t, prev)
        p = np.take_along_axis(dists[:, None, :, :], nxt[..., None], axis=-1)[..., 0]
        with np.errstate(divide="ignore"):
            return np.sum(np.log(p), axis=-1)

    return TransitionKernel(sampler=sampler, logprob=logprob, kind="classifier_guided")


def discrete_guidance_taylor(model: MaskedProcess, values, cfg: GuidanceConfig,
                             reward: RewardModel | None = None) -> SamplerReport:
    """Per-position independent sampling under the Taylor-tilted generator.

    Like the exact-rate sampler, positions the first-order kernel leaves
    masked after the t = 1 step are completed by reapplying that step.
    """
    if cfg.alpha <= 0:
        raise ValueError("discrete_guidance_taylor needs alpha > 0")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    kernel = taylor_guided_kernel(model, values, cfg.alpha)
    N = cfg.n_particles
    x = model.init_sample(N, rng)
    trace = [float(N)]
    for t in range(model.T, 0, -1):
        x = kernel.sampler(x, t, rng, 1)[:, 0]
        trace.append(float(N))
    guard = 0
    while np.any(x == model.mask):
        left = np.any(x == model.mask, axis=1)
        x[left] = kernel.sampler(x[left], 1, rng, 1)[:, 0]
        guard += 1
        if guard > 4 * model.L:
            # tilt factors floored at zero can stall a position; finish with
            # the pretrained forced unmasking
            x[left] = model.step_sample(1, x[left], rng, 1)[:, 0]
    return _finish(t0, x, np.zeros(N), trace, [], reward)


# ---------------------------------------------------------------------------
# Walk-jump (single-level Langevin)
# ---------------------------------------------------------------------------


def walk_jump(smoothed_score: Callable, r: RewardModel, alpha: float, beta: float,
              steps: int, x_init: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Langevin chain y += beta (grad r/alpha + score) + sqrt(2 beta) eps.

    `smoothed_score` evaluates the score of the sigma-smoothed pretrained
    density at a single state.  Returns the full chain, shape (steps+1, d).
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if not r.differentiable:
        raise NotDifferentiable("walk_jump needs a differentiable reward")
    y = np.atleast_1d(np.asarray(x_init, dtype=float)).copy()
    d = y.shape[0]
    chain = np.empty((steps + 1, d))
    chain[0] = y
    noise = rng.standard_normal((steps, d)) * np.sqrt(2.0 * beta)
    for k in range(steps):
        y = y + beta * (r.gradient(y) / alpha + smoothed_score(y)) + noise[k]
        chain[k + 1] = y
    return chain
