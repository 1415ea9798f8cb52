"""Soft value functions: exact enumeration, closed forms, and fitted estimators.

The soft value v_t(x) = alpha * log E[exp(r(x_0)/alpha) | x_t = x] under the
pretrained process.  Values are stored and returned in natural (reward) units;
all exp(./alpha) arithmetic happens in the log domain.
"""

from __future__ import annotations


import numpy as np
from scipy.special import logsumexp

from .processes import GaussianProcess, MaskedProcess, gaussian_posterior_moments
from .rewards import RewardModel, TableReward

REGRESSION_FLOOR = 1e-12
FD_STEP = 1e-4


# ---------------------------------------------------------------------------
# Exact values on masked processes
# ---------------------------------------------------------------------------


def exact_value_discrete(model: MaskedProcess, r: RewardModel, alpha: float,
                         t: int, x: np.ndarray) -> float:
    """Direct terminal-law evaluation of the soft value at one state.

    Enumerates the exact conditional law of x_0 under the pretrained process
    started from (t, x) and returns alpha * log E[exp(r/alpha)].
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0 (the alpha=0 limit lives in the samplers)")
    x = np.asarray(x)
    if t == 0:
        if np.any(x == model.mask):
            # conditional boundary value: expectation under the data conditional
            marg = model.data
            return _masked_boundary_value(model, r, alpha, x)
        return float(r.batch(x[None, :])[0])
    law = model.conditional_terminal_law(t, x)
    logs = r.batch(law.support) / alpha + np.log(law.probs)
    return float(alpha * logsumexp(logs))


def _masked_boundary_value(model: MaskedProcess, r: RewardModel, alpha: float,
                           x: np.ndarray) -> float:
    sup = np.asarray(model.data.support)
    compat = np.all((x[None, :] == model.mask) | (x[None, :] == sup), axis=1)
    mass = model.data.probs * compat
    total = mass.sum()
    if total <= 0:
        return -np.inf
    logs = np.log(mass[compat] / total) + r.batch(sup[compat]) / alpha
    return float(alpha * logsumexp(logs))


class ExactDiscreteValues:
    """Exact value table over every (t, state) of a desk-scale masked process.

    Built by one backward soft-Bellman sweep.  States at t = 0 that still
    contain masks are given the data-conditional boundary value, which is what
    the guided generator needs when it tilts the final unmasking step.
    """

    provenance = "exact"

    def __init__(self, model: MaskedProcess, r: RewardModel, alpha: float):
        if alpha <= 0:
            raise ValueError("alpha must be > 0")
        if model.n_codes > 200_000:
            raise ValueError("state space too large for exact enumeration")
        self.model = model
        self.reward = r
        self.alpha = float(alpha)
        self.log_w = self._bellman_sweep()  # (T+1, n_codes), log E[exp(r/alpha)|...]

    def _bellman_sweep(self) -> np.ndarray:
        model, r, alpha = self.model, self.reward, self.alpha
        states = model.enumerate_states()
        n = model.n_codes
        log_w = np.full((model.T + 1, n), -np.inf)
        full = ~np.any(states == model.mask, axis=1)
        log_w[0, full] = r.batch(states[full]) / alpha
        for code in np.where(~full)[0]:
            log_w[0, code] = _masked_boundary_value(model, r, alpha, states[code]) / alpha
        from .errors import ZeroSupportError
        for t in range(1, model.T + 1):
            for code in range(n):
                x = states[code]
                try:
                    succ, probs = model._successor_dist(t, x)
                except ZeroSupportError:
                    continue  # unreachable observation pattern, stays -inf
                idx = model.encode(succ)
                log_w[t, code] = logsumexp(np.log(probs) + log_w[t - 1, idx])
        return log_w

    # -- evaluation -----------------------------------------------------------

    def at_codes(self, t: int, codes: np.ndarray) -> np.ndarray:
        return self.alpha * self.log_w[t, codes]

    def at(self, t: int, states: np.ndarray) -> np.ndarray:
        return self.at_codes(t, self.model.encode(np.atleast_2d(states)))

    def at_one(self, t: int, x: np.ndarray) -> float:
        return float(self.at(t, x)[0])

    def relaxed(self, t: int, probs: np.ndarray) -> float:
        """Multilinear extension of v_t over (L, K+1) per-position rows.

        Unreachable states (value -inf) only enter with zero weight under
        valid inputs; positive weight on one makes the extension -inf.
        """
        states = self.model.enumerate_states()
        w = np.ones(len(states))
        for l in range(self.model.L):
            w *= np.asarray(probs)[l, states[:, l]]
        vals = self.alpha * self.log_w[t]
        bad = ~np.isfinite(vals)
        if np.any(bad & (w > 0)):
            return -np.inf
        return float(w[~bad] @ vals[~bad])

    def to_text_rows(self) -> list[str]:
        from .processes import string_from_tokens
        rows = []
        states = self.model.enumerate_states()
        for t in range(self.model.T + 1):
            for code, s in enumerate(states):
                rows.append(f"{t}\t{string_from_tokens(s, self.model.K)}\t"
                            f"{self.alpha * self.log_w[t, code]:.12g}")
        return rows

    def write_text(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t\tstate\tvalue\n")
            fh.write("\n".join(self.to_text_rows()) + "\n")


def soft_bellman_residuals(model: MaskedProcess, values: ExactDiscreteValues) -> np.ndarray:
    """|E[exp(v_{t-1}/a) | x_t] - exp(v_t/a)| over all reachable (t, state).

    Expectation by enumeration of the factorized backward kernel.
    """
    alpha = values.alpha
    states = model.enumerate_states()
    out = []
    for t in range(1, model.T + 1):
        for code, x in enumerate(states):
            lhs_log = values.log_w[t, code]
            if not np.isfinite(lhs_log):
                continue
            succ, probs = model._successor_dist(t, x)
            rhs_log = logsumexp(np.log(probs) + values.log_w[t - 1, model.encode(succ)])
            out.append(abs(np.exp(rhs_log) - np.exp(lhs_log)))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Closed-form and surrogate values
# ---------------------------------------------------------------------------


def closed_form_gaussian_value(m, s2, c, alpha: float) -> float:
    """Value of a linear reward under a Gaussian conditional: c.m + c^2 s^2/(2a).

    Scalar or per-dimension vector arguments; the quadratic term sums over
    dimensions.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    s2 = np.atleast_1d(np.asarray(s2, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return float(c @ m + (c**2 @ np.broadcast_to(s2, c.shape)) / (2.0 * alpha))


class GaussianLinearValue:
    """Exact soft value of a linear reward under a Gaussian-mixture process.

    v_t(x) = alpha * log sum_c gamma_c(x) exp(c.m_c/alpha + c^2 s_c^2/(2 alpha^2))
    with the mixture posterior moments of x_0 given x_t.  The gradient is
    analytic for a single component and central finite differences otherwise.
    """

    provenance = "closed_form"

    def __init__(self, process: GaussianProcess, coef, alpha: float,
                 grad_mode: str = "auto"):
        self.process = process
        self.coef = np.atleast_1d(np.asarray(coef, dtype=float))
        self.alpha = float(alpha)
        if grad_mode == "auto":
            grad_mode = "analytic" if len(process.data.weights) == 1 else "fd"
        self.grad_mode = grad_mode

    def at(self, t: int, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        resp, cond_mean, cond_var = gaussian_posterior_moments(
            states, t, self.process.data, self.process.schedule)
        lin = cond_mean @ self.coef                                # (N, C)
        quad = (self.coef**2) @ cond_var.T                         # (C,)
        with np.errstate(divide="ignore"):
            logs = np.log(resp) + lin / self.alpha + quad[None, :] / self.alpha**2 / 2.0
        return self.alpha * logsumexp(logs, axis=1)

    def at_one(self, t: int, x) -> float:
        return float(self.at(t, np.atleast_2d(x))[0])

    def grad(self, t: int, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        if self.grad_mode == "analytic":
            ab = self.process.schedule.alpha_bar[t]
            var = self.process.data.variances[0]
            b = np.sqrt(ab) * var / (ab * var + (1.0 - ab)) if ab < 1.0 else np.ones_like(var)
            g = self.coef * b
            return np.broadcast_to(g, states.shape).copy()
        return finite_difference_grad(lambda s: self.at(t, s), states)


def finite_difference_grad(fn, states: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of a batched scalar function, column by column."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    out = np.empty_like(states)
    for j in range(states.shape[1]):
        hi, lo = states.copy(), states.copy()
        hi[:, j] += h
        lo[:, j] -= h
        out[:, j] = (fn(hi) - fn(lo)) / (2.0 * h)
    return out


class PosteriorMeanValue:
    """Training-free surrogate v(t, x) = r(denoiser(t, x)).

    Discrete processes evaluate the reward's multilinear extension at the
    per-position posterior marginals; continuous and rotation processes plug
    the posterior-mean denoiser output into the reward.
    """

    provenance = "posterior_mean"

    def __init__(self, process, reward: RewardModel):
        self.process = process
        self.reward = reward

    def at(self, t: int, states: np.ndarray) -> np.ndarray:
        if self.process.kind == "masked":
            states = np.atleast_2d(states)
            if not isinstance(self.reward, TableReward):
                raise ValueError("posterior-mean value on sequences needs a table reward")
            marg = self.process.denoiser_marginals(states)
            return self.reward.extension_batch(marg)
        if self.process.kind == "gaussian":
            x0hat, _ = self.process.denoise(t, np.atleast_2d(states))
            return self.reward.batch(x0hat)
        x0hat = self.process.denoise(t, states)
        return self.reward.batch(x0hat)

    def at_codes(self, t: int, codes: np.ndarray) -> np.ndarray:
        return self.at(t, self.process.decode(np.asarray(codes)))

    def at_one(self, t: int, x) -> float:
        x = np.asarray(x)
        single_ndim = 2 if self.process.kind == "so3" else 1
        if x.ndim == single_ndim:
            x = x[None, ...]
        return float(self.at(t, x)[0])

    def grad(self, t: int, states: np.ndarray) -> np.ndarray:
        return finite_difference_grad(lambda s: self.at(t, s), states)


def posterior_mean_value(process, r: RewardModel, t: int, x) -> float:
    """One-shot posterior-mean value at a single state."""
    return PosteriorMeanValue(process, r).at_one(t, x)


# ---------------------------------------------------------------------------
# Fitted estimators (Monte Carlo regression / soft Q-learning)
# ---------------------------------------------------------------------------


class FittedDiscreteValues:
    """Tabular fitted values with posterior-mean fallback on unseen cells."""

    def __init__(self, model: MaskedProcess, r: RewardModel, alpha: float,
                 table: np.ndarray, seen: np.ndarray, provenance: str):
        self.model = model
        self.alpha = float(alpha)
        self.table = table          # (T+1, n_codes) natural units
        self.seen = seen            # bool (T+1, n_codes)
        self.provenance = provenance
        self._fallback = PosteriorMeanValue(model, r)
        self.fallback_events = 0

    def at_codes(self, t: int, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes)
        vals = self.table[t, codes]
        miss = ~self.seen[t, codes]
        if np.any(miss):
            self.fallback_events += int(miss.sum())
            vals = vals.copy()
            vals[miss] = self._fallback.at(t, self.model.decode(codes[miss]))
        return vals

    def at(self, t: int, states: np.ndarray) -> np.ndarray:
        return self.at_codes(t, self.model.encode(np.atleast_2d(states)))

    def at_one(self, t: int, x) -> float:
        return float(self.at(t, np.atleast_2d(x))[0])

    def write_text(self, path) -> None:
        from .processes import string_from_tokens
        states = self.model.enumerate_states()
        with open(path, "w") as fh:
            fh.write("t\tstate\tvalue\tseen\n")
            for t in range(self.model.T + 1):
                for code, s in enumerate(states):
                    fh.write(f"{t}\t{string_from_tokens(s, self.model.K)}\t"
                             f"{self.table[t, code]:.12g}\t{int(self.seen[t, code])}\n")


def _rollout_codes(model: MaskedProcess, S: int, rng: np.random.Generator) -> np.ndarray:
    path = model.rollout(S, rng, keep_path=True)  # (T+1, S, L)
    return np.stack([model.encode(path[t]) for t in range(model.T + 1)])


def _cell_log_means(codes_t: np.ndarray, log_targets: np.ndarray,
                    n_codes: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell log-mean-exp of log_targets grouped by code."""
    out = np.full(n_codes, -np.inf)
    seen = np.zeros(n_codes, dtype=bool)
    order = np.argsort(codes_t, kind="stable")
    sorted_codes = codes_t[order]
    bounds = np.searchsorted(sorted_codes, np.arange(n_codes + 1))
    for c in range(n_codes):
        lo, hi = bounds[c], bounds[c + 1]
        if hi > lo:
            out[c] = logsumexp(log_targets[order[lo:hi]]) - np.log(hi - lo)
            seen[c] = True
    return out, seen


def mc_regression_fit(model: MaskedProcess, r: RewardModel, alpha: float, S: int,
                      rng: np.random.Generator, features: str = "tabular",
                      space: str = "exp") -> FittedDiscreteValues:
    """Monte Carlo value regression on pretrained rollouts.

    Tabular features give the per-(t, cell) sample mean of exp(r(x_0)/alpha)
    (exp space, the default) or of r(x_0)/alpha (log space); the result is
    alpha*log of the positive part, floored at 1e-12 before the log.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    if features != "tabular":
        raise ValueError("only tabular features are supported for masked models")
    codes = _rollout_codes(model, S, rng)
    log_targets = r.batch(model.decode(codes[0])) / alpha
    table = np.zeros((model.T + 1, model.n_codes))
    seen = np.zeros((model.T + 1, model.n_codes), dtype=bool)
    for t in range(model.T + 1):
        if space == "exp":
            lm, sn = _cell_log_means(codes[t], log_targets, model.n_codes)
            table[t] = alpha * np.maximum(lm, np.log(REGRESSION_FLOOR))
        else:
            lm = np.zeros(model.n_codes)
            sn = np.zeros(model.n_codes, dtype=bool)
            for c in np.unique(codes[t]):
                sel = codes[t] == c
                lm[c] = log_targets[sel].mean()
                sn[c] = True
            table[t] = alpha * lm
        seen[t] = sn
    return FittedDiscreteValues(model, r, alpha, table, seen, "mc_regression")


def soft_q_fit(model: MaskedProcess, r: RewardModel, alpha: float, S: int, J: int,
               rng: np.random.Generator, features: str = "tabular") -> FittedDiscreteValues:
    """Fitted soft-Q iteration: J sweeps of one-step bootstrapped regression.

    Sweep j regresses exp(f_j/alpha)(x_t) onto exp(f_{j-1}/alpha)(x_{t-1})
    along rollout transitions; the t = 0 boundary stays at exp(r/alpha).
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    if features != "tabular":
        raise ValueError("only tabular features are supported for masked models")
    codes = _rollout_codes(model, S, rng)
    n = model.n_codes
    log_f = np.full((model.T + 1, n), -np.inf)
    seen = np.zeros((model.T + 1, n), dtype=bool)
    full_states = model.decode(np.arange(n))
    is_full = ~np.any(full_states == model.mask, axis=1)
    log_f[0, is_full] = r.batch(full_states[is_full]) / alpha
    seen[0] = is_full
    for _ in range(J):
        new = log_f.copy()
        for t in range(1, model.T + 1):
            succ_logs = log_f[t - 1, codes[t - 1]]
            lm, sn = _cell_log_means(codes[t], succ_logs, n)
            new[t] = lm
            seen[t] = sn
        log_f = new
    table = alpha * np.maximum(log_f, np.log(REGRESSION_FLOOR))
    table[0, is_full] = alpha * log_f[0, is_full]
    return FittedDiscreteValues(model, r, alpha, table, seen, "fqi")


class ConstantValue:
    """v(t, x) = c everywhere; handy for degeneracy tests."""

    provenance = "constant"

    def __init__(self, c: float = 0.0):
        self.c = float(c)

    def at(self, t, states):
        return np.full(len(np.atleast_2d(states)), self.c)

    def at_codes(self, t, codes):
        return np.full(len(np.asarray(codes)), self.c)

    def at_one(self, t, x) -> float:
        return self.c

    def grad(self, t, states):
        return np.zeros_like(np.atleast_2d(np.asarray(states, dtype=float)))
