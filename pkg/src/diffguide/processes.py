"""Forward noising and backward denoising processes with exact analytic denoisers.

Two process families are provided:

* :class:`GaussianProcess` -- variance-preserving Gaussian diffusion whose data
  distribution is an explicit Gaussian mixture, so the posterior mean denoiser
  and score are available in closed form.
* :class:`MaskedProcess` -- masked discrete diffusion over length-L sequences
  with vocabulary {0..K-1}; the denoiser is the exact conditional of a small
  explicit data table, so every marginal and terminal law can be enumerated.

States are plain numpy arrays: float vectors of shape (d,) for the Gaussian
process, int token arrays of shape (L,) for the masked process (mask token is
the integer K).  Batches stack along a leading axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateStepError, ZeroSupportError
from .schedules import NoiseSchedule

_ALPHABET = "ABCDEFGHIJKLMNOP"
MASK_CHAR = "?"


def tokens_from_string(s: str, K: int) -> np.ndarray:
    """Parse 'AB?A' into an int token array; '?' is the mask token K."""
    toks = []
    for ch in s:
        if ch == MASK_CHAR:
            toks.append(K)
        else:
            k = _ALPHABET.index(ch)
            if k >= K:
                raise ValueError(f"token {ch!r} outside vocabulary of size {K}")
            toks.append(k)
    return np.array(toks, dtype=np.int64)


def string_from_tokens(tokens: np.ndarray, K: int) -> str:
    return "".join(MASK_CHAR if t == K else _ALPHABET[t] for t in np.asarray(tokens))


def serialize_states(states: np.ndarray, K: int | None = None) -> list[str]:
    """One text line per state: token strings for sequences, whitespace-
    separated reals for vectors, nine-number rows for rotation matrices."""
    states = np.asarray(states)
    if np.issubdtype(states.dtype, np.integer):
        if K is None:
            raise ValueError("sequence serialization needs the vocabulary size K")
        return [string_from_tokens(s, K) for s in states]
    flat = states.reshape(len(states), -1)
    return [" ".join(f"{v:.10g}" for v in row) for row in flat]


def onehot_view(tokens: np.ndarray, K: int) -> np.ndarray:
    """L x (K+1) indicator array; the mask token occupies the last column."""
    tokens = np.asarray(tokens)
    out = np.zeros(tokens.shape + (K + 1,))
    np.put_along_axis(out, tokens[..., None], 1.0, axis=-1)
    return out


def change_count(x: np.ndarray, y: np.ndarray) -> int:
    """Number of differing positions: half the L1 distance of one-hot views."""
    return int(np.sum(np.asarray(x) != np.asarray(y)))


# ---------------------------------------------------------------------------
# Data distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistributionTable:
    """Explicit probability table over a small finite support.

    ``support`` is an (S, L) int array of sequences or an (S, d) float array of
    grid points; ``probs`` sums to one.  ``log_z`` records the log normalizer
    that was divided out when the table was built from unnormalized mass.
    """

    support: np.ndarray
    probs: np.ndarray
    log_z: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        if len(p) != len(self.support):
            raise ValueError("support/probs length mismatch")

    @classmethod
    def from_unnormalized(cls, support, log_mass) -> "DistributionTable":
        log_mass = np.asarray(log_mass, dtype=float)
        log_z = float(logsumexp(log_mass))
        if not np.isfinite(log_z):
            raise ValueError("total mass is zero or non-finite")
        return cls(support=np.asarray(support), probs=np.exp(log_mass - log_z), log_z=log_z)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.probs), size=n, p=self.probs)
        return self.support[idx]


def empirical_table(support: np.ndarray, samples: np.ndarray,
                    weights: np.ndarray | None = None) -> DistributionTable:
    """Weighted empirical distribution of discrete samples on a fixed support."""
    support = np.asarray(support)
    samples = np.asarray(samples)
    if weights is None:
        weights = np.ones(len(samples))
    weights = np.asarray(weights, dtype=float)
    counts = np.zeros(len(support))
    # Match rows by encoding both sides with the same mixed radix.
    base = max(int(samples.max(initial=0)), int(support.max(initial=0))) + 2
    radix = base ** np.arange(support.shape[1])
    sup_codes = support @ radix
    sam_codes = samples @ radix
    order = np.argsort(sup_codes)
    pos = np.searchsorted(sup_codes[order], sam_codes)
    ok = (pos < len(sup_codes)) & (sup_codes[order][np.clip(pos, 0, len(order) - 1)] == sam_codes)
    if not np.all(ok):
        raise ValueError("sample outside the given support")
    np.add.at(counts, order[pos], weights)
    return DistributionTable(support=support, probs=counts / counts.sum())


@dataclass(frozen=True)
class GaussianMixtureData:
    """Diagonal Gaussian mixture; components with zero variance are point masses."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(np.asarray(self.variances) < 0):
            raise ValueError("variances must be >= 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        object.__setattr__(self, "variances", np.atleast_2d(np.asarray(self.variances, dtype=float)))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp]) * eps

    def smoothed(self, sigma2: float) -> "GaussianMixtureData":
        """The mixture convolved with isotropic N(0, sigma2)."""
        return GaussianMixtureData(self.weights, self.means, self.variances + sigma2)

    def score(self, x: np.ndarray) -> np.ndarray:
        """Gradient of log density at x (batched); requires positive variances."""
        x = np.atleast_2d(x)
        if np.any(self.variances <= 0):
            raise ValueError("score undefined for point-mass components")
        # log N(x; mu_c, var_c) per component, diagonal covariance
        diff = x[:, None, :] - self.means[None, :, :]  # (N, C, d)
        var = self.variances[None, :, :]
        log_comp = -0.5 * np.sum(diff**2 / var + np.log(2 * np.pi * var), axis=2)
        log_comp = log_comp + np.log(self.weights)[None, :]
        resp = np.exp(log_comp - logsumexp(log_comp, axis=1, keepdims=True))
        grad = -(resp[:, :, None] * diff / var).sum(axis=1)
        return grad

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        diff = x[:, None, :] - self.means[None, :, :]
        var = self.variances[None, :, :]
        log_comp = -0.5 * np.sum(diff**2 / var + np.log(2 * np.pi * var), axis=2)
        return logsumexp(log_comp + np.log(self.weights)[None, :], axis=1)


# ---------------------------------------------------------------------------
# Gaussian process
# ---------------------------------------------------------------------------


def gaussian_forward_sample(x0: np.ndarray, t: int, sched: NoiseSchedule,
                            rng: np.random.Generator) -> np.ndarray:
    """Draw x_t ~ N(sqrt(abar_t) x0, (1-abar_t) I)."""
    if not 0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    ab = sched.alpha_bar[t]
    x0 = np.asarray(x0, dtype=float)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.standard_normal(x0.shape)


def gaussian_backward_step(xt: np.ndarray, x0hat: np.ndarray, t: int,
                           sched: NoiseSchedule) -> tuple[np.ndarray, float]:
    """Posterior-style backward mean and variance given a denoiser output."""
    if t < 1:
        raise ValueError("backward step needs t >= 1")
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    a_t = sched.alpha[t]
    if 1.0 - ab_t == 0.0:
        raise DegenerateStepError("alpha_bar_t = 1 makes the backward mean undefined")
    mean = (np.sqrt(a_t) * (1.0 - ab_prev) * np.asarray(xt)
            + np.sqrt(ab_prev) * (1.0 - a_t) * np.asarray(x0hat)) / (1.0 - ab_t)
    return mean, float(sched.sigma2[t])


def param_convert(kind: str, value: np.ndarray, xt: np.ndarray, t: int,
                  sched: NoiseSchedule) -> dict[str, np.ndarray]:
    """Convert between the x0hat / epshat / score parameterizations.

    Uses x_t = sqrt(abar) x0 + sqrt(1-abar) eps and score = -eps/sqrt(1-abar).
    """
    ab = sched.alpha_bar[t]
    if ab <= 0.0 or ab >= 1.0:
        raise DegenerateStepError(f"alpha_bar_t = {ab} is a degenerate endpoint")
    xt = np.asarray(xt, dtype=float)
    value = np.asarray(value, dtype=float)
    sq_ab, sq_1mab = np.sqrt(ab), np.sqrt(1.0 - ab)
    if kind == "x0hat":
        x0 = value
        eps = (xt - sq_ab * x0) / sq_1mab
    elif kind == "epshat":
        eps = value
        x0 = (xt - sq_1mab * eps) / sq_ab
    elif kind == "score":
        eps = -value * sq_1mab
        x0 = (xt - sq_1mab * eps) / sq_ab
    else:
        raise ValueError(f"unknown parameterization {kind!r}")
    return {"x0hat": x0, "epshat": eps, "score": -eps / sq_1mab}


def exact_denoiser_continuous(xt: np.ndarray, t: int, data: GaussianMixtureData,
                              sched: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Exact posterior mean E[x0 | x_t] and score under a Gaussian mixture prior.

    Accepts a single state (d,) or a batch (N, d); output matches the input shape.
    """
    single = np.asarray(xt).ndim == 1
    x = np.atleast_2d(np.asarray(xt, dtype=float))
    ab = sched.alpha_bar[t]
    if ab <= 0.0:
        raise DegenerateStepError("alpha_bar_t = 0: x_t carries no signal")
    if ab == 1.0:
        x0hat, score = x.copy(), data.score(x)
    else:
        var = data.variances[None, :, :]            # (1, C, d)
        mu = data.means[None, :, :]
        marg_var = ab * var + (1.0 - ab)            # marginal variance of x_t per component
        diff = x[:, None, :] - np.sqrt(ab) * mu     # (N, C, d)
        log_comp = -0.5 * np.sum(diff**2 / marg_var + np.log(2 * np.pi * marg_var), axis=2)
        log_comp = log_comp + np.log(data.weights)[None, :]
        resp = np.exp(log_comp - logsumexp(log_comp, axis=1, keepdims=True))
        cond_mean = mu + np.sqrt(ab) * var / marg_var * diff
        x0hat = np.sum(resp[:, :, None] * cond_mean, axis=1)
        score = (np.sqrt(ab) * x0hat - x) / (1.0 - ab)
    if single:
        return x0hat[0], score[0]
    return x0hat, score


def gaussian_posterior_moments(xt: np.ndarray, t: int, data: GaussianMixtureData,
                               sched: NoiseSchedule) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-component responsibilities and conditional moments of x0 given x_t.

    Returns (resp (N,C), cond_mean (N,C,d), cond_var (C,d)).
    """
    x = np.atleast_2d(np.asarray(xt, dtype=float))
    ab = sched.alpha_bar[t]
    var = data.variances[None, :, :]
    mu = data.means[None, :, :]
    if ab == 1.0:
        resp = np.tile(data.weights, (len(x), 1))
        return resp, np.broadcast_to(x[:, None, :], (len(x), len(data.weights), data.dim)).copy(), \
            np.zeros_like(data.variances)
    marg_var = ab * var + (1.0 - ab)
    diff = x[:, None, :] - np.sqrt(ab) * mu
    log_comp = -0.5 * np.sum(diff**2 / marg_var + np.log(2 * np.pi * marg_var), axis=2)
    log_comp = log_comp + np.log(data.weights)[None, :]
    resp = np.exp(log_comp - logsumexp(log_comp, axis=1, keepdims=True))
    cond_mean = mu + np.sqrt(ab) * var / marg_var * diff
    cond_var = (data.variances * (1.0 - ab)) / (ab * data.variances + (1.0 - ab))
    return resp, cond_mean, cond_var


class GaussianProcess:
    """Pre-trained Gaussian diffusion with the exact mixture denoiser."""

    kind = "gaussian"

    def __init__(self, data: GaussianMixtureData, schedule: NoiseSchedule):
        self.data = data
        self.schedule = schedule

    @property
    def dim(self) -> int:
        return self.data.dim

    @property
    def T(self) -> int:
        return self.schedule.T

    def init_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim))

    def init_is_stochastic(self) -> bool:
        return True

    def denoise(self, t: int, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return exact_denoiser_continuous(states, t, self.data, self.schedule)

    def backward_mean_var(self, t: int, states: np.ndarray) -> tuple[np.ndarray, float]:
        x0hat, _ = self.denoise(t, states)
        return gaussian_backward_step(states, x0hat, t, self.schedule)

    def step_sample(self, t: int, states: np.ndarray, rng: np.random.Generator,
                    M: int = 1) -> np.ndarray:
        """M pretrained backward draws per state: (N, d) -> (N, M, d)."""
        mean, var = self.backward_mean_var(t, states)
        eps = rng.standard_normal((len(states), M, self.dim))
        return mean[:, None, :] + np.sqrt(var) * eps

    def step_logprob(self, t: int, prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
        """Log density of candidates (N, M, d) under the pretrained kernel."""
        mean, var = self.backward_mean_var(t, prev)
        if var == 0.0:
            return np.zeros(nxt.shape[:2])
        diff = nxt - mean[:, None, :]
        return -0.5 * np.sum(diff**2 / var + np.log(2 * np.pi * var), axis=2)

    def forward_sample(self, x0: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        return gaussian_forward_sample(x0, t, self.schedule, rng)

    def rollout(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x = self.init_sample(n, rng)
        for t in range(self.T, 0, -1):
            x = self.step_sample(t, x, rng, M=1)[:, 0, :]
        return x


# ---------------------------------------------------------------------------
# Masked discrete process
# ---------------------------------------------------------------------------


def masked_forward_sample(x0: np.ndarray, t: int, sched: NoiseSchedule,
                          rng: np.random.Generator, K: int) -> np.ndarray:
    """Keep each token with probability abar_t, replace with mask otherwise."""
    if not 0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    x0 = np.asarray(x0)
    if np.any(x0 >= K):
        raise ValueError("forward input must be fully unmasked")
    keep = rng.random(x0.shape) < sched.alpha_bar[t]
    return np.where(keep, x0, K)


def masked_backward_dist(xt: np.ndarray, x0hat_probs: np.ndarray, t: int,
                         sched: NoiseSchedule, K: int) -> np.ndarray:
    """Per-position categorical over the next token (last column = stay masked).

    Unmasked positions get a Dirac at the current token; masked positions
    unmask to k with probability (abar_{t-1}-abar_t) x0hat[k] / (1-abar_t) and
    remain masked with probability (1-abar_{t-1}) / (1-abar_t).
    """
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    if 1.0 - ab_t == 0.0:
        raise DegenerateStepError("alpha_bar_t = 1: nothing is masked yet")
    xt = np.asarray(xt)
    probs = np.asarray(x0hat_probs, dtype=float)
    out = np.zeros(xt.shape + (K + 1,))
    unmask_w = (ab_prev - ab_t) / (1.0 - ab_t)
    stay_w = (1.0 - ab_prev) / (1.0 - ab_t)
    masked = xt == K
    out[..., :K] = np.where(masked[..., None], unmask_w * probs, 0.0)
    out[..., K] = np.where(masked, stay_w, 0.0)
    # observed positions stay put with probability 1
    obs_onehot = onehot_view(np.where(masked, 0, xt), K)
    return np.where(masked[..., None], out, obs_onehot)


class MaskedProcess:
    """Masked diffusion over (K, L) sequences with an exact table denoiser."""

    kind = "masked"

    def __init__(self, data: DistributionTable, K: int, schedule: NoiseSchedule):
        seqs = np.asarray(data.support)
        if seqs.ndim != 2:
            raise ValueError("data support must be an (S, L) token array")
        if np.any(seqs < 0) or np.any(seqs >= K):
            raise ValueError("data sequences must use tokens 0..K-1")
        self.data = data
        self.K = int(K)
        self.L = seqs.shape[1]
        self.schedule = schedule
        self._sup_onehot = onehot_view(seqs, K)[:, :, :K]  # (S, L, K)
        self._radix = (K + 1) ** np.arange(self.L)

    # -- state bookkeeping --------------------------------------------------

    @property
    def mask(self) -> int:
        return self.K

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def n_codes(self) -> int:
        return (self.K + 1) ** self.L

    def encode(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states) @ self._radix

    def decode(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes)
        out = np.empty(codes.shape + (self.L,), dtype=np.int64)
        rem = codes.copy()
        for l in range(self.L):
            out[..., l] = rem % (self.K + 1)
            rem //= self.K + 1
        return out

    def fully_masked(self, n: int = 1) -> np.ndarray:
        return np.full((n, self.L), self.mask, dtype=np.int64)

    def enumerate_states(self) -> np.ndarray:
        """All (K+1)^L token arrays, in code order."""
        return self.decode(np.arange(self.n_codes))

    def enumerate_full_sequences(self) -> np.ndarray:
        """All K^L unmasked sequences."""
        grids = np.array(list(itertools.product(range(self.K), repeat=self.L)), dtype=np.int64)
        return grids[:, ::-1].copy()  # position 0 varies fastest, matching code order

    # -- exact denoiser ------------------------------------------------------

    def denoiser_marginals(self, states: np.ndarray) -> np.ndarray:
        """Per-position posterior over real tokens given the observed pattern.

        states (N, L) -> (N, L, K).  Unmasked positions come out as a Dirac at
        the observed token; inconsistent observations raise ZeroSupportError.
        """
        states = np.atleast_2d(states)
        sup = np.asarray(self.data.support)  # (S, L)
        compat = (states[:, None, :] == self.mask) | (states[:, None, :] == sup[None, :, :])
        resp = np.all(compat, axis=2) * self.data.probs[None, :]  # (N, S)
        totals = resp.sum(axis=1)
        if np.any(totals <= 0):
            raise ZeroSupportError("observed tokens have zero probability under the data table")
        resp = resp / totals[:, None]
        return np.einsum("ns,slk->nlk", resp, self._sup_onehot)

    def exact_denoiser(self, xt: np.ndarray) -> np.ndarray:
        """Single-state convenience wrapper: (L,) -> (L, K)."""
        return self.denoiser_marginals(np.atleast_2d(xt))[0]

    # -- kernels ---------------------------------------------------------------

    def backward_position_dists(self, t: int, states: np.ndarray) -> np.ndarray:
        """(N, L, K+1) next-token distribution per position (last = stay masked)."""
        states = np.atleast_2d(states)
        probs = self.denoiser_marginals(states)
        return masked_backward_dist(states, probs, t, self.schedule, self.K)

    def step_sample(self, t: int, states: np.ndarray, rng: np.random.Generator,
                    M: int = 1) -> np.ndarray:
        """M pretrained backward draws per state: (N, L) -> (N, M, L)."""
        dists = self.backward_position_dists(t, states)       # (N, L, K+1)
        cdf = np.cumsum(dists, axis=-1)
        u = rng.random((len(states), M, self.L))
        nxt = np.argmax(u[..., None] < cdf[:, None, :, :], axis=-1)
        return nxt

    def step_logprob(self, t: int, prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
        """Log probability of candidates (N, M, L) under the pretrained kernel."""
        dists = self.backward_position_dists(t, prev)
        p = np.take_along_axis(dists[:, None, :, :], nxt[..., None], axis=-1)[..., 0]
        with np.errstate(divide="ignore"):
            return np.sum(np.log(p), axis=-1)

    def init_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.fully_masked(n)

    def init_is_stochastic(self) -> bool:
        return False

    def forward_sample(self, x0: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        return masked_forward_sample(x0, t, self.schedule, rng, self.K)

    def rollout(self, n: int, rng: np.random.Generator,
                keep_path: bool = False) -> np.ndarray:
        """Unguided backward sampling; (n, L) finals or (T+1, n, L) full paths."""
        x = self.init_sample(n, rng)
        if keep_path:
            path = np.empty((self.T + 1, n, self.L), dtype=np.int64)
            path[self.T] = x
        for t in range(self.T, 0, -1):
            x = self.step_sample(t, x, rng, M=1)[:, 0, :]
            if keep_path:
                path[t - 1] = x
        return path if keep_path else x

    # -- generator (CTMC rates) ----------------------------------------------

    def generator_rates(self, t: int, xt: np.ndarray) -> tuple[np.ndarray, float]:
        """Rate table over single-token changes at step t.

        Returns (rates (L, K), diagonal) where rates[l, k] is the rate of
        unmasking position l to token k; rows for observed positions are zero
        and the diagonal entry is minus the total off-diagonal rate, so the
        full generator row sums to zero.  rates * dt reproduces the one-step
        unmasking probability of the backward kernel.
        """
        xt = np.asarray(xt)
        ab_t = self.schedule.alpha_bar[t]
        ab_prev = self.schedule.alpha_bar[t - 1]
        if 1.0 - ab_t == 0.0:
            raise DegenerateStepError("alpha_bar_t = 1: generator undefined")
        probs = self.exact_denoiser(xt)
        unmask_w = (ab_prev - ab_t) / (1.0 - ab_t) / self.schedule.dt
        rates = np.where((xt == self.mask)[:, None], unmask_w * probs, 0.0)
        return rates, -float(rates.sum())

    # -- exact laws ------------------------------------------------------------

    def _successor_dist(self, t: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Enumerate the factorized backward kernel from a single state.

        Returns (states (S', L), probs (S',)); exponential in the number of
        masked positions, intended for desk-scale enumeration only.
        """
        dists = self.backward_position_dists(t, x[None, :])[0]  # (L, K+1)
        masked = np.where(x == self.mask)[0]
        if len(masked) == 0:
            return x[None, :].copy(), np.ones(1)
        outcome_sets = []
        for l in masked:
            nz = np.where(dists[l] > 0)[0]
            outcome_sets.append([(k, dists[l, k]) for k in nz])
        states, probs = [], []
        for combo in itertools.product(*outcome_sets):
            nxt = x.copy()
            p = 1.0
            for l, (k, pk) in zip(masked, combo):
                nxt[l] = k
                p *= pk
            states.append(nxt)
            probs.append(p)
        return np.array(states), np.array(probs)

    def conditional_terminal_law(self, t: int, x: np.ndarray) -> DistributionTable:
        """Exact law of x_0 under the pretrained process started at (t, x)."""
        dist = {int(self.encode(np.asarray(x))): 1.0}
        for step in range(t, 0, -1):
            nxt: dict[int, float] = {}
            for code, mass in dist.items():
                succ, p = self._successor_dist(step, self.decode(np.array(code)))
                codes = self.encode(succ)
                for c, pi in zip(codes, p):
                    nxt[int(c)] = nxt.get(int(c), 0.0) + mass * pi
            dist = nxt
        codes = np.array(sorted(dist))
        probs = np.array([dist[c] for c in codes])
        probs = probs / probs.sum()
        return DistributionTable(support=self.decode(codes), probs=probs)

    def induced_law(self) -> DistributionTable:
        """Exact terminal law of full backward sampling from the masked state."""
        return self.conditional_terminal_law(self.T, self.fully_masked(1)[0])
