"""Tabular policy distillation: forward KL (value-weighted MLE), inverse KL,
and path-consistency objectives, with teacher/student/forward-recycled roll-ins.

Students are explicit per-(t, state) categorical rows over the pretrained
kernel's successor support, so every objective here has an enumerable exact
form on desk-scale instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import ZeroSupportError
from .processes import DistributionTable, MaskedProcess, string_from_tokens
from .samplers import GuidanceConfig, _select_rows, _values_flat, resolve_kernel

SMOOTHING = 1e-9


@dataclass
class Row:
    succ_codes: np.ndarray      # sorted successor codes
    logits: np.ndarray          # student log-probabilities (unnormalized)
    pre_logp: np.ndarray        # pretrained log-probabilities

    def probs(self) -> np.ndarray:
        return np.exp(self.logits - logsumexp(self.logits))


class TabularPolicy:
    """Explicit per-(t, state) transition rows for a masked process."""

    def __init__(self, model: MaskedProcess, rows: dict):
        self.model = model
        self.rows = rows                      # (t, code) -> Row
        self.updated_cells: set = set()

    @classmethod
    def pretrained_init(cls, model: MaskedProcess) -> "TabularPolicy":
        rows = {}
        states = model.enumerate_states()
        for t in range(1, model.T + 1):
            for code, x in enumerate(states):
                try:
                    succ, probs = model._successor_dist(t, x)
                except ZeroSupportError:
                    continue
                codes = model.encode(succ)
                order = np.argsort(codes)
                logp = np.log(probs[order])
                rows[(t, int(code))] = Row(succ_codes=codes[order],
                                           logits=logp.copy(), pre_logp=logp)
        return cls(model, rows)

    def copy(self) -> "TabularPolicy":
        rows = {k: Row(r.succ_codes.copy(), r.logits.copy(), r.pre_logp.copy())
                for k, r in self.rows.items()}
        out = TabularPolicy(self.model, rows)
        out.updated_cells = set(self.updated_cells)
        return out

    def row_probs(self, t: int, code: int) -> tuple[np.ndarray, np.ndarray]:
        row = self.rows[(t, int(code))]
        return row.succ_codes, row.probs()

    # -- sampling -------------------------------------------------------------

    def step(self, t: int, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        codes = self.model.encode(np.atleast_2d(states))
        out = np.empty_like(codes)
        for c in np.unique(codes):
            row = self.rows[(t, int(c))]
            sel = np.where(codes == c)[0]
            idx = rng.choice(len(row.succ_codes), size=len(sel), p=row.probs())
            out[sel] = row.succ_codes[idx]
        return self.model.decode(out)

    def rollout(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """(T+1, n, L) trajectories under the student policy."""
        model = self.model
        path = np.empty((model.T + 1, n, model.L), dtype=np.int64)
        path[model.T] = model.init_sample(n, rng)
        for t in range(model.T, 0, -1):
            path[t - 1] = self.step(t, path[t], rng)
        return path

    def as_kernel(self):
        """Use the student as a proposal for the particle samplers."""
        from .samplers import TransitionKernel

        def sampler(states, t, rng, M):
            n = len(states)
            reps = np.repeat(np.atleast_2d(states), M, axis=0)
            flat = self.step(t, reps, rng)
            return flat.reshape(n, M, self.model.L)

        def logprob(nxt, prev, t):
            codes = self.model.encode(np.atleast_2d(prev))
            ncodes = nxt @ (self.model.K + 1) ** np.arange(self.model.L)
            out = np.full(ncodes.shape, -np.inf)
            for i, c in enumerate(codes):
                row = self.rows[(t, int(c))]
                pos = np.searchsorted(row.succ_codes, ncodes[i])
                pos_c = np.clip(pos, 0, len(row.succ_codes) - 1)
                hit = row.succ_codes[pos_c] == ncodes[i]
                logp = row.logits - logsumexp(row.logits)
                out[i, hit] = logp[pos_c[hit]]
            return out

        return TransitionKernel(sampler=sampler, logprob=logprob, kind="student")

    # -- exact laws ------------------------------------------------------------

    def induced_law(self) -> DistributionTable:
        model = self.model
        dist = {int(model.encode(model.fully_masked(1)[0])): 1.0}
        for t in range(model.T, 0, -1):
            nxt: dict[int, float] = {}
            for code, mass in dist.items():
                row = self.rows[(t, code)]
                for c, p in zip(row.succ_codes, row.probs()):
                    nxt[int(c)] = nxt.get(int(c), 0.0) + mass * p
            dist = nxt
        codes = np.array(sorted(dist))
        probs = np.array([dist[c] for c in codes])
        return DistributionTable(support=model.decode(codes), probs=probs / probs.sum())

    def write_text(self, path) -> None:
        K = self.model.K
        with open(path, "w") as fh:
            fh.write("t\tstate\tnext\tprob\n")
            for (t, code), row in sorted(self.rows.items()):
                s = string_from_tokens(self.model.decode(np.array(code)), K)
                for c, p in zip(row.succ_codes, row.probs()):
                    ns = string_from_tokens(self.model.decode(np.array(c)), K)
                    fh.write(f"{t}\t{s}\t{ns}\t{p:.12g}\n")


def oracle_policy(model: MaskedProcess, values, alpha: float) -> TabularPolicy:
    """The exact soft-optimal policy: pretrained rows tilted by exp(v/alpha)."""
    student = TabularPolicy.pretrained_init(model)
    for (t, code), row in student.rows.items():
        tilt = values.at_codes(t - 1, row.succ_codes) / alpha
        row.logits = row.pre_logp + tilt
    student.updated_cells = set(student.rows)
    return student


# ---------------------------------------------------------------------------
# Teachers and roll-in streams
# ---------------------------------------------------------------------------


class GuidedTeacher:
    """A guided per-step transition sampler usable as a distillation teacher."""

    def __init__(self, model: MaskedProcess, step_fn: Callable):
        self.model = model
        self._step_fn = step_fn

    def step(self, t: int, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self._step_fn(t, np.atleast_2d(states), rng)

    def rollout(self, n: int, rng: np.random.Generator) -> np.ndarray:
        model = self.model
        path = np.empty((model.T + 1, n, model.L), dtype=np.int64)
        path[model.T] = model.init_sample(n, rng)
        for t in range(model.T, 0, -1):
            path[t - 1] = self.step(t, path[t], rng)
        return path


def svdd_teacher(model: MaskedProcess, values, cfg: GuidanceConfig) -> GuidedTeacher:
    kernel = resolve_kernel(model, values, cfg)

    def step_fn(t, states, rng):
        cand = kernel.sampler(states, t, rng, cfg.duplication)
        v = _values_flat(values, t - 1, cand)
        if cfg.alpha == 0:
            sel = np.argmax(v, axis=1)
        else:
            log_w = v / cfg.alpha
            if kernel.kind != "pretrained":
                log_w = log_w + model.step_logprob(t, states, cand) \
                    - kernel.logprob(cand, states, t)
            sel = _select_rows(log_w, rng, argmax=False)
        return cand[np.arange(len(states)), sel]

    return GuidedTeacher(model, step_fn)


def pretrained_teacher(model: MaskedProcess) -> GuidedTeacher:
    return GuidedTeacher(model, lambda t, states, rng:
                         model.step_sample(t, states, rng, 1)[:, 0])


@dataclass
class RollinSpec:
    kind: str = "teacher"                     # teacher | student | forward_recycle
    mix: float = 1.0                          # teacher share when mixing with student
    dataset: np.ndarray | None = None         # clean states for forward_recycle

    def __post_init__(self):
        if self.kind not in ("teacher", "student", "forward_recycle"):
            raise ValueError(f"unknown roll-in kind {self.kind!r}")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError("mix must lie in [0, 1]")
        if self.kind == "forward_recycle" and (self.dataset is None or len(self.dataset) == 0):
            raise ValueError("forward_recycle needs a non-empty dataset")


def make_rollin(spec: RollinSpec, teacher, student, model: MaskedProcess,
                n: int, rng: np.random.Generator):
    """Yield (t, states) batches for t = T..1 under the chosen roll-in law."""
    if spec.kind == "forward_recycle":
        data = np.asarray(spec.dataset)
        for t in range(model.T, 0, -1):
            x0 = data[rng.choice(len(data), size=n)]
            yield t, model.forward_sample(x0, t, rng)
        return
    # mix is the teacher share of the stream; a bare kind="student" spec
    # (mix left at its default 1.0) means the pure student stream.
    share = spec.mix
    if spec.kind == "student" and spec.mix == 1.0:
        share = 0.0
    elif spec.kind == "teacher":
        share = spec.mix if spec.mix < 1.0 else 1.0
    n_teacher = int(round(share * n))
    paths = []
    if n_teacher > 0:
        paths.append(teacher.rollout(n_teacher, rng))
    if n - n_teacher > 0:
        paths.append(student.rollout(n - n_teacher, rng))
    full = np.concatenate(paths, axis=1)
    for t in range(model.T, 0, -1):
        yield t, full[t]


# ---------------------------------------------------------------------------
# Forward KL (value-weighted MLE): tabular closed form
# ---------------------------------------------------------------------------


def distill_kl(teacher, student: TabularPolicy, rollin: RollinSpec,
               n_per_epoch: int, rng: np.random.Generator,
               epochs: int = 1) -> TabularPolicy:
    """Fit student rows to empirical teacher transition frequencies.

    For every roll-in state, one teacher transition is sampled; the per-cell
    categorical MLE (counts + 1e-9 smoothing over the row support) is the
    exact forward-KL minimizer.  Cells never visited keep their pretrained
    initialization.
    """
    model = student.model
    counts: dict = {}
    for _ in range(epochs):
        for t, states in make_rollin(rollin, teacher, student, model, n_per_epoch, rng):
            nxt = teacher.step(t, states, rng)
            codes = model.encode(states)
            ncodes = model.encode(nxt)
            for c in np.unique(codes):
                row = student.rows[(t, int(c))]
                sel = ncodes[codes == c]
                pos = np.searchsorted(row.succ_codes, sel)
                key = (t, int(c))
                if key not in counts:
                    counts[key] = np.zeros(len(row.succ_codes))
                np.add.at(counts[key], pos, 1.0)
        for key, cnt in counts.items():
            row = student.rows[key]
            row.logits = np.log(cnt + SMOOTHING) - np.log(cnt.sum() + SMOOTHING * len(cnt))
            student.updated_cells.add(key)
    return student


# ---------------------------------------------------------------------------
# Path consistency and inverse KL
# ---------------------------------------------------------------------------


def _row_targets(row: Row, values, alpha: float, t: int, code: int) -> np.ndarray:
    """c_k = log p_pre + v_{t-1}(succ)/alpha - v_t(x)/alpha per successor."""
    v_next = np.asarray(values.at_codes(t - 1, row.succ_codes), dtype=float)
    v_cur = float(values.at_codes(t, np.array([code]))[0])
    return row.pre_logp + v_next / alpha - v_cur / alpha


def pcl_loss(student: TabularPolicy, values, model: MaskedProcess,
             transitions, alpha: float) -> float:
    """Mean squared path-consistency residual over (t, x_t, x_{t-1}) triples.

    Residual: log p_theta - log p_pre - v_{t-1}(x_{t-1})/a + v_t(x_t)/a; zero
    exactly when the student matches the soft-optimal policy on the batch.
    """
    sq = []
    for t, parent, child in transitions:
        code = int(model.encode(np.asarray(parent)))
        ncode = int(model.encode(np.asarray(child)))
        row = student.rows[(t, code)]
        k = int(np.searchsorted(row.succ_codes, ncode))
        if k >= len(row.succ_codes) or row.succ_codes[k] != ncode:
            raise ValueError("transition outside the pretrained support")
        log_theta = row.logits - logsumexp(row.logits)
        c = _row_targets(row, values, alpha, t, code)
        sq.append((log_theta[k] - c[k]) ** 2)
    return float(np.mean(sq))


def pcl_fit(student: TabularPolicy, values, model: MaskedProcess, alpha: float,
            lr: float = 0.5, max_steps: int = 10_000,
            grad_tol: float = 1e-8) -> TabularPolicy:
    """Full-batch gradient descent on the squared PCL residual over all cells."""
    rows = list(student.rows.items())
    targets = [_row_targets(row, values, alpha, t, code) for (t, code), row in rows]
    n_pairs = sum(len(c) for c in targets)
    for _ in range(max_steps):
        sup_norm = 0.0
        for ((key, row), c) in zip(rows, targets):
            log_theta = row.logits - logsumexp(row.logits)
            res = log_theta - c
            p = np.exp(log_theta)
            grad = 2.0 * (res - p * res.sum()) / n_pairs
            row.logits = row.logits - lr * n_pairs / len(c) * grad
            sup_norm = max(sup_norm, float(np.abs(grad).max()))
        if sup_norm < grad_tol:
            break
    student.updated_cells.update(student.rows)
    return student


def distill_inverse_kl_step(student: TabularPolicy, values, model: MaskedProcess,
                            rollin_cells, alpha: float, lr: float) -> TabularPolicy:
    """One exact gradient step on KL(p_theta || p_star) at the given cells.

    rollin_cells is an iterable of (t, code) with multiplicity; the per-cell
    gradient is enumerated over the row support.
    """
    grads: dict = {}
    for t, code in rollin_cells:
        key = (t, int(code))
        row = student.rows[key]
        c = _row_targets(row, values, alpha, t, code)
        log_theta = row.logits - logsumexp(row.logits)
        p = np.exp(log_theta)
        adv = log_theta - c
        g = p * (adv - p @ adv)
        grads[key] = grads.get(key, 0.0) + g
    for key, g in grads.items():
        student.rows[key].logits = student.rows[key].logits - lr * g
        student.updated_cells.add(key)
    return student


def inverse_kl_grad_norm(student: TabularPolicy, values, alpha: float) -> float:
    """Sup norm of the inverse-KL gradient over all cells (stationarity check)."""
    worst = 0.0
    for (t, code), row in student.rows.items():
        c = _row_targets(row, values, alpha, t, code)
        log_theta = row.logits - logsumexp(row.logits)
        p = np.exp(log_theta)
        adv = log_theta - c
        worst = max(worst, float(np.abs(p * (adv - p @ adv)).max()))
    return worst
