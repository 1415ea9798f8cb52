"""Tree search over denoising steps: UCT with value-based leaf evaluation.

At each denoising step a search tree is grown from the current state; node
expansion samples `width` children from the pretrained kernel, leaves are
scored either by the supplied value model (lookahead_k = 0) or by rolling the
pretrained process k further steps and taking the posterior-mean value there.
The visit-count argmax child is committed and the walk advances one step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .samplers import GuidanceConfig, SamplerReport, _finish
from .values import posterior_mean_value


@dataclass
class SearchConfig:
    width: int = 4
    depth_limit: int = 1
    simulations: int = 16
    exploration_c: float = 1.0
    lookahead_k: int = 0

    def __post_init__(self):
        if self.width < 1 or self.simulations < 1 or self.depth_limit < 1:
            raise ValueError("width, simulations, and depth_limit must be >= 1")
        if self.lookahead_k < 0:
            raise ValueError("lookahead_k must be >= 0")


def leaf_rollout_value(model, r, x, t: int, k: int, rng: np.random.Generator) -> float:
    """Roll the pretrained process k steps from (t, x), then posterior-mean value.

    k = 0 scores the state in place; k = t rolls all the way to step 0, where
    the posterior-mean value is the reward of an exactly sampled x_0.
    """
    if k > t:
        raise ValueError(f"lookahead k={k} exceeds remaining steps t={t}")
    state = np.asarray(x)
    for s in range(t, t - k, -1):
        state = model.step_sample(s, state[None, ...], rng, 1)[0, 0]
    return posterior_mean_value(model, r, t - k, state)


class _Node:
    __slots__ = ("state", "t", "children", "visits", "total")

    def __init__(self, state, t):
        self.state = state
        self.t = t
        self.children: list[_Node] | None = None
        self.visits = 0
        self.total = 0.0

    @property
    def mean(self) -> float:
        return self.total / self.visits if self.visits else 0.0


def _expand(model, node: _Node, width: int, rng) -> None:
    children = model.step_sample(node.t, node.state[None, ...], rng, width)[0]
    node.children = [_Node(children[j], node.t - 1) for j in range(width)]


def _uct_pick(node: _Node, c: float) -> _Node:
    for child in node.children:          # unvisited children first, lowest index
        if child.visits == 0:
            return child
    log_n = np.log(node.visits)
    best, best_score = node.children[0], -np.inf
    for child in node.children:
        score = child.mean + c * np.sqrt(log_n / child.visits)
        if score > best_score:
            best, best_score = child, score
    return best


def _evaluate(model, values, r, node: _Node, k: int, rng) -> float:
    if node.t == 0:
        return float(r.batch(node.state[None, ...])[0])
    k_eff = min(k, node.t)
    if k_eff == 0:
        return values.at_one(node.t, node.state)
    return leaf_rollout_value(model, r, node.state, node.t, k_eff, rng)


def _commit_child(root: _Node) -> _Node:
    best = root.children[0]
    for child in root.children[1:]:
        if (child.visits, child.mean) > (best.visits, best.mean):
            best = child
    return best


def mcts_denoise(model, values, r, search: SearchConfig, cfg: GuidanceConfig,
                 rng: np.random.Generator | None = None) -> SamplerReport:
    """Run UCT at every denoising step and commit the most-visited child.

    Ties in visit counts break on mean backed-up value, then lowest index, so
    a one-shot budget (simulations = width, depth 1, exploration_c = 0)
    reproduces beam search over the same child set.  exploration_c = 0 with a
    larger budget degenerates to greedy value selection.
    """
    t0 = time.perf_counter()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    finals = []
    visit_totals = []
    for _ in range(cfg.n_particles):
        state = model.init_sample(1, rng)[0]
        for t in range(model.T, 0, -1):
            root = _Node(state, t)
            for _sim in range(search.simulations):
                path = [root]
                node = root
                value = None
                while True:
                    if node.t == 0 or len(path) - 1 >= search.depth_limit:
                        value = _evaluate(model, values, r, node, search.lookahead_k, rng)
                        break
                    if node.children is None:
                        _expand(model, node, search.width, rng)
                    child = _uct_pick(node, search.exploration_c)
                    path.append(child)
                    node = child
                    if node.visits == 0:
                        value = _evaluate(model, values, r, node, search.lookahead_k, rng)
                        break
                for n in path:
                    n.visits += 1
                    n.total += value
            visit_totals.append(sum(ch.visits for ch in root.children))
            state = _commit_child(root).state
        finals.append(state)
    finals = np.asarray(finals)
    trace = [float(cfg.n_particles)] * (model.T + 1)
    report = _finish(t0, finals, np.zeros(len(finals)), trace, [], r,
                     extras={"visit_totals": visit_totals,
                             "simulations": search.simulations})
    return report
