"""Declarative experiment configs: YAML blocks for model, reward, value,
sampler, sweep, distill, and refine.

The exact grammar is documented in the README.  Validation errors carry the
offending field path and a best-effort line number into the source file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import values as values_mod
from .oracles import brute_force_target, gaussian_grid_table
from .processes import (DistributionTable, GaussianMixtureData, GaussianProcess,
                        MaskedProcess, tokens_from_string)
from .rewards import (CompositeReward, FrobeniusReward, LinearReward,
                      QuadraticReward, TableReward)
from .schedules import make_schedule
from .so3 import So3Process, so3_exp

ALGORITHMS = ("pretrained", "best_of_n", "smc", "svdd", "nested_smc", "beam",
              "cg_continuous", "cg_so3", "discrete_exact", "discrete_taylor",
              "mcts", "walk_jump")
WEIGHTED_ALGOS = ("smc", "nested_smc", "cg_continuous", "discrete_exact",
                  "discrete_taylor", "cg_so3")
VALUE_KINDS = ("exact", "posterior_mean", "mc_regression", "fqi",
               "closed_form", "constant")


class ConfigError(ValueError):
    def __init__(self, path: str, fieldname: str, message: str, line: int | None = None):
        self.fieldname = fieldname
        loc = f"{path}:{line}" if line else str(path)
        super().__init__(f"{loc}: {fieldname}: {message}")


def _find_line(text: str, key: str) -> int | None:
    """Best-effort line anchor: first occurrence of the key at any level."""
    leaf = key.split(".")[-1]
    for i, raw in enumerate(text.splitlines(), start=1):
        if re.match(rf"\s*{re.escape(leaf)}\s*:", raw):
            return i
    return None


@dataclass
class ExperimentConfig:
    raw: dict
    path: str = "<config>"
    text: str = ""
    seed: int = 0
    model: dict = field(default_factory=dict)
    reward: dict = field(default_factory=dict)
    value: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    sweep: dict | None = None
    distill: dict | None = None
    refine: dict | None = None
    tag: str = "experiment"

    def fail(self, fieldname: str, message: str) -> "ConfigError":
        return ConfigError(self.path, fieldname, message, _find_line(self.text, fieldname))


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "<root>", "config must be a mapping")
    cfg = ExperimentConfig(
        raw=raw, path=str(path), text=text,
        seed=int(raw.get("seed", 0)),
        model=raw.get("model") or {},
        reward=raw.get("reward") or {},
        value=raw.get("value") or {},
        sampler=raw.get("sampler") or {},
        sweep=raw.get("sweep"),
        distill=raw.get("distill"),
        refine=raw.get("refine"),
        tag=str((raw.get("output") or {}).get("tag", "experiment")),
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    for block, name in ((cfg.model, "model"), (cfg.reward, "reward"),
                        (cfg.sampler, "sampler")):
        if not block:
            raise cfg.fail(name, "required block is missing")
    kind = cfg.model.get("kind")
    if kind not in ("masked", "gaussian", "so3"):
        raise cfg.fail("model.kind", f"must be masked|gaussian|so3, got {kind!r}")
    sched = cfg.model.get("schedule") or {}
    if int(sched.get("T", 0)) < 1:
        raise cfg.fail("model.schedule.T", "step count T must be >= 1")
    if kind == "masked":
        if int(cfg.model.get("vocab_size", 0)) < 1:
            raise cfg.fail("model.vocab_size", "must be >= 1 for masked models")
        if not (cfg.model.get("data") or {}).get("sequences"):
            raise cfg.fail("model.data.sequences", "masked models need a data table")
    algo = cfg.sampler.get("algorithm")
    if algo not in ALGORITHMS:
        raise cfg.fail("sampler.algorithm", f"unknown algorithm {algo!r}")
    alpha = float(cfg.sampler.get("alpha", 1.0))
    if alpha < 0:
        raise cfg.fail("sampler.alpha", "must be >= 0")
    if alpha == 0 and algo in WEIGHTED_ALGOS:
        raise cfg.fail("sampler.alpha",
                       f"alpha = 0 is only meaningful for svdd/beam, not {algo!r}")
    if int(cfg.sampler.get("particles", 1)) < 1:
        raise cfg.fail("sampler.particles", "must be >= 1")
    if int(cfg.sampler.get("duplication", 1)) < 1:
        raise cfg.fail("sampler.duplication", "must be >= 1")
    vkind = cfg.value.get("kind", "exact")
    if vkind not in VALUE_KINDS:
        raise cfg.fail("value.kind", f"unknown value kind {vkind!r}")
    if cfg.sweep is not None:
        if not cfg.sweep.get("parameter"):
            raise cfg.fail("sweep.parameter", "sweep needs a parameter name")
        if cfg.sweep["parameter"] not in cfg.sampler:
            raise cfg.fail("sweep.parameter",
                           f"{cfg.sweep['parameter']!r} is not a sampler field")
        if not cfg.sweep.get("grid"):
            raise cfg.fail("sweep.grid", "sweep grid must be non-empty")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_model(cfg: ExperimentConfig):
    sched_blk = cfg.model["schedule"]
    sched = make_schedule(sched_blk.get("kind", "linear"), int(sched_blk["T"]))
    kind = cfg.model["kind"]
    if kind == "masked":
        K = int(cfg.model["vocab_size"])
        pairs = cfg.model["data"]["sequences"]
        seqs = np.array([tokens_from_string(s, K) for s in pairs])
        probs = np.array([float(p) for p in pairs.values()])
        if abs(probs.sum() - 1.0) > 1e-9:
            raise cfg.fail("model.data.sequences", "probabilities must sum to 1")
        table = DistributionTable(support=seqs, probs=probs / probs.sum())
        return MaskedProcess(table, K=K, schedule=sched)
    if kind == "gaussian":
        comps = (cfg.model.get("data") or {}).get("components")
        if not comps:
            raise cfg.fail("model.data.components", "gaussian models need mixture components")
        data = GaussianMixtureData(
            weights=[c["weight"] for c in comps],
            means=[c["mean"] for c in comps],
            variances=[c["var"] for c in comps],
        )
        return GaussianProcess(data, sched)
    axis = (cfg.model.get("data") or {}).get("rotation_axis_angle", [0.0, 0.0, 0.0])
    base_var = float((cfg.model.get("data") or {}).get("base_var", 0.25))
    rotation = so3_exp(np.eye(3), np.asarray(axis, dtype=float))
    return So3Process(rotation, sched, base_var=base_var)


def build_reward(cfg: ExperimentConfig, model):
    blk = cfg.reward
    kind = blk.get("kind")
    if kind == "table":
        if model.kind != "masked":
            raise cfg.fail("reward.kind", "table rewards need a masked model")
        return TableReward.from_entries(blk.get("entries") or {}, model.K, model.L,
                                        default=float(blk.get("default", 0.0)))
    if kind == "linear":
        return LinearReward(blk["coef"])
    if kind == "quadratic":
        return QuadraticReward(blk["center"], float(blk.get("weight", 1.0)))
    if kind == "frobenius":
        target = so3_exp(np.eye(3), np.asarray(blk.get("target_axis_angle",
                                                       [0.0, 0.0, 0.0]), dtype=float))
        return FrobeniusReward(target)
    if kind == "composite":
        sub = ExperimentConfig(raw=cfg.raw, path=cfg.path, text=cfg.text)
        parts = []
        for part in blk.get("parts", []):
            sub.reward = part
            parts.append((float(part.get("weight", 1.0)), build_reward(sub, model)))
        return CompositeReward(parts)
    raise cfg.fail("reward.kind", f"unknown reward kind {kind!r}")


def build_values(cfg: ExperimentConfig, model, reward, alpha: float,
                 rng: np.random.Generator):
    kind = cfg.value.get("kind", "exact")
    a = max(alpha, 1e-9) if alpha == 0 else alpha   # argmax samplers rank by v only
    if kind == "constant":
        return values_mod.ConstantValue(0.0)
    if kind == "posterior_mean":
        return values_mod.PosteriorMeanValue(model, reward)
    if model.kind == "masked":
        if kind == "exact":
            return values_mod.ExactDiscreteValues(model, reward, a)
        if kind == "mc_regression":
            return values_mod.mc_regression_fit(
                model, reward, a, int(cfg.value.get("rollouts", 10_000)), rng)
        if kind == "fqi":
            return values_mod.soft_q_fit(
                model, reward, a, int(cfg.value.get("rollouts", 10_000)),
                int(cfg.value.get("iterations", model.T)), rng)
        raise cfg.fail("value.kind", f"{kind!r} unavailable for masked models")
    if model.kind == "gaussian":
        if kind in ("exact", "closed_form"):
            if not isinstance(reward, LinearReward):
                raise cfg.fail("value.kind",
                               "closed-form gaussian values need a linear reward")
            return values_mod.GaussianLinearValue(model, reward.coef, a)
        raise cfg.fail("value.kind", f"{kind!r} unavailable for gaussian models")
    return values_mod.PosteriorMeanValue(model, reward)


def build_oracle(cfg: ExperimentConfig, model, reward, alpha: float):
    """Exact tilted target when the instance is enumerable, else None."""
    if alpha <= 0:
        return None
    if model.kind == "masked" and model.n_codes <= 200_000:
        return brute_force_target(model.induced_law(), reward, alpha)
    if model.kind == "gaussian" and model.dim == 1:
        span = 8.0
        grid = gaussian_grid_table(model.data, -span, span, cells=4096)
        return brute_force_target(grid, reward, alpha)
    return None
