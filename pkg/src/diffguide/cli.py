"""Config-driven experiment runner.

Subcommands: run, sweep, oracle, distill, refine.  Every command writes CSV
artifacts (plus plot-ready data) into --out-dir and renders matplotlib
figures alongside them.  Identical (config, seed) pairs produce byte-identical
CSV output; wall-clock timings only appear in the sweep table, which is the
one documented non-deterministic column.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import plots
from .config import (ConfigError, ExperimentConfig, build_model, build_oracle,
                     build_reward, build_values, load_config)
from .distill import (TabularPolicy, RollinSpec, distill_inverse_kl_step,
                      distill_kl, oracle_policy, pcl_fit, svdd_teacher)
from .oracles import brute_force_target, gaussian_grid_table, report_metrics
from .processes import string_from_tokens
from .refine import RefineConfig, hamming_constraint, iterative_refine
from .samplers import (GuidanceConfig, SamplerReport, beam_search, best_of_n,
                       classifier_guidance_continuous, classifier_guidance_so3,
                       discrete_guidance_exact, discrete_guidance_taylor,
                       nested_smc, pretrained_sampling, smc_guidance, svdd,
                       walk_jump)
from .search import SearchConfig, mcts_denoise

SUMMARY_FIELDS = ["tag", "algorithm", "seed", "alpha", "particles", "duplication",
                  "n_samples", "mean_reward", "max_reward", "std_reward",
                  "diversity", "duplicate_fraction", "tv_to_oracle",
                  "kl_to_oracle", "min_ess", "resample_events", "log_z"]
SWEEP_FIELDS = ["parameter", "value", "mean_reward", "se_reward", "tv_to_oracle",
                "min_ess", "wall_clock"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _guidance_config(cfg: ExperimentConfig, seed: int) -> GuidanceConfig:
    blk = cfg.sampler
    return GuidanceConfig(
        alpha=float(blk.get("alpha", 1.0)),
        n_particles=int(blk.get("particles", 1)),
        duplication=int(blk.get("duplication", 1)),
        ess_threshold=float(blk.get("ess_threshold", 0.5)),
        proposal=blk.get("proposal", "pretrained"),
        seed=seed,
        resampling=blk.get("resampling", "multinomial"),
    )


def run_sampler(cfg: ExperimentConfig, model, reward, values,
                seed: int) -> SamplerReport:
    algo = cfg.sampler["algorithm"]
    g = _guidance_config(cfg, seed)
    T = model.T
    if algo == "pretrained":
        return pretrained_sampling(model, g, reward)
    if algo == "best_of_n":
        rng = np.random.default_rng(seed)
        best, rewards = best_of_n(model, reward, g.n_particles, rng)
        return SamplerReport(final_states=best[None, ...],
                             final_log_weights=np.zeros(1),
                             ess_trace=np.full(T + 1, 1.0), resample_steps=[],
                             rewards=rewards, mean_reward=float(rewards.mean()),
                             max_reward=float(rewards.max()),
                             extras={"best_reward": float(rewards.max())})
    if algo == "smc":
        return smc_guidance(model, values, g, reward=reward)
    if algo == "svdd":
        return svdd(model, values, g, reward=reward)
    if algo == "nested_smc":
        return nested_smc(model, values, g, reward=reward)
    if algo == "beam":
        return beam_search(model, values, g, reward=reward)
    if algo == "cg_continuous":
        return classifier_guidance_continuous(model, values, g, reward=reward)
    if algo == "cg_so3":
        return classifier_guidance_so3(model, reward, g)
    if algo == "discrete_exact":
        return discrete_guidance_exact(model, values, g, reward=reward)
    if algo == "discrete_taylor":
        return discrete_guidance_taylor(model, values, g, reward=reward)
    if algo == "mcts":
        blk = cfg.sampler
        sc = SearchConfig(width=int(blk.get("width", blk.get("duplication", 4))),
                          depth_limit=int(blk.get("depth_limit", 1)),
                          simulations=int(blk.get("simulations", 16)),
                          exploration_c=float(blk.get("exploration_c", 0.5)),
                          lookahead_k=int(blk.get("lookahead_k", 0)))
        return mcts_denoise(model, values, reward, sc, g)
    if algo == "walk_jump":
        blk = cfg.sampler
        sigma2 = float(blk.get("sigma", 0.25)) ** 2
        smoothed = model.data.smoothed(sigma2)
        score = lambda y: smoothed.score(y[None, :])[0]
        rng = np.random.default_rng(seed)
        steps = int(blk.get("steps", 100_000))
        chain = walk_jump(score, reward, g.alpha, float(blk.get("beta", 0.01)),
                          steps, np.zeros(model.dim), rng)
        burn, thin = steps // 10, int(blk.get("thin", 10))
        kept = chain[burn::thin]
        rewards = reward.batch(kept)
        return SamplerReport(final_states=kept, final_log_weights=np.zeros(len(kept)),
                             ess_trace=np.full(T + 1, float(len(kept))),
                             resample_steps=[], rewards=rewards,
                             mean_reward=float(rewards.mean()),
                             max_reward=float(rewards.max()),
                             extras={"chain_steps": steps})
    raise ConfigError(cfg.path, "sampler.algorithm", f"unhandled algorithm {algo!r}")


def _oracle_for(cfg: ExperimentConfig, model, reward, alpha: float):
    if cfg.sampler["algorithm"] == "walk_jump":
        sigma2 = float(cfg.sampler.get("sigma", 0.25)) ** 2
        grid = gaussian_grid_table(model.data.smoothed(sigma2), -8.0, 8.0, cells=4096)
        return brute_force_target(grid, reward, alpha)
    return build_oracle(cfg, model, reward, alpha)


def _summary_row(cfg: ExperimentConfig, seed: int, report: SamplerReport,
                 metrics) -> dict:
    return {
        "tag": cfg.tag,
        "algorithm": cfg.sampler["algorithm"],
        "seed": seed,
        "alpha": float(cfg.sampler.get("alpha", 1.0)),
        "particles": int(cfg.sampler.get("particles", 1)),
        "duplication": int(cfg.sampler.get("duplication", 1)),
        "n_samples": metrics.n_samples,
        "mean_reward": metrics.mean_reward,
        "max_reward": metrics.max_reward,
        "std_reward": metrics.std_reward,
        "diversity": metrics.diversity,
        "duplicate_fraction": metrics.duplicate_fraction,
        "tv_to_oracle": metrics.tv_to_oracle,
        "kl_to_oracle": metrics.kl_to_oracle,
        "min_ess": float(np.min(report.ess_trace)),
        "resample_events": len(report.resample_steps),
        "log_z": report.log_z,
    }


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row.get(f)) for f in fields])


def _execute(cfg: ExperimentConfig, seed: int):
    rng = np.random.default_rng(seed)
    model = build_model(cfg)
    reward = build_reward(cfg, model)
    alpha = float(cfg.sampler.get("alpha", 1.0))
    values = build_values(cfg, model, reward, alpha, rng)
    report = run_sampler(cfg, model, reward, values, seed)
    oracle = _oracle_for(cfg, model, reward, alpha) if alpha > 0 else None
    weights = report.normalized_weights()
    metrics = report_metrics(report.final_states, reward, oracle,
                             weights=weights, seed=seed)
    return model, report, metrics, oracle


def cmd_run(cfg: ExperimentConfig, out_dir: Path, seed: int, threads: int,
            figures: bool) -> int:
    model, report, metrics, _ = _execute(cfg, seed)
    summary = _summary_row(cfg, seed, report, metrics)
    _write_csv(out_dir / f"{cfg.tag}_summary.csv", SUMMARY_FIELDS, [summary])
    trace_rows = [{"step": i, "t": model.T - i, "ess": report.ess_trace[i]}
                  for i in range(len(report.ess_trace))]
    _write_csv(out_dir / f"{cfg.tag}_trace.csv", ["step", "t", "ess"], trace_rows)
    from .processes import serialize_states
    lines = serialize_states(report.final_states,
                             K=getattr(model, "K", None))
    (out_dir / f"{cfg.tag}_states.txt").write_text("\n".join(lines) + "\n")
    if figures:
        plots.ess_trace_figure(report.ess_trace, len(report.final_states),
                               out_dir / f"{cfg.tag}_ess.png")
        if report.rewards is not None:
            plots.reward_hist_figure(report.rewards, out_dir / f"{cfg.tag}_rewards.png")
    tv = "" if metrics.tv_to_oracle is None else f" tv_to_oracle={metrics.tv_to_oracle:.4f}"
    print(f"{cfg.tag}: mean_reward={metrics.mean_reward:.4f}{tv} "
          f"-> {out_dir / (cfg.tag + '_summary.csv')}")
    return 0


def cmd_sweep(cfg: ExperimentConfig, out_dir: Path, seed: int, threads: int,
              figures: bool) -> int:
    if cfg.sweep is None:
        raise cfg.fail("sweep", "config has no sweep block (or pass --parameter/--grid)")
    parameter = cfg.sweep["parameter"]
    grid = cfg.sweep["grid"]
    if parameter not in cfg.sampler:
        raise cfg.fail("sweep.parameter", f"{parameter!r} is not a sampler field")

    def one(point):
        sub = ExperimentConfig(raw=cfg.raw, path=cfg.path, text=cfg.text,
                               seed=cfg.seed, model=cfg.model, reward=cfg.reward,
                               value=cfg.value, sampler={**cfg.sampler,
                                                         parameter: point},
                               tag=cfg.tag)
        t0 = time.perf_counter()
        _, report, metrics, _ = _execute(sub, seed)
        elapsed = time.perf_counter() - t0
        n = max(metrics.n_samples, 2)
        return {
            "parameter": parameter,
            "value": point,
            "mean_reward": metrics.mean_reward,
            "se_reward": metrics.std_reward / np.sqrt(n - 1),
            "tv_to_oracle": metrics.tv_to_oracle,
            "min_ess": float(np.min(report.ess_trace)),
            "wall_clock": elapsed,
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, grid))
    else:
        rows = [one(p) for p in grid]
    _write_csv(out_dir / f"{cfg.tag}_sweep.csv", SWEEP_FIELDS, rows)
    with open(out_dir / f"{cfg.tag}_sweep_plot.dat", "w") as fh:
        for row in rows:
            fh.write(f"{_fmt(row['value'])} {_fmt(row['mean_reward'])}\n")
    if figures:
        plots.sweep_figure([r["value"] for r in rows],
                           [r["mean_reward"] for r in rows],
                           [r["se_reward"] for r in rows],
                           parameter, out_dir / f"{cfg.tag}_sweep.png")
    print(f"{cfg.tag}: swept {parameter} over {grid} -> "
          f"{out_dir / (cfg.tag + '_sweep.csv')}")
    return 0


def cmd_oracle(cfg: ExperimentConfig, out_dir: Path, seed: int, threads: int,
               figures: bool) -> int:
    model = build_model(cfg)
    reward = build_reward(cfg, model)
    alpha = float(cfg.sampler.get("alpha", 1.0))
    oracle = build_oracle(cfg, model, reward, alpha)
    if oracle is None:
        print("no enumerable oracle for this model", file=sys.stderr)
        return 1
    path = out_dir / f"{cfg.tag}_oracle.csv"
    K = model.K if model.kind == "masked" else None
    oracle.write_csv(path, K=K)
    if figures and model.kind == "masked":
        labels = [string_from_tokens(s, model.K) for s in oracle.table.support]
        plots.oracle_bar_figure(labels, oracle.table.probs,
                                out_dir / f"{cfg.tag}_oracle.png")
    print(f"{cfg.tag}: oracle table (logZ={oracle.log_z:.6g}) -> {path}")
    return 0


def cmd_distill(cfg: ExperimentConfig, out_dir: Path, seed: int, threads: int,
                figures: bool) -> int:
    if cfg.distill is None:
        raise cfg.fail("distill", "config has no distill block")
    blk = cfg.distill
    rng = np.random.default_rng(seed)
    model = build_model(cfg)
    if model.kind != "masked":
        raise cfg.fail("distill", "distillation is tabular: masked models only")
    reward = build_reward(cfg, model)
    alpha = float(cfg.sampler.get("alpha", 1.0))
    values = build_values(cfg, model, reward, alpha, rng)
    g = _guidance_config(cfg, seed)
    teacher = svdd_teacher(model, values, g)
    student = TabularPolicy.pretrained_init(model)
    objective = blk.get("objective", "forward_kl")
    n_samples = int(blk.get("samples", 10_000))
    if objective == "forward_kl":
        rollin = RollinSpec(kind=blk.get("rollin", "teacher"),
                            mix=float(blk.get("mix", 1.0)))
        student = distill_kl(teacher, student, rollin, n_samples, rng,
                             epochs=int(blk.get("epochs", 1)))
    elif objective == "pcl":
        student = pcl_fit(student, values, model, alpha,
                          lr=float(blk.get("lr", 0.5)),
                          max_steps=int(blk.get("max_steps", 10_000)))
    elif objective == "inverse_kl":
        cells = list(student.rows.keys())
        for _ in range(int(blk.get("steps", 500))):
            student = distill_inverse_kl_step(student, values, model, cells,
                                              alpha, lr=float(blk.get("lr", 0.5)))
    else:
        raise cfg.fail("distill.objective", f"unknown objective {objective!r}")
    student.write_text(out_dir / f"{cfg.tag}_student.tsv")
    law = student.induced_law()
    teacher_emp = None
    tpath = teacher.rollout(min(n_samples, 50_000), np.random.default_rng(seed + 1))
    from .processes import empirical_table
    teacher_emp = empirical_table(law.support, tpath[0])
    tv_teacher = 0.5 * float(np.abs(law.probs - teacher_emp.probs).sum())
    opt = oracle_policy(model, values, alpha)
    worst_row_tv = 0.0
    for key in student.rows:
        _, ps = opt.row_probs(*key)
        _, pt = student.row_probs(*key)
        worst_row_tv = max(worst_row_tv, 0.5 * float(np.abs(ps - pt).sum()))
    _write_csv(out_dir / f"{cfg.tag}_distill_summary.csv",
               ["tag", "objective", "tv_student_vs_teacher", "worst_row_tv_vs_oracle"],
               [{"tag": cfg.tag, "objective": objective,
                 "tv_student_vs_teacher": tv_teacher,
                 "worst_row_tv_vs_oracle": worst_row_tv}])
    if figures:
        labels = [string_from_tokens(s, model.K) for s in law.support]
        plots.distill_figure(labels, teacher_emp.probs, law.probs,
                             out_dir / f"{cfg.tag}_distill.png")
    print(f"{cfg.tag}: distilled ({objective}); TV(student, teacher)={tv_teacher:.4f}")
    return 0


def cmd_refine(cfg: ExperimentConfig, out_dir: Path, seed: int, threads: int,
               figures: bool) -> int:
    if cfg.refine is None:
        raise cfg.fail("refine", "config has no refine block")
    blk = cfg.refine
    rng = np.random.default_rng(seed)
    model = build_model(cfg)
    if model.kind != "masked":
        raise cfg.fail("refine", "the refinement harness supports masked models")
    reward = build_reward(cfg, model)
    alpha = float(cfg.sampler.get("alpha", 1.0))
    values = build_values(cfg, model, reward, alpha, rng)
    g = _guidance_config(cfg, seed)
    teacher = svdd_teacher(model, values, g)

    def inner(x_noisy, t_start, inner_rng):
        x = x_noisy[None, :]
        for t in range(t_start, 0, -1):
            x = teacher.step(t, x, inner_rng)
        return x[0]

    from .processes import tokens_from_string
    seed_seq = tokens_from_string(blk["seed_sequence"], model.K)
    constraint = None
    if blk.get("max_edit_distance") is not None:
        constraint = hamming_constraint(seed_seq, int(blk["max_edit_distance"]))
    rcfg = RefineConfig(k=int(blk.get("k", model.T // 2)),
                        S=int(blk.get("iterations", 10)),
                        constraint=constraint, seed=seed)
    result = iterative_refine(model, inner, reward, seed_seq, rcfg, rng)
    result.write_csv(out_dir / f"{cfg.tag}_refine.csv")
    if figures:
        plots.refine_figure([rec["iteration"] for rec in result.records],
                            result.rewards(), out_dir / f"{cfg.tag}_refine.png")
    print(f"{cfg.tag}: refined {rcfg.S} iterations, final reward "
          f"{result.records[-1]['reward']:.4f}")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "oracle": cmd_oracle,
            "distill": cmd_distill, "refine": cmd_refine}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="diffguide",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="path to a YAML experiment config")
        p.add_argument("--out-dir", default="out", help="artifact directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for sweep points")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
        if name == "sweep":
            p.add_argument("--parameter", default=None,
                           help="sampler field to sweep (overrides the config)")
            p.add_argument("--grid", default=None, nargs="+",
                           help="grid values (overrides the config)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "sweep" and getattr(args, "parameter", None):
            grid = [float(g) if "." in g else int(g) for g in (args.grid or [])]
            if not grid:
                raise ConfigError(args.config, "sweep.grid",
                                  "--parameter needs a non-empty --grid")
            cfg.sweep = {"parameter": args.parameter, "grid": grid}
            if args.parameter not in cfg.sampler:
                raise ConfigError(args.config, "sweep.parameter",
                                  f"{args.parameter!r} is not a sampler field")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    seed = cfg.seed if args.seed is None else args.seed
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out_dir, seed, args.threads,
                                      not args.no_figures)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
