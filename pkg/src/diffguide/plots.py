"""Figure rendering for the report path: every CLI run saves plots next to
its delimited output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def ess_trace_figure(trace: np.ndarray, n_particles: int, path) -> str:
    fig, ax = plt.subplots(figsize=(5, 3))
    steps = np.arange(len(trace))
    ax.plot(steps, trace, marker="o", ms=3, lw=1.2)
    ax.axhline(n_particles, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("denoising step (0 = start at t=T)")
    ax.set_ylabel("effective sample size")
    ax.set_ylim(0, n_particles * 1.05)
    return _save(fig, path)


def reward_hist_figure(rewards: np.ndarray, path) -> str:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.hist(rewards, bins=min(50, max(5, len(np.unique(rewards)))),
            color="#4878d0", edgecolor="white")
    ax.set_xlabel("terminal reward")
    ax.set_ylabel("count")
    return _save(fig, path)


def sweep_figure(xs, means, errs, parameter: str, path) -> str:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.errorbar(xs, means, yerr=errs, marker="o", ms=4, lw=1.2, capsize=3)
    ax.set_xlabel(parameter)
    ax.set_ylabel("mean reward")
    if len(xs) > 1 and min(xs) > 0 and max(xs) / max(min(xs), 1e-12) >= 8:
        ax.set_xscale("log", base=2)
    return _save(fig, path)


def oracle_bar_figure(labels, probs, path) -> str:
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(labels)), 3))
    ax.bar(range(len(probs)), probs, color="#4878d0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=90 if len(labels) > 12 else 0, fontsize=7)
    ax.set_ylabel("target probability")
    return _save(fig, path)


def refine_figure(iterations, rewards, path) -> str:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.step(iterations, rewards, where="post", marker="o", ms=3)
    ax.set_xlabel("refinement iteration")
    ax.set_ylabel("accepted reward")
    return _save(fig, path)


def distill_figure(labels, teacher_probs, student_probs, path) -> str:
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(labels)), 3))
    x = np.arange(len(labels))
    ax.bar(x - 0.2, teacher_probs, width=0.4, label="teacher")
    ax.bar(x + 0.2, student_probs, width=0.4, label="student")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("terminal probability")
    ax.legend(fontsize=7)
    return _save(fig, path)
