"""Figure rendering for run directories.

Every function takes data already written to CSV by the experiment
runners and saves a PNG next to it; the CSV stays the contract and the
figures are a convenience view.  The Agg backend keeps rendering
headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_DPI = 150


def _save(fig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def search_figure(records_by_seed: dict, path):
    """Batch loss and argmax scaled energy per step, one line per trial."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for seed in sorted(records_by_seed):
        recs = records_by_seed[seed]
        steps = [r[0] for r in recs]
        ax1.plot(steps, [r[1] for r in recs], lw=1, label=f"seed {seed}")
        ax2.plot(steps, [r[2] for r in recs], lw=1)
    ax1.set_xlabel("step")
    ax1.set_ylabel("batch loss")
    ax2.set_xlabel("step")
    ax2.set_ylabel("argmax scaled energy")
    if len(records_by_seed) <= 10:
        ax1.legend(fontsize=7)
    fig.suptitle("architecture search")
    _save(fig, path)


def finetune_figure(histories_by_seed: dict, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for seed in sorted(histories_by_seed):
        hist = histories_by_seed[seed]
        if hist:
            ax.plot(range(len(hist)), hist, lw=1, label=f"seed {seed}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("scaled energy")
    ax.set_title("fine-tuning of extracted circuits")
    if len(histories_by_seed) <= 10:
        ax.legend(fontsize=7)
    _save(fig, path)


def trajectory_figure(mean, std, path):
    """Mean +/- one standard deviation across restarts."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(mean))
    ax.plot(xs, mean, lw=1.5)
    lo = [m - s for m, s in zip(mean, std)]
    hi = [m + s for m, s in zip(mean, std)]
    ax.fill_between(xs, lo, hi, alpha=0.25)
    ax.set_xlabel("iteration")
    ax.set_ylabel("scaled energy")
    ax.set_title("fixed-circuit fine-tuning, mean over restarts")
    _save(fig, path)


def fidelity_figure(labels, per_circuit: dict, means, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(labels))
    for seed in sorted(per_circuit):
        ax.plot(xs, per_circuit[seed], "o--", lw=0.8, alpha=0.5,
                label=f"seed {seed}")
    ax.plot(xs, means, "s-", lw=2, color="black", label="mean")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=20, fontsize=7)
    ax.set_ylabel("fidelity to ideal circuit")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize=7)
    _save(fig, path)


def report_figure(rows: list, path):
    """One bar per run: mean final energy where present, else the first
    mean fidelity column."""
    names, values, kinds = [], [], []
    for row in rows:
        if row.get("mean_final_energy"):
            names.append(row["run"])
            values.append(float(row["mean_final_energy"]))
            kinds.append("energy")
        elif row.get("mean_fidelity"):
            first = row["mean_fidelity"].split()[0]
            names.append(row["run"])
            values.append(float(first.split("=")[1]))
            kinds.append("fidelity")
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 4))
    colors = ["tab:blue" if k == "energy" else "tab:orange" for k in kinds]
    ax.bar(range(len(names)), values, color=colors)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, fontsize=8)
    ax.set_ylabel("mean final scaled energy / fidelity")
    ax.set_title("run comparison")
    _save(fig, path)
