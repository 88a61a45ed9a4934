"""Figure rendering for evaluation reports (matplotlib, file output only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

CONDITION_LABELS = {"augmented": "Augmented", "synthetic_only": "Synthetic-only"}


def figsize(width=6.5, ratio=None):
    ratio = (np.sqrt(5.0) - 1.0) / 2.0 if ratio is None else ratio
    return width, width * ratio


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_improvements(rows, generator: str, path):
    """Per-subject improvement over baseline, one panel per classifier.

    Points are subjects; the red line marks the mean and the blue line the
    median of each condition.
    """
    rows = [r for r in rows if r["generator"] == generator]
    classifiers = sorted({r["classifier"] for r in rows}, key=["mdm", "knn", "svc"].index)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(classifiers), figsize=figsize(2.4 * len(classifiers), 1.1),
                                 sharey=True, squeeze=False)
        for ax, clf in zip(axes[0], classifiers):
            for x, cond in enumerate(("augmented", "synthetic_only")):
                vals = np.array([r["improvement_pp"] for r in rows
                                 if r["classifier"] == clf and r["condition"] == cond])
                jitter = np.linspace(-0.12, 0.12, len(vals)) if len(vals) > 1 else np.zeros(len(vals))
                ax.scatter(x + jitter, vals, s=12, color="0.35", zorder=3)
                if len(vals):
                    ax.hlines(vals.mean(), x - 0.25, x + 0.25, color="tab:red", lw=1.5)
                    ax.hlines(np.median(vals), x - 0.25, x + 0.25, color="tab:blue", lw=1.5)
            ax.axhline(0.0, color="0.6", lw=0.8, ls="--")
            ax.set_xticks([0, 1], [CONDITION_LABELS[c] for c in ("augmented", "synthetic_only")])
            ax.set_xlim(-0.6, 1.6)
            ax.set_title(clf.upper())
        axes[0][0].set_ylabel("Improvement over baseline (pp)")
        fig.suptitle(f"{generator.capitalize()} generator")
        return _save(fig, path)


def plot_training_curves(histories: dict, path, title: str = ""):
    """Loss terms against epoch for each class model of a fold."""
    keys = ("total", "manifold", "tangent", "kl", "diversity")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=figsize(11.0, 0.22), squeeze=False)
        for k, hist in sorted(histories.items()):
            epochs = [row["epoch"] for row in hist]
            for ax, key in zip(axes[0], keys):
                ax.plot(epochs, [row[key] for row in hist], lw=1.0, label=f"class {k}")
        for ax, key in zip(axes[0], keys):
            ax.set_title(key)
            ax.set_xlabel("epoch")
        axes[0][0].legend(frameon=False)
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_validity(validity: dict, path):
    """Bar chart of SPD pass fractions by generator."""
    names = list(validity)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(3.2))
        ax.bar(names, [validity[n]["pass_fraction"] for n in names], color="0.5")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("SPD pass fraction")
        return _save(fig, path)
