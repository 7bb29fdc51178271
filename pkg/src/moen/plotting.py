"""Figures written next to the CSV output.

Uses the non-interactive Agg backend and strips PNG metadata so repeated
runs produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_states(path, t, series: dict, title: str = "", ylabel: str = "state") -> Path:
    """One panel per state component; ``series`` maps label -> (M+1, n) array."""
    arrays = {k: np.asarray(v, float).reshape(len(t), -1) for k, v in series.items()}
    n = max(a.shape[1] for a in arrays.values())
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), sharex=True, squeeze=False)
    for i, ax in enumerate(axes[:, 0]):
        for label, a in arrays.items():
            if i < a.shape[1]:
                ax.plot(t, a[:, i], label=label, lw=1.2)
        ax.set_ylabel(f"{ylabel} {i + 1}")
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("t")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_costs(path, curves: dict, J_opt: dict | None = None, shift_at: int | None = None) -> Path:
    """Cost against iteration for each labelled run, log scale."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, (iters, J) in curves.items():
        line, = ax.semilogy(iters, J, marker=".", lw=1, label=label)
        if J_opt and J_opt.get(label) is not None:
            ax.axhline(J_opt[label], color=line.get_color(), ls="--", lw=0.8)
    if shift_at is not None:
        ax.axvline(shift_at, color="gray", ls=":", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
