"""Figure rendering for the report path: one or two PNGs per subcommand,
written next to the delimited output.  Deterministic for a fixed input
(fixed size, dpi, and no embedded timestamps)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = {"dpi": 130, "bbox_inches": "tight"}


def _finish(fig, path):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def riccati_figure(t, a_values, lower, upper, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.semilogy(t, a_values, label="A", color="C0")
    if lower is not None:
        ax.semilogy(t, lower, "--", label="lower bound", color="C2", lw=1)
    if upper is not None:
        ax.semilogy(t, upper, "--", label="upper bound", color="C3", lw=1)
    ax.set_xlabel("t")
    ax.set_ylabel("A(t)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def trajectory_figure(t, series: dict, path, ylabel="value") -> None:
    """Mean trajectories with optional (lo, hi) quantile bands.

    ``series`` maps a label to either an array or a (mean, lo, hi) triple.
    """
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, (label, data) in enumerate(series.items()):
        color = f"C{i}"
        if isinstance(data, tuple):
            mean, lo, hi = data
            ax.plot(t, mean, label=label, color=color)
            ax.fill_between(t, lo, hi, color=color, alpha=0.2, lw=0)
        else:
            ax.plot(t, data, label=label, color=color)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def convergence_figure(n_values, curves: dict, path, ylabel="distance") -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, vals in curves.items():
        vals = np.asarray(vals, dtype=float)
        if np.all(vals > 0):
            ax.loglog(n_values, vals, "o-", label=label)
        else:
            ax.semilogx(n_values, vals, "o-", label=label)
    ax.set_xlabel("penalty level n")
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    _finish(fig, path)


def value_figure(n_values, values, cesaro_values, j0, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.semilogx(n_values, values, "o-", label="penalized value")
    ax.semilogx(n_values, cesaro_values, "s-", label="running average")
    ax.axhline(j0, color="k", ls="--", lw=1, label="constrained value")
    ax.set_xlabel("penalty level n")
    ax.set_ylabel("leader cost")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _finish(fig, path)
