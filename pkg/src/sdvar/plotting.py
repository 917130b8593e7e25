"""
Figures written next to the CSV outputs of the command-line workflows.

All functions draw with the non-interactive Agg backend inside an rc
context, save to ``path`` and return it.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["STYLE", "plot_series", "plot_paths", "plot_irf", "plot_error_bands",
           "plot_estimates"]

GREY = "#737373"
PALETTE = ["#08589e", "#b0011b", "#009441", "#ff7300", "#710095", "#4eb3d3"]

STYLE = {
    "axes.prop_cycle": matplotlib.cycler(color=PALETTE),
    "axes.edgecolor": GREY,
    "axes.grid": True,
    "grid.color": "#d9d9d9",
    "grid.linestyle": "--",
    "grid.linewidth": 0.5,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 8,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "lines.linewidth": 1.0,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "figure.constrained_layout.use": True,
}


def _grid(k, ncols=3, panel=(3.0, 2.2)):
    ncols = min(ncols, k)
    nrows = int(np.ceil(k / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(panel[0] * ncols, panel[1] * nrows),
                             squeeze=False)
    for ax in axes.flat[k:]:
        ax.set_visible(False)
    return fig, axes.flat


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_series(y, names, path, title=None):
    """Observed (or simulated) series, one panel each."""
    y = np.asarray(y)
    with plt.rc_context(STYLE):
        fig, axes = _grid(y.shape[1], ncols=1, panel=(7.0, 1.6))
        for i, ax in enumerate(axes[:y.shape[1]]):
            ax.plot(y[:, i], color=PALETTE[i % len(PALETTE)])
            ax.set_title(names[i], loc="left")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_paths(theta_path, labels, components, path, lower=None, upper=None, truth=None,
               smoothed=None):
    """State components over time with optional bands, truth and smoothed path."""
    idx = [labels.index(c) for c in components]
    with plt.rc_context(STYLE):
        fig, axes = _grid(len(idx))
        for ax, c, k in zip(axes, components, idx):
            t = np.arange(theta_path.shape[0])
            if lower is not None:
                ax.fill_between(t, lower[:, k], upper[:, k], color=GREY, alpha=0.25,
                                linewidth=0, label="68% band")
            ax.plot(t, theta_path[:, k], color=PALETTE[0], label="filtered")
            if smoothed is not None:
                ax.plot(t, smoothed[:, k], color=PALETTE[2], label="smoothed")
            if truth is not None:
                ax.plot(t, truth[:, k], color="black", linestyle="--", label="true")
            ax.set_title(c, loc="left")
        axes[0].legend(loc="best")
        return _save(fig, path)


def plot_irf(result, names, path):
    """Grid of responses: row = variable, column = shock."""
    resp, half = result.responses, result.band_halfwidths
    n = resp.shape[0]
    k = np.arange(resp.shape[2])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n, n, figsize=(2.6 * n, 2.0 * n), squeeze=False,
                                 sharex=True)
        for i in range(n):
            for j in range(n):
                ax = axes[i, j]
                ax.fill_between(k, resp[i, j] - half[i, j], resp[i, j] + half[i, j],
                                color=GREY, alpha=0.3, linewidth=0)
                ax.plot(k, resp[i, j], color=PALETTE[0])
                ax.axhline(0.0, color="black", linewidth=0.5)
                if i == 0:
                    ax.set_title(f"shock {j + 1}")
                if j == 0:
                    ax.set_ylabel(names[i])
        for ax in axes[-1]:
            ax.set_xlabel("horizon")
        return _save(fig, path)


def plot_error_bands(summary, components, path, which="abs"):
    """Median and 16/84% quantiles of filtered and smoothed errors."""
    idx = [summary.labels.index(c) for c in components]
    f = getattr(summary, f"filtered_{which}")
    s = getattr(summary, f"smoothed_{which}")
    with plt.rc_context(STYLE):
        fig, axes = _grid(len(idx))
        for ax, c, k in zip(axes, components, idx):
            t = np.arange(f.shape[1])
            for q, color, lab in ((f, GREY, "filtered"), (s, "black", "smoothed")):
                ax.plot(t, q[1, :, k], color=color, linewidth=1.2, label=lab)
                ax.plot(t, q[0, :, k], color=color, linestyle="--", linewidth=0.7)
                ax.plot(t, q[2, :, k], color=color, linestyle="--", linewidth=0.7)
            ax.axhline(0.0, color="black", linewidth=0.4)
            ax.set_title(c, loc="left")
        axes[0].legend(loc="best")
        return _save(fig, path)


def plot_estimates(estimates, names, truth, path):
    """Histograms of estimates across replications with the true values."""
    estimates = np.asarray(estimates)
    with plt.rc_context(STYLE):
        fig, axes = _grid(len(names), ncols=2)
        for k, ax in enumerate(axes[:len(names)]):
            ax.hist(estimates[:, k], bins=20, color=PALETTE[0], alpha=0.7)
            if truth is not None:
                ax.axvline(truth[k], color="black", linestyle="--")
            ax.set_title(names[k], loc="left")
        return _save(fig, path)
