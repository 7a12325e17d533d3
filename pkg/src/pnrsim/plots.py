"""Figure rendering for the report paths.

All figures are rendered with the Agg backend at fixed size and dpi so a
given analysis produces byte-identical PNG files on every run.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_DPI = 110


def _save(fig, path):
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_pmfs(pmfs, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for ch, pmf in enumerate(pmfs):
        ax.bar(np.arange(len(pmf)) + 0.35 * ch, pmf, width=0.35,
               label=f"channel {ch + 1}", alpha=0.8)
    ax.set_xlabel("detected photons")
    ax.set_ylabel("probability")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_spectrum(hist, metrics, path):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.stairs(np.maximum(hist.counts, 0.5), hist.bin_edges, color="C0",
              label="spectrum")
    x = np.linspace(hist.bin_edges[0], hist.bin_edges[-1], 2000)
    model = np.zeros_like(x)
    for p in metrics.peaks:
        model += p.amplitude * np.exp(-0.5 * ((x - p.mu) / p.sigma) ** 2)
    ax.plot(x, np.maximum(model, 0.5), color="C3", lw=1.0, label="fit")
    ax.set_yscale("log")
    ax.set_xlabel("charge (ADU samples)")
    ax.set_ylabel("counts / bin")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_metrics(metrics, path):
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.4))
    v = metrics.visibility
    axes[0].errorbar([p.index for p in v], [p.value for p in v],
                     yerr=[p.error for p in v], fmt="o", ms=3)
    axes[0].set_xlabel("peak number")
    axes[0].set_ylabel("visibility")
    axes[0].set_ylim(0, 1.05)
    f = metrics.fom
    axes[1].errorbar([p.index for p in f], [p.value for p in f],
                     yerr=[p.error for p in f], fmt="o", ms=3)
    axes[1].set_xlabel("peak number")
    axes[1].set_ylabel("FoM")
    d = metrics.delta_pp
    axes[2].errorbar([p.index for p in d], [p.value for p in d],
                     yerr=[p.error for p in d], fmt="o", ms=3)
    axes[2].set_xlabel("peak number")
    axes[2].set_ylabel("peak spacing (ADU samples)")
    fig.tight_layout()
    _save(fig, path)


def plot_series(path, x, series: dict, xlabel: str, ylabel: str,
                logy: bool = False, hline: float | None = None):
    """Generic multi-series panel: series maps label -> (y, yerr or None)."""
    fig, ax = plt.subplots(figsize=(6.2, 4.2))
    for label, (y, yerr) in series.items():
        ax.errorbar(x, y, yerr=yerr, fmt="o-", ms=3.5, lw=1.0, label=label,
                    capsize=2)
    if hline is not None:
        ax.axhline(hline, color="0.5", lw=0.8, ls="--")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
