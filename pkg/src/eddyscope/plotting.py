"""Figures written next to the CSV outputs of the command line tools."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import atomic_write  # noqa: E402


def _save(fig, path):
    import io

    buf = io.BytesIO()
    fig.savefig(buf, format=os.path.splitext(path)[1][1:] or "png", dpi=120,
                bbox_inches="tight")
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def plot_singular_values(s, path, title="MSR singular values"):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    s = np.asarray(s, float)
    ax.loglog(np.arange(1, len(s) + 1), np.maximum(s, np.finfo(float).tiny), "o", ms=3)
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.set_title(title)
    _save(fig, path)


def plot_imaging_map(loc, path, truth=None):
    """Planar imaging functional with the located (and true) positions."""
    xs, ys = loc.grid.axes[:2]
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(xs, ys, loc.image.T, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="imaging functional")
    ax.plot(*loc.z_hat[:2], "r+", ms=12, label="located")
    if truth is not None:
        t = np.atleast_2d(truth)
        ax.plot(t[:, 0], t[:, 1], "wx", ms=8, label="true")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, path)


def plot_resolution(results, path):
    """``d_min`` against SNR in log-log axes with the ``2L SNR^(-1/3)`` guide."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for r in results:
        snr = np.asarray(r.snr)
        line, = ax.loglog(snr, r.d_min, "*", label=f"L = {r.L:g}")
        grid = np.geomspace(snr.min(), snr.max(), 50)
        ax.loglog(grid, 2 * r.L * grid ** (-1 / 3), "-", color=line.get_color(), lw=1)
    ax.set_xlabel("SNR")
    ax.set_ylabel("d_min (m)")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_classification(result, path):
    """One bar chart of mean distances per noise level."""
    n = len(result.noise_levels)
    cols = min(n, 2)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4.5 * cols, 3.2 * rows), squeeze=False)
    x = np.arange(1, len(result.labels) + 1)
    for i, ax in enumerate(axes.ravel()):
        if i >= n:
            ax.axis("off")
            continue
        ax.bar(x, result.mean_distance[i], color="tab:blue")
        ax.set_xticks(x)
        ax.set_xticklabels(result.labels, rotation=30, fontsize=8)
        ax.set_title(f"noise level {100 * result.noise_levels[i]:g}%", fontsize=9)
        ax.set_ylabel("mean distance")
    fig.tight_layout()
    _save(fig, path)


def plot_descriptors(dictionary, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for e in dictionary:
        ax.plot(e.descriptor.values, ".-", label=e.name, lw=1)
    ax.set_xlabel("descriptor entry")
    ax.set_ylabel("normalized singular value")
    ax.legend(fontsize=7)
    _save(fig, path)
