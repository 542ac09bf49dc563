"""Report figures.  matplotlib is imported lazily so the core has no plotting
dependency; install the ``plot`` extra to enable figures."""

from __future__ import annotations

import os

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, out_dir, name):
    # fixed metadata keeps repeated runs byte-stable
    fig.savefig(os.path.join(out_dir, name), dpi=120, metadata={"Software": None})
    return name


def swiss_roll_figures(result, out_dir):
    """Input roll, flattened embedding and per-point relative error."""
    plt = _pyplot()
    data = result.tables["data"]
    emb = result.tables["embedding"]
    rep = result.report
    names = []

    fig = plt.figure(figsize=(5, 4))
    ax = fig.add_subplot(projection="3d")
    ax.scatter(*data.points.T, c=data.labels, s=2, cmap="viridis")
    ax.set_title("input samples by segment")
    names.append(_save(fig, out_dir, "input.png"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.scatter(emb[:, 0], emb[:, 1], c=data.labels, s=2, cmap="viridis")
    ax.set_aspect("equal")
    ax.set_title("network output")
    names.append(_save(fig, out_dir, "embedding.png"))
    plt.close(fig)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3))
    sc = axes[0].scatter(data.intrinsic[:, 0], data.intrinsic[:, 1], c=rep.amplification, s=2)
    fig.colorbar(sc, ax=axes[0])
    axes[0].set_title("relative error")
    sc = axes[1].scatter(data.intrinsic[:, 0], data.intrinsic[:, 1], c=rep.err_abs, s=2)
    fig.colorbar(sc, ax=axes[1])
    axes[1].set_title("absolute error / max deviation")
    fig.tight_layout()
    names.append(_save(fig, out_dir, "errors.png"))
    plt.close(fig)
    return names


def worstcase_figures(result, out_dir):
    plt = _pyplot()
    rows = np.array(result.tables["sweep"], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3))
    for k in (1, 2, 3):
        sel = rows[:, 0] == k
        # the first segment has exactly zero amplification; clamp so it shows on the log axis
        ax.semilogy(np.arange(sel.sum()), np.maximum(rows[sel, 4], 1e-16), "o-", label=f"segment {k}",
                    ms=3)
    ax.set_xlabel("sample along segment")
    ax.set_ylabel("amplification")
    ax.legend()
    fig.tight_layout()
    name = _save(fig, out_dir, "worstcase.png")
    plt.close(fig)
    return [name]
