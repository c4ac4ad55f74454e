"""Figures rendered to files (Agg backend, no display needed)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402

from .mesh import Mesh  # noqa: E402
from .schemes import History  # noqa: E402


def plot_field(u: np.ndarray, mesh: Mesh, path: str | Path, title: str = "") -> Path:
    """Cell-averaged nodal field on the quad mesh."""
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    polys = mesh.nodes[mesh.cells]
    coll = PolyCollection(polys, array=u[mesh.cells].mean(axis=1), cmap="viridis", edgecolors="none")
    ax.add_collection(coll)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_aspect("equal")
    fig.colorbar(coll, ax=ax)
    ax.set_title(title or f"u in [{u.min():.3g}, {u.max():.3g}]")
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_history(history: History, path: str | Path) -> Path:
    """Residual norm and attained range against (pseudo-)time."""
    t = history.column("time")
    fig, (ax_res, ax_rng) = plt.subplots(1, 2, figsize=(10, 4))
    ax_res.semilogy(t, np.maximum(history.column("residual_norm"), 1e-300))
    ax_res.set_xlabel("t")
    ax_res.set_ylabel("||du/dt||")
    ax_rng.plot(t, history.column("u_min"), label="min")
    ax_rng.plot(t, history.column("u_max"), label="max")
    ax_rng.set_xlabel("t")
    ax_rng.legend()
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
