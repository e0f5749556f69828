"""Render convergence figures from the run CSV files.

Given one CSV the error decay, effectivity history and estimator split are
plotted; a second CSV is treated as the uniform baseline and adds a
comparison figure for the point quantity.  Figures are written as PNG
files next to the delimited data.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load_csv(path) -> dict[str, np.ndarray]:
    """Columns of a convergence CSV as float arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} holds no data rows")
    return {
        key: np.array([float(r[key]) for r in rows]) for key in rows[0].keys()
    }


def _style(ax, xlabel="degrees of freedom", ylabel=None):
    ax.grid(True, which="both", alpha=0.3)
    ax.set_xlabel(xlabel)
    if ylabel:
        ax.set_ylabel(ylabel)


def render(csv_paths: list[str], out_dir) -> list[Path]:
    """Write the figure set; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_csv(csv_paths[0])
    uniform = load_csv(csv_paths[1]) if len(csv_paths) > 1 else None
    written = []
    dofs = data["dofs_primal"]

    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for k in range(1, 6):
        ax.loglog(dofs, data[f"relerr{k}"], "o-", ms=3, label=f"rel. err J{k}")
    ax.loglog(dofs, data["abserr_Jc"], "ks-", ms=3, label="abs. err combined")
    guide = data["abserr_Jc"][-1] * dofs[-1] / dofs
    ax.loglog(dofs, guide, "--", color="gray", label="rate -1")
    ax.legend(fontsize=8)
    _style(ax, ylabel="error")
    ax.set_title("quantity errors under refinement")
    path = out_dir / "errors.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogx(dofs, data["Ieff"], "o-", ms=3)
    ax.axhline(1.0, color="gray", lw=2, alpha=0.6)
    ax.set_ylim(0.0, 2.0)
    _style(ax, ylabel="estimate / true error")
    ax.set_title("effectivity of the error estimate")
    path = out_dir / "effectivity.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.loglog(dofs, np.abs(data["eta_h"]), "o-", ms=3, label="estimate")
    ax.loglog(dofs, np.abs(data["eta_primal"]), "^-", ms=3, label="primal part")
    ax.loglog(dofs, np.abs(data["eta_adjoint"]), "v-", ms=3, label="adjoint part")
    ax.loglog(dofs, np.abs(data["iter_err"]) + 1e-300, ".-", ms=3,
              label="iteration error")
    ax.legend(fontsize=8)
    _style(ax, ylabel="magnitude")
    ax.set_title("estimator split")
    path = out_dir / "estimator.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    if uniform is not None:
        fig, ax = plt.subplots(figsize=(6.0, 4.5))
        ax.loglog(dofs, data["relerr5"], "o-", ms=3, label="J5 adaptive")
        ax.loglog(uniform["dofs_primal"], uniform["relerr5"], "s-", ms=3,
                  label="J5 uniform")
        ax.loglog(dofs, data["relerr3"], "^-", ms=3, label="J3 adaptive")
        ax.loglog(uniform["dofs_primal"], uniform["relerr3"], "v-", ms=3,
                  label="J3 uniform")
        guide = data["relerr5"][-1] * dofs[-1] / dofs
        ax.loglog(dofs, guide, "--", color="gray", label="rate -1")
        ax.legend(fontsize=8)
        _style(ax, ylabel="relative error")
        ax.set_title("adaptive against uniform refinement")
        path = out_dir / "adaptive_vs_uniform.png"
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
