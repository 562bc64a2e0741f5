"""Figures for spectra, eigenfunctions and benchmarks."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.analysis.bench import BenchComparison  # noqa: E402
from src.analysis.spectral import EigenfunctionField, Spectrum  # noqa: E402


def plot_eigenvalues(s: Spectrum, ax=None, title: str = "Koopman eigenvalues"):
    if ax is None:
        _, ax = plt.subplots(figsize=(6, 6))
    theta = np.linspace(0, 2 * np.pi, 400)
    ax.plot(np.cos(theta), np.sin(theta), "k--", linewidth=0.8, label="unit circle")
    ax.scatter(s.eigenvalues.real, s.eigenvalues.imag, s=14, color="tab:red", label="eigenvalues")
    ax.set_aspect("equal")
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_title(title)
    ax.legend(loc="lower left")
    return ax


def plot_eigenfunction(field: EigenfunctionField, reference: Optional[np.ndarray] = None, ax=None):
    """Modulus of the eigenfunction, with the reference orbit on top if given."""
    if ax is None:
        _, ax = plt.subplots(figsize=(7, 6))
    mesh = ax.pcolormesh(field.x1, field.x2, field.modulus, shading="auto", cmap="viridis")
    plt.colorbar(mesh, ax=ax, label="|f(x)|")
    if reference is not None:
        ax.plot(reference[:, field.coords[0]], reference[:, field.coords[1]], "w-", linewidth=1.2, label="limit cycle")
        ax.legend(loc="upper right")
    mu = field.eigenvalue
    ax.set_title(f"Eigenfunction |f|, eigenvalue {mu.real:.4f}{mu.imag:+.4f}j")
    ax.set_xlabel(f"x{field.coords[0] + 1}")
    ax.set_ylabel(f"x{field.coords[1] + 1}")
    return ax


def plot_timing(comparison: BenchComparison, ax=None):
    """Cumulative time of both arms against the number of samples."""
    if ax is None:
        _, ax = plt.subplots(figsize=(7, 5))
    for report in (comparison.rr, comparison.edmd, comparison.extraction):
        steps = np.arange(1, report.M + 1)
        ax.loglog(steps, report.cumulative_nanos / 1e9, label=report.method)
    ax.set_xlabel("samples M")
    ax.set_ylabel("cumulative time [s]")
    ax.set_title(f"Recursive vs recomputed learning (K={comparison.rr.K})")
    ax.legend()
    return ax


def plot_scaling(table: pd.DataFrame, ax=None):
    if ax is None:
        _, ax = plt.subplots(figsize=(7, 5))
    ax.loglog(table["K"], table["mean_step_nanos"] / 1e3, "o-")
    ax.set_xlabel("dictionary size K")
    ax.set_ylabel("mean update time [us]")
    ax.set_title("Per-sample update cost")
    return ax


def plot_stability(frame: pd.DataFrame, ax=None):
    """Largest eigenvalue modulus per spectrum snapshot."""
    if ax is None:
        _, ax = plt.subplots(figsize=(7, 4))
    ax.plot(frame["M"], frame["max_modulus"], "o-", color="tab:blue")
    ax.axhline(1.0, color="k", linestyle="--", linewidth=0.8)
    ax.set_xlabel("samples M")
    ax.set_ylabel("max |eigenvalue|")
    ax.set_title("Stability monitor")
    return ax


def save_figure(ax, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = ax.figure
    fig.tight_layout()
    fig.savefig(path, dpi=300, bbox_inches="tight")
    plt.close(fig)
    return path
