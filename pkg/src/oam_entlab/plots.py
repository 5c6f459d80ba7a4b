"""Figure rendering for pipeline outputs.

Everything draws through the Agg backend so the functions work headless;
each writes a PNG to the given path and closes the figure.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be fixed first
import numpy as np  # noqa: E402

from .experiment_sim import CoincidenceHistogram, CoincidenceTable  # noqa: E402
from .quantum_core import TwoQubitState  # noqa: E402

__all__ = [
    "save_histogram_figure",
    "save_coincidence_figure",
    "save_density_matrix_figure",
]

_KET_LABELS = ("|00>", "|01>", "|10>", "|11>")


def save_histogram_figure(histogram: CoincidenceHistogram, path: str | Path) -> None:
    """Start-stop delay histogram with the center (gated) window shaded."""
    edges = histogram.bin_edges_ns
    all_edges = np.append(edges, edges[-1] + histogram.bin_width_ns)
    span = histogram.bins_per_window * histogram.bin_width_ns

    fig, ax = plt.subplots(figsize=(8.0, 3.2))
    ax.axvspan(-span / 2.0, span / 2.0, color="#f2c14e", alpha=0.3, lw=0)
    ax.stairs(histogram.counts, all_edges, fill=True, color="#2d6a8f", lw=0.0)
    ax.set_xlim(all_edges[0], all_edges[-1])
    ax.set_xlabel("anti-Stokes to Stokes delay (ns)")
    ax.set_ylabel("coincidences / %.3g ns" % histogram.bin_width_ns)
    ax.set_title("coincidence delay histogram")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_coincidence_figure(table: CoincidenceTable, path: str | Path) -> None:
    """Bar chart of coincidence counts per analyzer setting pair."""
    labels = ["%s, %s" % (r.setting_as, r.setting_s) for r in table.rows]
    counts = [r.coincidences for r in table.rows]

    fig, ax = plt.subplots(figsize=(max(6.0, 0.5 * len(labels)), 3.6))
    ax.bar(np.arange(len(labels)), counts, color="#2d6a8f")
    ax.set_xticks(np.arange(len(labels)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("coincidences")
    ax.set_title("coincidences per setting pair (AS, S)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _bar3d_panel(ax, values: np.ndarray, title: str, zlim: float) -> None:
    xs, ys = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    xs = xs.ravel()
    ys = ys.ravel()
    dz = values.ravel()
    colors = np.where(dz >= 0.0, "#2d6a8f", "#b3432b")
    ax.bar3d(xs - 0.35, ys - 0.35, np.zeros(16), 0.7, 0.7, dz,
             color=colors, shade=True)
    ax.set_zlim(-zlim, zlim)
    ax.set_xticks(range(4))
    ax.set_yticks(range(4))
    ax.set_xticklabels(_KET_LABELS, fontsize=7)
    ax.set_yticklabels(_KET_LABELS, fontsize=7)
    ax.set_title(title)


def save_density_matrix_figure(state: TwoQubitState, path: str | Path) -> None:
    """Real and imaginary parts of the density matrix as 3D bar panels."""
    rho = state.matrix if isinstance(state, TwoQubitState) else np.asarray(state, dtype=complex)
    zlim = max(0.5, float(np.abs(rho).max()) * 1.1)

    fig = plt.figure(figsize=(9.0, 4.0))
    ax_re = fig.add_subplot(1, 2, 1, projection="3d")
    ax_im = fig.add_subplot(1, 2, 2, projection="3d")
    _bar3d_panel(ax_re, rho.real, "Re rho", zlim)
    _bar3d_panel(ax_im, rho.imag, "Im rho", zlim)
    # tight_layout does not handle 3d axes decorations
    fig.subplots_adjust(left=0.02, right=0.98, wspace=0.08)
    fig.savefig(path, dpi=150)
    plt.close(fig)
