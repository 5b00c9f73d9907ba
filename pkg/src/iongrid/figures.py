"""Figure rendering for the report pipeline.

Every CLI subcommand that writes delimited data also renders a matplotlib
figure of the same content next to it, so a run directory is inspectable
without further tooling.  All functions write PNG files and return the path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import ScanImage
from .profiler import SessionResult, edge_histogram

__all__ = [
    "save_profile_figure",
    "save_scan_figure",
    "save_quant_figure",
    "save_residual_figure",
]


def save_profile_figure(result: SessionResult, path, bin_width: float = 5.0):
    """Edge-event histogram (detected vs blocked) and the running sigma
    estimate with its posterior band."""
    hist = edge_histogram(result, bin_width)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))

    centers = hist["bin_centers"]
    ax1.bar(centers, hist["detected"], width=bin_width * 0.9,
            label="detected", color="tab:blue")
    ax1.bar(centers, -hist["blocked"].astype(float), width=bin_width * 0.9,
            label="blocked", color="tab:green")
    ax1.axhline(0.0, color="k", lw=0.8)
    ax1.set_xlabel("edge position (nm)")
    ax1.set_ylabel("events")
    ax1.legend(fontsize=8)

    n = len(result.events)
    idx = np.arange(n)
    ax2.plot(idx, result.sigma_mean_trace, color="tab:blue", label="sigma mean")
    ax2.fill_between(idx,
                     result.sigma_mean_trace - result.sigma_std_trace,
                     result.sigma_mean_trace + result.sigma_std_trace,
                     alpha=0.3, color="tab:blue", label="posterior std")
    ax2.set_xlabel("event")
    ax2.set_ylabel("beam sigma (nm)")
    ax2.legend(fontsize=8)

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_scan_figure(img: ScanImage, path, title: str = ""):
    """Grayscale raster with a count colorbar."""
    fig, ax = plt.subplots(figsize=(5, 4))
    half = img.pixel_size / 2.0
    extent = (img.origin[0] - half,
              img.origin[0] + (img.width - 1) * img.pixel_size + half,
              img.origin[1] - half,
              img.origin[1] + (img.height - 1) * img.pixel_size + half)
    im = ax.imshow(img.counts, origin="lower", extent=extent, cmap="magma")
    fig.colorbar(im, ax=ax, label="counts / dwell")
    ax.set_xlabel("x (nm)")
    ax.set_ylabel("y (nm)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_quant_figure(quants, path, unit_label: str = "C"):
    """Fractional ion number per spot, annotated with the rounded count."""
    fig, ax = plt.subplots(figsize=(6, 3.4))
    spots = [q.spot_id for q in quants]
    frac = [q.ions_fractional for q in quants]
    ax.bar(spots, frac, color="tab:purple", alpha=0.8)
    for q in quants:
        ax.annotate(str(q.ions_rounded), (q.spot_id, q.ions_fractional),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xlabel("spot")
    ax.set_ylabel(f"ions per spot (units of {unit_label})")
    ax.set_xticks(spots)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_residual_figure(accuracy_residuals, precision_displacements, path):
    """Accuracy residuals (center minus node) and precision displacements
    (position minus spot centroid) as paired scatter plots."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.8))
    for ax, data, label in (
        (axes[0], np.asarray(accuracy_residuals, dtype=float), "center - grid node"),
        (axes[1], np.asarray(precision_displacements, dtype=float),
         "position - spot centroid"),
    ):
        if data.size:
            ax.scatter(data[:, 0], data[:, 1], s=18, alpha=0.7)
        ax.axhline(0.0, color="k", lw=0.5)
        ax.axvline(0.0, color="k", lw=0.5)
        ax.set_xlabel(f"{label}, x (nm)")
        ax.set_ylabel(f"{label}, y (nm)")
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
