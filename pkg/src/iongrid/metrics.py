"""Placement statistics: grid registration, accuracy and precision.

Accuracy measures how far the realized spot centers sit from the ideal
pitch grid after the best rigid registration (translation plus optional
rotation); precision measures the scatter of individual emitter positions
about their own spot's centroid.  Both are pooled per-axis standard
deviations: the x and y residual components of all included points are
stacked into one sample of size 2N and reduced with the population formula.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridModel",
    "RegisteredGrid",
    "DispersionReport",
    "RegistrationError",
    "register_grid",
    "accuracy_sigma",
    "precision_sigma",
    "pooled_axis_sigma",
    "write_residuals_csv",
    "write_summary_json",
]


class RegistrationError(RuntimeError):
    """Raised when centers cannot be assigned one-to-one to grid nodes."""


@dataclass(frozen=True)
class GridModel:
    """Rigid model of the ideal dot grid."""

    origin: tuple[float, float]
    pitch: float
    rotation: float
    rows: int
    cols: int

    def __post_init__(self):
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")

    def node(self, row: int, col: int) -> np.ndarray:
        cb, sb = math.cos(self.rotation), math.sin(self.rotation)
        local = self.pitch * np.array([col, row], dtype=float)
        rotated = np.array([cb * local[0] - sb * local[1],
                            sb * local[0] + cb * local[1]])
        return np.asarray(self.origin) + rotated


@dataclass(frozen=True)
class RegisteredGrid:
    """A fitted grid plus the per-center node assignment and residuals."""

    model: GridModel
    node_positions: np.ndarray   # (n, 2), aligned with the input centers
    residuals: np.ndarray        # (n, 2), center - node

    @property
    def residual_sigma(self) -> float:
        return pooled_axis_sigma(self.residuals)


def pooled_axis_sigma(residuals: np.ndarray) -> float:
    """Population standard deviation of the stacked x and y components."""
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        return 0.0
    return float(math.sqrt(np.sum(r * r) / r.size))


def _rigid_fit(nodes: np.ndarray, centers: np.ndarray, allow_rotation: bool):
    """Best rotation + translation mapping nodes onto centers (least squares)."""
    nc = nodes.mean(axis=0)
    cc = centers.mean(axis=0)
    if not allow_rotation:
        return 0.0, cc - nc
    a = nodes - nc
    b = centers - cc
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, d]) @ u.T
    angle = math.atan2(r[1, 0], r[0, 0])
    # translation in the rotated frame: centers ~ R (nodes - nc) + t
    t = cc - np.array([math.cos(angle) * nc[0] - math.sin(angle) * nc[1],
                       math.sin(angle) * nc[0] + math.cos(angle) * nc[1]])
    return angle, t


def register_grid(centers, pitch: float, allow_rotation: bool = True,
                  max_iter: int = 50) -> RegisteredGrid:
    """Fit an ideal pitch grid to measured spot centers.

    Iterates between assigning every center to its nearest integer lattice
    node and solving the rigid (translation + optional rotation) transform
    by SVD.  Two centers claiming one node is an ambiguity error.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] < 3:
        raise ValueError("need at least 3 centers to register a grid")
    if not pitch > 0:
        raise ValueError("pitch must be positive")

    angle, t = 0.0, centers[0].copy()
    lattice = None
    for _ in range(max_iter):
        cb, sb = math.cos(angle), math.sin(angle)
        back = np.empty_like(centers)
        rel = centers - t
        back[:, 0] = cb * rel[:, 0] + sb * rel[:, 1]
        back[:, 1] = -sb * rel[:, 0] + cb * rel[:, 1]
        new_lattice = np.round(back / pitch).astype(int)
        if lattice is not None and np.array_equal(new_lattice, lattice):
            break
        lattice = new_lattice
        nodes = pitch * lattice.astype(float)
        angle, t = _rigid_fit(nodes, centers, allow_rotation)

    seen = {}
    for i, k in enumerate(map(tuple, lattice)):
        if k in seen:
            raise RegistrationError(
                f"centers {seen[k]} and {i} both map to grid node {k}"
            )
        seen[k] = i

    cb, sb = math.cos(angle), math.sin(angle)
    nodes = pitch * lattice.astype(float)
    node_pos = np.empty_like(nodes)
    node_pos[:, 0] = cb * nodes[:, 0] - sb * nodes[:, 1] + t[0]
    node_pos[:, 1] = sb * nodes[:, 0] + cb * nodes[:, 1] + t[1]

    row0, col0 = lattice[:, 1].min(), lattice[:, 0].min()
    model = GridModel(
        origin=tuple(node_pos[np.lexsort((lattice[:, 0], lattice[:, 1]))[0]]),
        pitch=float(pitch),
        rotation=float(angle),
        rows=int(lattice[:, 1].max() - row0 + 1),
        cols=int(lattice[:, 0].max() - col0 + 1),
    )
    return RegisteredGrid(model=model, node_positions=node_pos,
                          residuals=centers - node_pos)


@dataclass(frozen=True)
class DispersionReport:
    """A pooled per-axis dispersion with its sample bookkeeping."""

    sigma: float
    n_points: int
    excluded: tuple[int, ...]


def accuracy_sigma(centers, grid: RegisteredGrid, exclusions=(),
                   ids=None) -> DispersionReport:
    """Dispersion of spot centers about their assigned grid nodes.

    ``ids`` labels the centers (default 1..n); ``exclusions`` lists ids to
    drop.  Needs at least 2 included centers.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n = centers.shape[0]
    ids = list(range(1, n + 1)) if ids is None else list(ids)
    excluded = tuple(sorted(set(exclusions)))
    keep = [i for i, sid in enumerate(ids) if sid not in excluded]
    if len(keep) < 2:
        raise ValueError("need at least 2 included centers")
    residuals = grid.residuals[keep]
    return DispersionReport(
        sigma=pooled_axis_sigma(residuals),
        n_points=len(keep),
        excluded=excluded,
    )


def precision_sigma(per_spot_positions, exclusions=(), ids=None) -> DispersionReport:
    """Scatter of emitter positions about their own spot centroid.

    ``per_spot_positions`` is a sequence of (k_i, 2) position arrays, one
    per spot.  Spots in ``exclusions`` and spots with a single position
    (no measurable displacement) are skipped.
    """
    spots = [np.atleast_2d(np.asarray(p, dtype=float)) for p in per_spot_positions]
    ids = list(range(1, len(spots) + 1)) if ids is None else list(ids)
    excluded = tuple(sorted(set(exclusions)))
    displacements = []
    n_points = 0
    for sid, pos in zip(ids, spots):
        if sid in excluded or pos.shape[0] < 2:
            continue
        displacements.append(pos - pos.mean(axis=0))
        n_points += pos.shape[0]
    if not displacements:
        raise ValueError("no usable spots (all excluded or singleton)")
    return DispersionReport(
        sigma=pooled_axis_sigma(np.vstack(displacements)),
        n_points=n_points,
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_residuals_csv(grid: RegisteredGrid, path, ids=None) -> None:
    n = grid.residuals.shape[0]
    ids = list(range(1, n + 1)) if ids is None else list(ids)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spot", "residual_x_nm", "residual_y_nm"])
        for sid, (rx, ry) in zip(ids, grid.residuals):
            writer.writerow([sid, f"{rx:.2f}", f"{ry:.2f}"])


def write_summary_json(report: DispersionReport, path, label: str) -> None:
    with open(path, "w") as fh:
        json.dump({
            "statistic": label,
            "sigma_nm": report.sigma,
            "n_points": report.n_points,
            "excluded_spots": list(report.excluded),
        }, fh, indent=2)
