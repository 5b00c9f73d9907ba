"""Shared geometry, units, image container and randomness contract.

Conventions used throughout the package:

* Positions and lengths are in nanometers, stored as floats.  Directions are
  dimensionless unit vectors.
* A :class:`ScanImage` is a pixelized photon-count raster.  The image origin
  anchors the *center* of pixel (0, 0); the center of pixel (row i, col j)
  sits at ``origin + (j * pixel_size, i * pixel_size)``.
* Every stochastic operation takes an explicit integer seed and builds its
  generator with :func:`rng_from_seed`.  There is no hidden global state;
  identical seed and inputs give bit-identical outputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "GeometryError",
    "ScanImage",
    "rng_from_seed",
    "subseed",
    "unit_vector",
    "require_unit",
    "subtract_images",
    "image_moments",
    "save_scan",
    "load_scan",
    "save_scan_csv",
    "load_scan_csv",
]

UNIT_NORM_TOL = 1e-12


class GeometryError(ValueError):
    """Raised when image shapes, metadata or regions are incompatible."""


# ---------------------------------------------------------------------------
# Randomness contract
# ---------------------------------------------------------------------------

def rng_from_seed(seed: int) -> np.random.Generator:
    """Return the package-standard generator for an integer seed."""
    return np.random.default_rng(int(seed))


def subseed(seed: int, index: int) -> int:
    """Derive an independent child seed, stable across runs.

    Pipelines that consume several random streams (implant, anneal, render)
    split one user-facing seed into per-stage seeds with distinct indices.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Vectors
# ---------------------------------------------------------------------------

def unit_vector(v) -> np.ndarray:
    """Normalize ``v`` to unit length."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def require_unit(v, name: str = "vector") -> np.ndarray:
    """Validate that ``v`` is unit-norm within 1e-12 and return it."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"{name} must be unit-norm, got |v| = {np.linalg.norm(v)!r}")
    return v


# ---------------------------------------------------------------------------
# ScanImage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanImage:
    """Photon-count raster with scan metadata.

    Parameters
    ----------
    counts : array (height, width)
        Pixel values, row-major.  Raw scans are non-negative; difference
        images may hold negative values.
    pixel_size : float
        Pixel pitch in nm (default 25).
    dwell : float
        Pixel integration time in seconds (default 6 ms).
    origin : (float, float)
        (x, y) position in nm of the center of pixel (0, 0).
    """

    counts: np.ndarray
    pixel_size: float = 25.0
    dwell: float = 6e-3
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise GeometryError("counts must be a non-empty 2D array")
        if not self.pixel_size > 0:
            raise GeometryError("pixel_size must be positive")
        if not self.dwell > 0:
            raise GeometryError("dwell must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    def pixel_x(self) -> np.ndarray:
        """x coordinate (nm) of each pixel-center column."""
        return self.origin[0] + self.pixel_size * np.arange(self.width)

    def pixel_y(self) -> np.ndarray:
        """y coordinate (nm) of each pixel-center row."""
        return self.origin[1] + self.pixel_size * np.arange(self.height)

    def same_geometry(self, other: "ScanImage") -> bool:
        return (
            self.counts.shape == other.counts.shape
            and self.pixel_size == other.pixel_size
            and self.origin == other.origin
        )

    def with_counts(self, counts: np.ndarray) -> "ScanImage":
        return replace(self, counts=counts)


def subtract_images(a: ScanImage, b: ScanImage) -> ScanImage:
    """Per-pixel ``a - b``; metadata copied from ``a``.

    Both images must share shape, pixel size and origin.
    """
    if not a.same_geometry(b):
        raise GeometryError(
            "image geometry mismatch: "
            f"{a.counts.shape}/{a.pixel_size}/{a.origin} vs "
            f"{b.counts.shape}/{b.pixel_size}/{b.origin}"
        )
    return a.with_counts(a.counts - b.counts)


def image_moments(img: ScanImage, roi: tuple[int, int, int, int] | None = None) -> dict:
    """Mean, population standard deviation and sum of pixel values in a region.

    ``roi`` is (row0, row1, col0, col1), half-open, in pixel indices; ``None``
    means the whole image.
    """
    if roi is None:
        roi = (0, img.height, 0, img.width)
    r0, r1, c0, c1 = (int(v) for v in roi)
    if not (0 <= r0 < r1 <= img.height and 0 <= c0 < c1 <= img.width):
        raise GeometryError(f"roi {roi} empty or outside a {img.height}x{img.width} image")
    block = img.counts[r0:r1, c0:c1]
    return {
        "mean": float(block.mean()),
        "std": float(block.std()),
        "sum": float(block.sum()),
    }


# ---------------------------------------------------------------------------
# Serialization: binary raster with JSON header, and plain CSV
# ---------------------------------------------------------------------------

_MAGIC = b"IONGRID-SCAN-1\n"


def save_scan(img: ScanImage, path) -> None:
    """Write a scan as a one-line JSON header followed by raw float64 pixels."""
    header = {
        "width": img.width,
        "height": img.height,
        "pixel_size_nm": img.pixel_size,
        "dwell_s": img.dwell,
        "origin_nm": list(img.origin),
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(img.counts, dtype=np.float64).tobytes())


def load_scan(path) -> ScanImage:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise GeometryError(f"{path}: not a scan file")
        header = json.loads(fh.readline().decode("utf-8"))
        n = header["width"] * header["height"]
        data = np.frombuffer(fh.read(8 * n), dtype=np.float64).reshape(
            header["height"], header["width"]
        )
    return ScanImage(
        counts=data,
        pixel_size=header["pixel_size_nm"],
        dwell=header["dwell_s"],
        origin=tuple(header["origin_nm"]),
    )


def save_scan_csv(img: ScanImage, path) -> None:
    """CSV raster with metadata comment lines; lossless via repr precision."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# pixel_size_nm={img.pixel_size!r}\n")
        fh.write(f"# dwell_s={img.dwell!r}\n")
        fh.write(f"# origin_nm={img.origin[0]!r},{img.origin[1]!r}\n")
        writer = csv.writer(fh)
        for row in img.counts:
            writer.writerow([repr(float(v)) for v in row])


def load_scan_csv(path) -> ScanImage:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                meta[key] = value
            else:
                rows.append([float(v) for v in line.split(",")])
    origin = tuple(float(v) for v in meta.get("origin_nm", "0,0").split(","))
    return ScanImage(
        counts=np.array(rows, dtype=float),
        pixel_size=float(meta.get("pixel_size_nm", 25.0)),
        dwell=float(meta.get("dwell_s", 6e-3)),
        origin=origin,
    )
