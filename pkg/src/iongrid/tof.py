"""Time-of-flight kinematics for species identification.

Models the field-free drift from trap to detector: an ion of mass m and
charge q accelerated through a potential U reaches the detector at
t = L * sqrt(m / (2 q U)).  The acceleration region inside the endcap bore
is deliberately not modeled, so absolute arrival times are ideal-drift
values; orderings and mass/charge/energy/distance scalings are exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import atomic_mass, elementary_charge

__all__ = [
    "TofEvent",
    "SpeciesTable",
    "DEFAULT_SPECIES",
    "drift_time",
    "classify_species",
    "histogram_summary",
    "write_events_csv",
    "write_histogram_csv",
]


@dataclass(frozen=True)
class TofEvent:
    """One detector arrival: time in seconds, optional species label."""

    arrival_time: float
    species: str | None = None

    def __post_init__(self):
        if not self.arrival_time > 0:
            raise ValueError("arrival_time must be positive")


@dataclass(frozen=True)
class SpeciesTable:
    """Candidate species as (name, mass amu, charge e) entries.

    Mass numbers are used for the default isotopes so that time ratios like
    t_Pr / t_Ca = sqrt(141 / 40) are exact.
    """

    entries: tuple[tuple[str, float, int], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("species table must not be empty")
        for name, mass, charge in self.entries:
            if not mass > 0:
                raise ValueError(f"{name}: mass must be positive")
            if not charge >= 1:
                raise ValueError(f"{name}: charge must be >= 1")


DEFAULT_SPECIES = SpeciesTable(entries=(("Pr", 141.0, 1), ("Ca", 40.0, 1)))


def drift_time(mass_amu: float, charge_e: float, energy_kev: float,
               distance_m: float) -> float:
    """Ideal field-free drift time in seconds.

    ``energy_kev`` is the extraction potential in kV; the kinetic energy is
    charge_e * energy_kev keV.
    """
    if not (mass_amu > 0 and charge_e > 0 and energy_kev > 0 and distance_m > 0):
        raise ValueError("mass, charge, energy and distance must all be positive")
    kinetic_j = charge_e * energy_kev * 1e3 * elementary_charge
    return distance_m * math.sqrt(mass_amu * atomic_mass / (2.0 * kinetic_j))


def classify_species(event: TofEvent, table: SpeciesTable, energy_kev: float,
                     distance_m: float, tolerance_s: float) -> str:
    """Label an event by the nearest predicted drift time within tolerance.

    Returns the species name, or ``"unknown"`` if no prediction is close
    enough.
    """
    if not tolerance_s > 0:
        raise ValueError("tolerance must be positive")
    best_name, best_err = "unknown", math.inf
    for name, mass, charge in table.entries:
        err = abs(event.arrival_time - drift_time(mass, charge, energy_kev, distance_m))
        if err < best_err:
            best_name, best_err = name, err
    return best_name if best_err <= tolerance_s else "unknown"


def histogram_summary(times, bin_width_s: float) -> dict:
    """Bin arrival times and summarize mean and FWHM.

    The FWHM comes from linear interpolation across the half-maximum
    crossings of the binned profile, which is how a histogram figure is
    read; a single occupied bin gives 0.
    """
    t = np.asarray([e.arrival_time if isinstance(e, TofEvent) else e for e in times],
                   dtype=float)
    if t.size == 0:
        raise ValueError("need at least one event")
    if not bin_width_s > 0:
        raise ValueError("bin width must be positive")
    lo, hi = t.min(), t.max()
    nbins = max(1, int(math.ceil((hi - lo) / bin_width_s)))
    edges = lo + bin_width_s * np.arange(nbins + 1)
    edges[-1] = max(edges[-1], hi)  # guard rounding at the top edge
    counts, edges = np.histogram(t, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return {
        "bin_centers": centers,
        "counts": counts,
        "mean": float(t.mean()),
        "fwhm": _fwhm(centers, counts.astype(float), bin_width_s),
    }


def _fwhm(centers: np.ndarray, counts: np.ndarray, bin_width: float) -> float:
    peak = counts.max()
    if peak <= 0:
        return 0.0
    half = peak / 2.0
    above = np.flatnonzero(counts >= half)
    i0, i1 = above[0], above[-1]
    if i0 == i1:
        return 0.0
    # interpolate the crossings on the rising and falling flanks
    if i0 == 0:
        left = centers[0]
    else:
        f = (half - counts[i0 - 1]) / (counts[i0] - counts[i0 - 1])
        left = centers[i0 - 1] + f * bin_width
    if i1 == len(counts) - 1:
        right = centers[-1]
    else:
        f = (counts[i1] - half) / (counts[i1] - counts[i1 + 1])
        right = centers[i1] + f * bin_width
    return float(right - left)


def write_events_csv(events, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "label"])
        for e in events:
            writer.writerow([repr(e.arrival_time), e.species or ""])


def write_histogram_csv(summary: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center_s", "count"])
        for c, n in zip(summary["bin_centers"], summary["counts"]):
            writer.writerow([repr(float(c)), int(n)])
