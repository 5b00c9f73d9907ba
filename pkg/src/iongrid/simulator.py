"""Forward model of the implantation pipeline.

Ions are shot at a 12-spot dot grid (pitch 2 um); each lands at its nominal
spot center plus isotropic Gaussian scatter combining the beam waist and
lattice straggle.  A furnace anneal then activates each implanted ion with
some yield, may lose it to surface migration, and may displace it slightly;
native Pr3+ background emitters populate the crystal volume and an anneal
can make isolated natives appear or vanish.  Scans are synthesized by
summing, over the three canonical polarizations, each active emitter's
site-dependent excitation efficiency times the confocal PSF, plus a flat
background, with per-pixel Poisson photon statistics.

Calibration convention: ``brightness_per_ion`` is the total integrated
single-ion signal summed over the three canonical polarizations, which the
site-efficiency sum rule makes independent of the site orientation.  The
per-polarization contribution is brightness * efficiency(site, pol) times a
unit-integral PSF.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ScanImage, rng_from_seed
from .optics import PsfModel, Polarization, canonical_polarizations, excitation_efficiency

__all__ = [
    "ImplantPlan",
    "Emitter",
    "EmitterMap",
    "AnnealModel",
    "ScanGeometry",
    "build_plan",
    "implant",
    "anneal",
    "sample_native_background",
    "render_expected",
    "render_scan",
    "write_emitters_csv",
    "read_emitters_csv",
]

DEFAULT_STRAGGLE_NM = 3.0  # modeling assumption for 5.9 keV, ~6 nm depth


@dataclass(frozen=True)
class ImplantPlan:
    """Dot-grid implantation plan.

    ``spot_overrides`` maps 1-based spot ids to ion budgets that differ from
    ``ions_per_spot`` (area B ships spot 12 with 2 ions instead of 4).
    """

    origin: tuple[float, float] = (0.0, 0.0)
    pitch: float = 2000.0
    rows: int = 3
    cols: int = 4
    ions_per_spot: int = 4
    spot_overrides: dict = field(default_factory=dict)
    energy_kev: float = 5.9
    depth_nm: float = 6.0

    def __post_init__(self):
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")
        if self.ions_per_spot < 1:
            raise ValueError("ions_per_spot must be >= 1")

    @property
    def n_spots(self) -> int:
        return self.rows * self.cols

    def spot_centers(self) -> np.ndarray:
        """Nominal spot centers, shape (n_spots, 2), spot id = index + 1."""
        ox, oy = self.origin
        centers = [
            (ox + c * self.pitch, oy + r * self.pitch)
            for r in range(self.rows)
            for c in range(self.cols)
        ]
        return np.array(centers, dtype=float)

    def ions_for_spot(self, spot_id: int) -> int:
        return int(self.spot_overrides.get(spot_id, self.ions_per_spot))

    def total_ions(self) -> int:
        return sum(self.ions_for_spot(s) for s in range(1, self.n_spots + 1))

    def field_of_view(self, margin: float | None = None) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) rectangle enclosing the grid with a margin
        (default half a pitch)."""
        if margin is None:
            margin = self.pitch / 2.0
        centers = self.spot_centers()
        return (
            float(centers[:, 0].min() - margin),
            float(centers[:, 1].min() - margin),
            float(centers[:, 0].max() + margin),
            float(centers[:, 1].max() + margin),
        )


def build_plan(area: str = "B", **overrides) -> ImplantPlan:
    """Plan for area 'A' (12 x 8 ions) or 'B' (11 x 4 + spot 12 with 2)."""
    area = area.upper()
    if area == "A":
        defaults = dict(ions_per_spot=8)
    elif area == "B":
        defaults = dict(ions_per_spot=4, spot_overrides={12: 2})
    else:
        raise ValueError(f"area must be 'A' or 'B', got {area!r}")
    defaults.update(overrides)
    return ImplantPlan(**defaults)


@dataclass(frozen=True)
class Emitter:
    """One Pr3+ emitter: in-plane position (nm), site orientation id,
    activity flag and provenance ('spot-<n>' or 'native')."""

    position: tuple[float, float]
    site: int
    active: bool
    provenance: str

    def __post_init__(self):
        if self.site not in (1, 2, 3, 4, 5, 6):
            raise ValueError(f"site id must be 1..6, got {self.site!r}")
        object.__setattr__(self, "position",
                           (float(self.position[0]), float(self.position[1])))

    @property
    def spot_id(self) -> int | None:
        if self.provenance.startswith("spot-"):
            return int(self.provenance.split("-", 1)[1])
        return None


@dataclass(frozen=True)
class EmitterMap:
    """Emitters within a field-of-view rectangle (x0, y0, x1, y1)."""

    emitters: tuple[Emitter, ...]
    fov: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        x0, y0, x1, y1 = self.fov
        for e in self.emitters:
            x, y = e.position
            if not (x0 <= x <= x1 and y0 <= y <= y1):
                raise ValueError(f"emitter at {e.position} outside fov {self.fov}")

    def positions(self) -> np.ndarray:
        if not self.emitters:
            return np.empty((0, 2))
        return np.array([e.position for e in self.emitters])

    def active(self) -> tuple[Emitter, ...]:
        return tuple(e for e in self.emitters if e.active)

    def active_count_by_spot(self, n_spots: int) -> dict[int, int]:
        counts = {s: 0 for s in range(1, n_spots + 1)}
        for e in self.emitters:
            if e.active and e.spot_id is not None:
                counts[e.spot_id] += 1
        return counts

    def merged_with(self, other: "EmitterMap") -> "EmitterMap":
        return EmitterMap(self.emitters + other.emitters, self.fov)


def _clip_to_fov(pos: np.ndarray, fov) -> np.ndarray:
    # scatter tails are tiny against the fov margin; clamping keeps the
    # containment invariant without biasing anything measurable
    x0, y0, x1, y1 = fov
    return np.clip(pos, [x0, y0], [x1, y1])


def implant(plan: ImplantPlan, beam_sigma: float, straggle_sigma: float = DEFAULT_STRAGGLE_NM,
            seed: int = 0, fov=None) -> EmitterMap:
    """Scatter each planned ion around its spot center; all start inactive.

    In-plane offsets are isotropic Gaussian with sigma
    sqrt(beam_sigma^2 + straggle_sigma^2); site orientations are uniform
    over the six possibilities.
    """
    if beam_sigma < 0 or straggle_sigma < 0:
        raise ValueError("sigmas must be non-negative")
    rng = rng_from_seed(seed)
    scatter = math.hypot(beam_sigma, straggle_sigma)
    if fov is None:
        fov = plan.field_of_view()
    centers = plan.spot_centers()
    emitters = []
    for spot_id in range(1, plan.n_spots + 1):
        n = plan.ions_for_spot(spot_id)
        offsets = rng.normal(0.0, scatter, size=(n, 2)) if scatter > 0 else np.zeros((n, 2))
        sites = rng.integers(1, 7, size=n)
        pos = _clip_to_fov(centers[spot_id - 1] + offsets, fov)
        for k in range(n):
            emitters.append(Emitter(
                position=tuple(pos[k]),
                site=int(sites[k]),
                active=False,
                provenance=f"spot-{spot_id}",
            ))
    return EmitterMap(emitters=tuple(emitters), fov=tuple(fov))


@dataclass(frozen=True)
class AnnealModel:
    """Single-shot anneal phenomenology.

    Inactive implanted ions activate with probability ``activation_yield``.
    Active implanted ions are lost with probability ``migration_loss``,
    otherwise displaced by an isotropic Gaussian of ``migration_sigma`` nm.
    Native emitters appear or vanish at ``native_event_rate`` events per
    square micron per anneal (default: one event per 100 um^2).
    """

    activation_yield: float
    migration_loss: float = 0.0
    migration_sigma: float = 0.0
    native_event_rate: float = 0.01

    def __post_init__(self):
        for name in ("activation_yield", "migration_loss"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.migration_sigma < 0 or self.native_event_rate < 0:
            raise ValueError("migration_sigma and native_event_rate must be >= 0")


def anneal(emap: EmitterMap, model: AnnealModel, seed: int = 0) -> EmitterMap:
    """Apply one anneal and return the resulting emitter map.

    The number of active implanted emitters after annealing a fresh implant
    is binomial(n_planned, activation_yield * (1 - migration_loss)).
    """
    rng = rng_from_seed(seed)
    out = []
    for e in emap.emitters:
        if e.spot_id is None:
            out.append(e)  # natives handled below
            continue
        active = e.active
        if not active:
            active = bool(rng.random() < model.activation_yield)
            if not active:
                out.append(e)
                continue
        # an activated (or already active) ion can migrate away or shift
        if rng.random() < model.migration_loss:
            out.append(replace(e, active=False))
            continue
        pos = np.array(e.position)
        if model.migration_sigma > 0:
            pos = pos + rng.normal(0.0, model.migration_sigma, size=2)
        pos = _clip_to_fov(pos, emap.fov)
        out.append(replace(e, position=tuple(pos), active=True))

    out = _native_events(out, emap.fov, model.native_event_rate, rng)
    return EmitterMap(emitters=tuple(out), fov=emap.fov)


def _native_events(emitters: list, fov, rate_per_um2: float, rng) -> list:
    """Random appear/vanish events among native emitters during an anneal."""
    x0, y0, x1, y1 = fov
    area_um2 = (x1 - x0) * (y1 - y0) / 1e6
    n_events = int(rng.poisson(rate_per_um2 * area_um2)) if rate_per_um2 > 0 else 0
    for _ in range(n_events):
        if rng.random() < 0.5:
            pos = (rng.uniform(x0, x1), rng.uniform(y0, y1))
            emitters.append(Emitter(position=pos, site=int(rng.integers(1, 7)),
                                    active=True, provenance="native"))
        else:
            native_idx = [i for i, e in enumerate(emitters)
                          if e.provenance == "native" and e.active]
            if native_idx:
                i = native_idx[int(rng.integers(len(native_idx)))]
                emitters[i] = replace(emitters[i], active=False)
    return emitters


def sample_native_background(fov, density_cm3: float = 6e11,
                             depth_of_field_nm: float = 1000.0,
                             seed: int = 0) -> EmitterMap:
    """Poisson-sample native Pr3+ emitters over the field of view.

    The expected count is density * area * depth of field (1 um default,
    the depth over which natives remain in focus); positions and sites are
    uniform, all active.
    """
    if density_cm3 < 0:
        raise ValueError("density must be >= 0")
    x0, y0, x1, y1 = fov
    area_nm2 = (x1 - x0) * (y1 - y0)
    mean = density_cm3 * area_nm2 * depth_of_field_nm * 1e-21  # cm^-3 * nm^3
    rng = rng_from_seed(seed)
    n = int(rng.poisson(mean))
    xs = rng.uniform(x0, x1, size=n)
    ys = rng.uniform(y0, y1, size=n)
    sites = rng.integers(1, 7, size=n)
    emitters = tuple(
        Emitter(position=(xs[k], ys[k]), site=int(sites[k]), active=True,
                provenance="native")
        for k in range(n)
    )
    return EmitterMap(emitters=emitters, fov=tuple(fov))


# ---------------------------------------------------------------------------
# Scan rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanGeometry:
    """Raster geometry and acquisition settings for rendered scans."""

    origin: tuple[float, float]
    width: int
    height: int
    pixel_size: float = 25.0
    dwell: float = 6e-3
    background_rate: float = 20.0   # counts per pixel per dwell
    psf: PsfModel = field(default_factory=PsfModel)
    efficiency_exponent: int = 2
    window_radii: float = 8.0       # PSF evaluation cutoff in units of c

    @classmethod
    def for_fov(cls, fov, pixel_size: float = 25.0, **kwargs) -> "ScanGeometry":
        """Geometry whose pixel centers tile the field of view."""
        x0, y0, x1, y1 = fov
        width = int(math.floor((x1 - x0) / pixel_size)) + 1
        height = int(math.floor((y1 - y0) / pixel_size)) + 1
        return cls(origin=(x0, y0), width=width, height=height,
                   pixel_size=pixel_size, **kwargs)


def render_expected(emap: EmitterMap, geom: ScanGeometry, brightness_per_ion: float,
                    polarizations: tuple[Polarization, ...] | None = None) -> ScanImage:
    """Noiseless expected-count image (float pixels).

    Each active emitter contributes, per polarization, brightness times its
    excitation efficiency times a unit-integral pixelized PSF; the three
    canonical polarizations together integrate to ``brightness_per_ion``
    regardless of site orientation.
    """
    if not brightness_per_ion > 0:
        raise ValueError("brightness_per_ion must be positive")
    if polarizations is None:
        polarizations = canonical_polarizations()
    c = geom.psf.c
    px = geom.pixel_size
    unit_peak = px * px / (2.0 * math.pi * c * c)  # unit-integral PSF peak, per pixel
    xs = geom.origin[0] + px * np.arange(geom.width)
    ys = geom.origin[1] + px * np.arange(geom.height)
    image = np.full((geom.height, geom.width), float(geom.background_rate))
    cut = geom.window_radii * c

    for e in emap.emitters:
        if not e.active:
            continue
        # the PSF factor is identical across polarizations, so the per-pol
        # contributions C * eff_p * PSF fold into one pass with the summed
        # efficiency (canonical three: sum = 1 for every site)
        eff_total = sum(excitation_efficiency(e.site, pol, geom.efficiency_exponent)
                        for pol in polarizations)
        weight = brightness_per_ion * eff_total
        ex, ey = e.position
        j0 = max(0, int(math.ceil((ex - cut - geom.origin[0]) / px)))
        j1 = min(geom.width - 1, int(math.floor((ex + cut - geom.origin[0]) / px)))
        i0 = max(0, int(math.ceil((ey - cut - geom.origin[1]) / px)))
        i1 = min(geom.height - 1, int(math.floor((ey + cut - geom.origin[1]) / px)))
        if j1 < j0 or i1 < i0:
            continue
        dx = xs[j0:j1 + 1] - ex
        dy = ys[i0:i1 + 1] - ey
        r2 = dy[:, None] ** 2 + dx[None, :] ** 2
        image[i0:i1 + 1, j0:j1 + 1] += (
            weight * unit_peak * np.exp(-r2 / (2.0 * c * c))
        )
    return ScanImage(counts=image, pixel_size=px, dwell=geom.dwell,
                     origin=geom.origin)


def render_scan(emap: EmitterMap, geom: ScanGeometry, brightness_per_ion: float,
                seed: int = 0, noiseless: bool = False,
                polarizations: tuple[Polarization, ...] | None = None) -> ScanImage:
    """Photon-count scan: Poisson draws around the expected image.

    ``noiseless`` returns the expected image itself (float pixels), which is
    what linearity and calibration tests consume.
    """
    expected = render_expected(emap, geom, brightness_per_ion, polarizations)
    if noiseless:
        return expected
    rng = rng_from_seed(seed)
    counts = rng.poisson(expected.counts).astype(float)
    return expected.with_counts(counts)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_emitters_csv(emap: EmitterMap, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        x0, y0, x1, y1 = emap.fov
        fh.write(f"# fov_nm={x0!r},{y0!r},{x1!r},{y1!r}\n")
        writer.writerow(["x_nm", "y_nm", "site", "active", "provenance"])
        for e in emap.emitters:
            writer.writerow([repr(e.position[0]), repr(e.position[1]),
                             e.site, int(e.active), e.provenance])


def read_emitters_csv(path) -> EmitterMap:
    emitters = []
    fov = None
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                if key == "fov_nm":
                    fov = tuple(float(v) for v in value.split(","))
                continue
            if line.startswith("x_nm"):
                continue
            x, y, site, active, provenance = line.split(",")
            emitters.append(Emitter(position=(float(x), float(y)), site=int(site),
                                    active=bool(int(active)), provenance=provenance))
    if fov is None:
        raise ValueError(f"{path}: missing fov metadata line")
    return EmitterMap(emitters=tuple(emitters), fov=fov)
