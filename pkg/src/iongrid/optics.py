"""Crystal-field optics of Pr3+ substituting Y3+ in YAG.

The dodecahedral Y3+ site has D2 point symmetry and occurs in six
magnetically inequivalent orientations.  Their local z axes take the three
cube axis directions [001], [100], [010], each twice; the local x and y axes
are the two in-plane <110>-type directions of the pair.  Electric-dipole
transitions between the four irreducible representations G1..G4 are polarized
strictly along one local axis (selection-rule table below).

For excitation propagating along [111], linear polarization lives in the
transverse plane spanned by e1 = (1,-1,0)/sqrt(2) and e2 = (1,1,-2)/sqrt(6).
The first excitation step couples to the local z dipole, so the efficiency is
|E . z_axis|^2 (an |E . z|^4 variant is selectable for saturation studies;
it preserves the dark-site structure).  At the canonical polarization angles
{0, 60, 120} degrees each angle darkens exactly the one site pair whose cube
z axis projects perpendicular to E, the four remaining sites are excited at
exactly 1/2, and each site's efficiency summed over the three angles is
exactly 1, which is what makes site-blind ion quantification possible.

The confocal point-spread function is an isotropic 2D Gaussian of width
c = 115 nm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import require_unit, unit_vector

__all__ = [
    "SiteOrientation",
    "Polarization",
    "PsfModel",
    "SITE_IDS",
    "GROUND_LEVELS",
    "CANONICAL_ANGLES",
    "site_axes",
    "transverse_basis",
    "polarization_vector",
    "canonical_polarizations",
    "excitation_efficiency",
    "transition_axis",
    "psf_intensity",
    "psf_integral",
    "tables_as_json",
]

SITE_IDS = (1, 2, 3, 4, 5, 6)

# Populated ground-state crystal-field sublevels: (representation, energy cm^-1).
GROUND_LEVELS = (("G3", 0.0), ("G1", 19.0), ("G4", 50.0))

# Polarization angles (radians from e1) that realize the threefold dark-site
# symmetry for a [111]-cut crystal.
CANONICAL_ANGLES = (0.0, math.pi / 3.0, 2.0 * math.pi / 3.0)


@dataclass(frozen=True)
class SiteOrientation:
    """Local axes of one of the six dodecahedral site orientations."""

    id: int
    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_axis", require_unit(self.x_axis, "x_axis"))
        object.__setattr__(self, "y_axis", require_unit(self.y_axis, "y_axis"))
        object.__setattr__(self, "z_axis", require_unit(self.z_axis, "z_axis"))


_S2 = 1.0 / math.sqrt(2.0)

# Canonical site table.  Pairs {1,2}, {3,4}, {5,6} share the cube z axis
# [001], [100], [010]; partners swap the two in-plane <110> directions.
_SITE_TABLE = {
    1: ((_S2, _S2, 0.0), (_S2, -_S2, 0.0), (0.0, 0.0, 1.0)),
    2: ((_S2, -_S2, 0.0), (_S2, _S2, 0.0), (0.0, 0.0, 1.0)),
    3: ((0.0, _S2, _S2), (0.0, _S2, -_S2), (1.0, 0.0, 0.0)),
    4: ((0.0, _S2, -_S2), (0.0, _S2, _S2), (1.0, 0.0, 0.0)),
    5: ((_S2, 0.0, _S2), (_S2, 0.0, -_S2), (0.0, 1.0, 0.0)),
    6: ((_S2, 0.0, -_S2), (_S2, 0.0, _S2), (0.0, 1.0, 0.0)),
}


def site_axes(site_id: int) -> SiteOrientation:
    """Return the canonical axes for site id 1..6."""
    try:
        x, y, z = _SITE_TABLE[int(site_id)]
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"site id must be 1..6, got {site_id!r}") from None
    return SiteOrientation(
        id=int(site_id),
        x_axis=np.array(x),
        y_axis=np.array(y),
        z_axis=np.array(z),
    )


# ---------------------------------------------------------------------------
# Polarization
# ---------------------------------------------------------------------------

_PROP_111 = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
_E1_111 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
_E2_111 = np.array([1.0, 1.0, -2.0]) / math.sqrt(6.0)


@dataclass(frozen=True)
class Polarization:
    """Linear polarization at ``angle`` radians in the transverse plane.

    ``angle`` is measured from the first transverse basis vector; for the
    default [111] propagation that is e1 = (1,-1,0)/sqrt(2).
    """

    angle: float = 0.0
    propagation: tuple[float, float, float] = (_PROP_111[0], _PROP_111[1], _PROP_111[2])


def transverse_basis(propagation) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis (e1, e2) of the plane perpendicular to ``propagation``.

    The [111] direction gets the canonical pair e1 = (1,-1,0)/sqrt(2),
    e2 = (1,1,-2)/sqrt(6); any other direction gets a deterministic
    Gram-Schmidt construction.
    """
    p = unit_vector(propagation)
    if np.allclose(p, _PROP_111, atol=1e-12):
        return _E1_111.copy(), _E2_111.copy()
    # reference axis least aligned with p keeps the construction stable
    ref = np.zeros(3)
    ref[int(np.argmin(np.abs(p)))] = 1.0
    e1 = unit_vector(np.cross(ref, p))
    e2 = np.cross(p, e1)
    return e1, e2


def polarization_vector(pol: Polarization) -> np.ndarray:
    """Unit electric-field direction E(angle) = cos(angle) e1 + sin(angle) e2."""
    e1, e2 = transverse_basis(pol.propagation)
    return math.cos(pol.angle) * e1 + math.sin(pol.angle) * e2


def canonical_polarizations() -> tuple[Polarization, Polarization, Polarization]:
    """The three measurement polarizations at 0, 60 and 120 degrees."""
    return tuple(Polarization(angle=a) for a in CANONICAL_ANGLES)


def excitation_efficiency(site: SiteOrientation | int, pol: Polarization,
                          exponent: int = 2) -> float:
    """Excitation efficiency |E . z_axis|^exponent of a site, in [0, 1].

    ``exponent`` 2 models a rate-limiting first z-dipole step (default);
    4 models both two-photon steps projecting on z.
    """
    if isinstance(site, int):
        site = site_axes(site)
    if exponent not in (2, 4):
        raise ValueError(f"exponent must be 2 or 4, got {exponent!r}")
    proj = float(np.dot(polarization_vector(pol), site.z_axis))
    return proj ** exponent


# ---------------------------------------------------------------------------
# Selection rules
# ---------------------------------------------------------------------------

# Electric-dipole polarization axis for transitions between the D2
# representations; diagonal entries are forbidden.
_RULES = {
    frozenset({"G1", "G2"}): "y",
    frozenset({"G1", "G3"}): "z",
    frozenset({"G1", "G4"}): "x",
    frozenset({"G2", "G3"}): "x",
    frozenset({"G2", "G4"}): "z",
    frozenset({"G3", "G4"}): "y",
}


def _rep_label(rep) -> str:
    if isinstance(rep, int):
        rep = f"G{rep}"
    rep = str(rep).upper().replace("Γ", "G")
    if rep not in ("G1", "G2", "G3", "G4"):
        raise ValueError(f"unknown representation label {rep!r}")
    return rep


def transition_axis(rep_from, rep_to) -> str:
    """Local polarization axis ('x', 'y', 'z') of an electric-dipole
    transition between two representations, or 'forbidden' on the diagonal."""
    a, b = _rep_label(rep_from), _rep_label(rep_to)
    if a == b:
        return "forbidden"
    return _RULES[frozenset({a, b})]


# ---------------------------------------------------------------------------
# Point-spread function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsfModel:
    """Isotropic 2D Gaussian confocal response of width ``c`` nm."""

    c: float = 115.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("PSF width c must be positive")


def psf_intensity(dx, dy, model: PsfModel, amplitude: float, rotation: float = 0.0,
                  offset: float = 0.0):
    """Gaussian spot intensity at displacement (dx, dy) nm from the emitter.

    A * exp(-(u^2 + v^2) / (2 c^2)) + B with (u, v) the displacement rotated
    by ``rotation``.  With a single width the rotation leaves the value
    invariant; the parameter is kept for fit-model fidelity.
    """
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    cb, sb = math.cos(rotation), math.sin(rotation)
    u = cb * dy + sb * dx
    v = cb * dx - sb * dy
    r2 = u * u + v * v
    return amplitude * np.exp(-r2 / (2.0 * model.c ** 2)) + offset


def psf_integral(model: PsfModel, amplitude: float) -> float:
    """Analytic plane integral of the offset-free PSF: 2 pi c^2 A (nm^2 counts)."""
    return 2.0 * math.pi * model.c ** 2 * amplitude


# ---------------------------------------------------------------------------
# Documentation export
# ---------------------------------------------------------------------------

def tables_as_json() -> str:
    """Site axes and selection rules as a JSON document."""
    sites = {}
    for sid in SITE_IDS:
        s = site_axes(sid)
        sites[str(sid)] = {
            "x": s.x_axis.tolist(),
            "y": s.y_axis.tolist(),
            "z": s.z_axis.tolist(),
        }
    reps = ("G1", "G2", "G3", "G4")
    rules = {a: {b: transition_axis(a, b) for b in reps} for a in reps}
    levels = [{"representation": r, "energy_cm1": e} for r, e in GROUND_LEVELS]
    return json.dumps(
        {"sites": sites, "selection_rules": rules, "ground_levels": levels},
        indent=2,
    )
