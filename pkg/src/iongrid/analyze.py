"""Inverse pipeline: from scans to integer ion numbers.

Net spot fluorescence is a circular-aperture sum minus the per-pixel mean of
a surrounding annulus times the aperture pixel count, which cancels any flat
background exactly.  Dividing by the single-ion calibration unit C gives a
fractional ion number; rounding (half away from zero) gives the integer
count.  Per-emitter positions come from fixed-width 2D Gaussian fits, with a
multi-component variant for spots holding several ions; the PSF width itself
is estimated by averaging free-width fits of isolated single ions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from .core import GeometryError, ScanImage, subtract_images
from .optics import PsfModel, psf_intensity

__all__ = [
    "ApertureSpec",
    "SpotQuant",
    "GaussFit",
    "MultiGaussFit",
    "AnnealDiffReport",
    "round_half_away",
    "default_aperture",
    "spot_net_counts",
    "quantify_spot",
    "calibrate_unit",
    "fit_gaussian2d",
    "fit_multi_gaussian",
    "estimate_psf_width",
    "register_shift",
    "anneal_diff_report",
    "write_quant_csv",
    "write_changes_csv",
]

# damped least-squares convergence contract shared by all fits
FIT_FTOL = 1e-10
FIT_XTOL_NM = 1e-6
FIT_MAX_ITER = 200


def round_half_away(x: float) -> int:
    """Nearest integer with halves rounded away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


# ---------------------------------------------------------------------------
# Aperture photometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ApertureSpec:
    """Circular signal aperture with an annulus for local background."""

    center: tuple[float, float]
    r_crop: float
    r_annulus_in: float
    r_annulus_out: float

    def __post_init__(self):
        if not (0 < self.r_crop <= self.r_annulus_in < self.r_annulus_out):
            raise ValueError(
                "need 0 < r_crop <= r_annulus_in < r_annulus_out, got "
                f"{self.r_crop}, {self.r_annulus_in}, {self.r_annulus_out}"
            )


def default_aperture(center, c: float = 115.0) -> ApertureSpec:
    """Radii scaled to the PSF width: crop 3c, annulus [4c, 6c]."""
    return ApertureSpec(center=(float(center[0]), float(center[1])),
                        r_crop=3.0 * c, r_annulus_in=4.0 * c, r_annulus_out=6.0 * c)


def _aperture_masks(img: ScanImage, ap: ApertureSpec):
    cx, cy = ap.center
    x0, y0 = img.origin
    half = img.pixel_size / 2.0
    lo_x, hi_x = x0 - half, x0 + (img.width - 1) * img.pixel_size + half
    lo_y, hi_y = y0 - half, y0 + (img.height - 1) * img.pixel_size + half
    if (cx - ap.r_annulus_out < lo_x or cx + ap.r_annulus_out > hi_x
            or cy - ap.r_annulus_out < lo_y or cy + ap.r_annulus_out > hi_y):
        raise GeometryError(
            f"aperture at {ap.center} with outer radius {ap.r_annulus_out} "
            "exceeds the image bounds"
        )
    dx = img.pixel_x() - cx
    dy = img.pixel_y() - cy
    r2 = dy[:, None] ** 2 + dx[None, :] ** 2
    inner = r2 <= ap.r_crop ** 2
    annulus = (r2 >= ap.r_annulus_in ** 2) & (r2 <= ap.r_annulus_out ** 2)
    return inner, annulus


def spot_net_counts(img: ScanImage, ap: ApertureSpec) -> float:
    """Aperture sum minus annulus-mean background times the aperture size.

    Adding a constant offset to the whole image leaves the result unchanged.
    """
    inner, annulus = _aperture_masks(img, ap)
    n_in = int(inner.sum())
    if n_in == 0 or annulus.sum() == 0:
        raise GeometryError("aperture or annulus contains no pixels")
    background = float(img.counts[annulus].mean())
    return float(img.counts[inner].sum()) - background * n_in


# ---------------------------------------------------------------------------
# Quantification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpotQuant:
    """Net counts of one spot expressed as a (fractional and integer) number
    of single-ion units."""

    spot_id: int | None
    net_counts: float
    ions_fractional: float
    ions_rounded: int


def quantify_spot(net: float, unit: float, spot_id: int | None = None) -> SpotQuant:
    """Express net counts in single-ion units (net and unit share a scale)."""
    if not unit > 0:
        raise ValueError("calibration unit must be positive")
    fractional = net / unit
    return SpotQuant(
        spot_id=spot_id,
        net_counts=float(net),
        ions_fractional=float(fractional),
        ions_rounded=max(0, round_half_away(fractional)),
    )


def calibrate_unit(single_ion_nets) -> float:
    """Mean net counts over a set of known single-ion spots."""
    nets = [float(v) for v in single_ion_nets]
    if not nets:
        raise ValueError("calibration set must not be empty")
    return float(np.mean(nets))


# ---------------------------------------------------------------------------
# Gaussian fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussFit:
    """Result of a 2D Gaussian fit: A exp(-(u^2+v^2)/(2 c^2)) + B."""

    amplitude: float
    x0: float
    y0: float
    c: float
    beta: float
    offset: float
    residual_norm: float = math.nan
    converged: bool = False
    message: str = ""
    param_std: dict = field(default_factory=dict)


def _roi_view(img: ScanImage, roi):
    if roi is None:
        roi = (0, img.height, 0, img.width)
    r0, r1, c0, c1 = (int(v) for v in roi)
    if not (0 <= r0 < r1 <= img.height and 0 <= c0 < c1 <= img.width):
        raise GeometryError(f"roi {roi} outside a {img.height}x{img.width} image")
    if (r1 - r0) < 5 or (c1 - c0) < 5:
        raise GeometryError("fit roi must span at least 5x5 pixels")
    data = img.counts[r0:r1, c0:c1]
    xs = img.pixel_x()[c0:c1]
    ys = img.pixel_y()[r0:r1]
    return data, xs, ys


def _param_std(res, n_data: int) -> np.ndarray:
    """Per-parameter standard errors from the final Jacobian."""
    _, s, vt = np.linalg.svd(res.jac, full_matrices=False)
    s = np.where(s > s.max() * 1e-12, s, np.inf)
    cov = (vt.T / s ** 2) @ vt
    dof = max(n_data - res.x.size, 1)
    scale = 2.0 * res.cost / dof
    return np.sqrt(np.clip(np.diag(cov) * scale, 0.0, None))


def fit_gaussian2d(img: ScanImage, roi=None, init: GaussFit | None = None,
                   fixed_c: float | None = None) -> GaussFit:
    """Least-squares 2D Gaussian fit over a region of interest.

    With ``fixed_c`` the width is frozen and only (A, x0, y0, B) vary; the
    rotation angle is carried through from the initialization but is not a
    free parameter (the model is isotropic, so it has no gradient).  A flat
    or empty region yields a non-converged result rather than an exception.
    """
    data, xs, ys = _roi_view(img, roi)
    flat = data.ravel()
    span = float(flat.max() - flat.min())
    beta = init.beta if init is not None else 0.0

    if span == 0.0:
        return GaussFit(amplitude=0.0, x0=float(xs.mean()), y0=float(ys.mean()),
                        c=fixed_c if fixed_c else math.nan, beta=beta,
                        offset=float(flat[0]) if flat.size else 0.0,
                        converged=False, message="region is constant; nothing to fit")

    if init is None:
        imax = int(np.argmax(data))
        iy, ix = np.unravel_index(imax, data.shape)
        init = GaussFit(
            amplitude=span,
            x0=float(xs[ix]), y0=float(ys[iy]),
            c=fixed_c if fixed_c else 115.0,
            beta=0.0,
            offset=float(np.median(flat)),
        )

    dxg, dyg = np.meshgrid(xs, ys)

    if fixed_c is None:
        p0 = [init.amplitude, init.x0, init.y0, init.c, init.offset]

        def residuals(p):
            a, x0, y0, c, b = p
            model = psf_intensity(dxg - x0, dyg - y0, PsfModel(c=max(abs(c), 1e-6)),
                                  a, beta, b)
            return (model - data).ravel()
    else:
        model_psf = PsfModel(c=float(fixed_c))
        p0 = [init.amplitude, init.x0, init.y0, init.offset]

        def residuals(p):
            a, x0, y0, b = p
            model = psf_intensity(dxg - x0, dyg - y0, model_psf, a, beta, b)
            return (model - data).ravel()

    # xtol 1e-10 realizes the step-norm part of the convergence contract:
    # at nm-scale parameters it stops on steps well below FIT_XTOL_NM
    res = least_squares(residuals, p0, method="lm", ftol=FIT_FTOL,
                        xtol=1e-10, max_nfev=FIT_MAX_ITER * (len(p0) + 1))
    std = _param_std(res, flat.size)
    if fixed_c is None:
        a, x0, y0, c, b = res.x
        c = abs(float(c))
        names = ("amplitude", "x0", "y0", "c", "offset")
    else:
        a, x0, y0, b = res.x
        c = float(fixed_c)
        names = ("amplitude", "x0", "y0", "offset")
    converged = bool(res.success) and a > 0 and c > 0
    message = res.message if converged else (res.message + "; degenerate amplitude"
                                             if a <= 0 else res.message)
    return GaussFit(
        amplitude=float(a), x0=float(x0), y0=float(y0), c=c, beta=beta,
        offset=float(b), residual_norm=float(np.linalg.norm(res.fun)),
        converged=converged, message=message,
        param_std=dict(zip(names, std)),
    )


@dataclass(frozen=True)
class MultiGaussFit:
    """Shared-width multi-component fit: components sorted by (x, y)."""

    components: tuple[tuple[float, float, float], ...]  # (amplitude, x, y)
    offset: float
    c: float
    residual_norm: float
    converged: bool
    degenerate: bool
    message: str
    position_std: tuple[float, ...] = ()


def fit_multi_gaussian(img: ScanImage, roi, n: int, fixed_c: float) -> MultiGaussFit:
    """Fit ``n`` equal-width Gaussians with a shared flat offset.

    Components are initialized by brightest-pixel peeling: locate the
    maximum, subtract that component, repeat.  The fit is flagged degenerate
    when any component's positional uncertainty exceeds the smallest
    pairwise separation (merged components cannot be localized).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    data, xs, ys = _roi_view(img, roi)
    model_psf = PsfModel(c=float(fixed_c))
    dxg, dyg = np.meshgrid(xs, ys)

    # peeling initialization
    work = data.astype(float).copy()
    offset0 = float(np.median(work))
    work -= offset0
    comps = []
    for _ in range(n):
        iy, ix = np.unravel_index(int(np.argmax(work)), work.shape)
        a = max(float(work[iy, ix]), 1e-9)
        cx, cy = float(xs[ix]), float(ys[iy])
        comps.append((a, cx, cy))
        work -= np.asarray(psf_intensity(dxg - cx, dyg - cy, model_psf, a))

    p0 = np.concatenate([np.array(comps).ravel(), [offset0]])

    def residuals(p):
        model = np.full_like(data, p[-1], dtype=float)
        for k in range(n):
            a, cx, cy = p[3 * k: 3 * k + 3]
            model += np.asarray(psf_intensity(dxg - cx, dyg - cy, model_psf, a))
        return (model - data).ravel()

    res = least_squares(residuals, p0, method="lm", ftol=FIT_FTOL,
                        xtol=1e-10, max_nfev=FIT_MAX_ITER * (p0.size + 1))
    std = _param_std(res, data.size)

    fitted = [(float(res.x[3 * k]), float(res.x[3 * k + 1]), float(res.x[3 * k + 2]))
              for k in range(n)]
    pos_std = [float(math.hypot(std[3 * k + 1], std[3 * k + 2])) for k in range(n)]
    order = sorted(range(n), key=lambda k: (fitted[k][1], fitted[k][2]))
    fitted = [fitted[k] for k in order]
    pos_std = [pos_std[k] for k in order]

    degenerate = False
    if n > 1:
        min_sep = min(
            math.hypot(fitted[i][1] - fitted[j][1], fitted[i][2] - fitted[j][2])
            for i in range(n) for j in range(i + 1, n)
        )
        degenerate = any(s > min_sep for s in pos_std)

    return MultiGaussFit(
        components=tuple(fitted),
        offset=float(res.x[-1]),
        c=float(fixed_c),
        residual_norm=float(np.linalg.norm(res.fun)),
        converged=bool(res.success),
        degenerate=degenerate,
        message=res.message,
        position_std=tuple(pos_std),
    )


def estimate_psf_width(single_ion_rois) -> dict:
    """Average free-width Gaussian fit over isolated single-ion images.

    Failed fits are excluded from the mean and counted in the report.
    """
    rois = list(single_ion_rois)
    if not rois:
        raise ValueError("need at least one region")
    widths = []
    n_failed = 0
    for item in rois:
        img, roi = item if isinstance(item, tuple) else (item, None)
        fit = fit_gaussian2d(img, roi)
        if fit.converged:
            widths.append(fit.c)
        else:
            n_failed += 1
    if not widths:
        raise RuntimeError("every single-ion fit failed")
    return {
        "width_nm": float(np.mean(widths)),
        "n_used": len(widths),
        "n_failed": n_failed,
        "widths": widths,
    }


# ---------------------------------------------------------------------------
# Before/after comparison
# ---------------------------------------------------------------------------

def register_shift(a: ScanImage, b: ScanImage) -> tuple[int, int]:
    """Integer-pixel (row, col) shift aligning ``b`` to ``a`` by
    cross-correlation of mean-subtracted images."""
    fa = np.fft.rfft2(a.counts - a.counts.mean())
    fb = np.fft.rfft2(b.counts - b.counts.mean())
    corr = np.fft.irfft2(fa * np.conj(fb), s=a.counts.shape)
    idx = np.unravel_index(int(np.argmax(corr)), corr.shape)
    di = idx[0] if idx[0] <= a.height // 2 else idx[0] - a.height
    dj = idx[1] if idx[1] <= a.width // 2 else idx[1] - a.width
    return int(di), int(dj)


@dataclass(frozen=True)
class SpotChange:
    spot_id: int
    delta_units: float
    change: str   # 'vanished(k)', 'appeared(k)' or 'unchanged'


@dataclass(frozen=True)
class OffSpotEvent:
    position: tuple[float, float]
    delta_units: float
    change: str   # 'appeared' or 'vanished'


@dataclass(frozen=True)
class AnnealDiffReport:
    spot_changes: tuple[SpotChange, ...]
    off_spot_events: tuple[OffSpotEvent, ...]


def anneal_diff_report(before: ScanImage, after: ScanImage, spot_centers,
                       unit: float, psf_c: float = 115.0,
                       off_spot_threshold: float = 0.5) -> AnnealDiffReport:
    """Classify per-spot and off-spot emitter changes between two scans.

    Per spot, the net-count change (before minus after) in units of C is
    rounded to a signed emitter count.  Off the spots, the difference image
    is scanned for isolated single-emitter appearances or disappearances
    whose aperture net exceeds ``off_spot_threshold`` units.
    """
    if not before.same_geometry(after):
        raise GeometryError("before/after scans must share geometry")
    centers = np.atleast_2d(np.asarray(spot_centers, dtype=float))
    spot_changes = []
    for sid, center in enumerate(centers, start=1):
        ap = default_aperture(center, psf_c)
        delta = (spot_net_counts(before, ap) - spot_net_counts(after, ap)) / unit
        k = round_half_away(delta)
        if k > 0:
            change = f"vanished({k})"
        elif k < 0:
            change = f"appeared({-k})"
        else:
            change = "unchanged"
        spot_changes.append(SpotChange(spot_id=sid, delta_units=float(delta),
                                       change=change))

    off_events = _off_spot_events(subtract_images(before, after), centers, unit,
                                  psf_c, off_spot_threshold)
    return AnnealDiffReport(spot_changes=tuple(spot_changes),
                            off_spot_events=tuple(off_events))


def _off_spot_events(diff: ScanImage, centers: np.ndarray, unit: float,
                     psf_c: float, threshold: float) -> list:
    """Greedy matched-filter peak search on the difference image, away from
    the spot apertures."""
    px = diff.pixel_size
    smooth = ndimage.gaussian_filter(diff.counts, sigma=psf_c / px)
    dx = diff.pixel_x()
    dy = diff.pixel_y()
    # exclude everything within the annulus radius of any spot, and a border
    # wide enough for aperture photometry
    keep = np.ones_like(smooth, dtype=bool)
    for center in centers:
        r2 = (dy[:, None] - center[1]) ** 2 + (dx[None, :] - center[0]) ** 2
        keep &= r2 > (6.0 * psf_c) ** 2
    border = 6.0 * psf_c
    keep &= (dx[None, :] >= dx[0] + border) & (dx[None, :] <= dx[-1] - border)
    keep &= (dy[:, None] >= dy[0] + border) & (dy[:, None] <= dy[-1] - border)

    events = []
    work = np.where(keep, smooth, 0.0)
    for _ in range(100):  # safety cap
        iy, ix = np.unravel_index(int(np.argmax(np.abs(work))), work.shape)
        if work[iy, ix] == 0.0:
            break
        pos = (float(dx[ix]), float(dy[iy]))
        net = spot_net_counts(diff, default_aperture(pos, psf_c)) / unit
        if abs(net) < threshold:
            break
        events.append(OffSpotEvent(
            position=pos, delta_units=float(net),
            change="vanished" if net > 0 else "appeared",
        ))
        r2 = (dy[:, None] - pos[1]) ** 2 + (dx[None, :] - pos[0]) ** 2
        work = np.where(r2 > (6.0 * psf_c) ** 2, work, 0.0)
    return events


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_quant_csv(quants, path, unit_label: str = "C") -> None:
    """Quantification table: spot, net kcounts, units of C, rounded ions."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spot", "net_kcounts", f"ions_per_spot_units_{unit_label}",
                         "rounded"])
        for q in quants:
            writer.writerow([q.spot_id, f"{q.net_counts / 1e3:.1f}",
                             f"{q.ions_fractional:.2f}", q.ions_rounded])


def write_changes_csv(report: AnnealDiffReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "spot_or_x", "y", "delta_units", "classification"])
        for ch in report.spot_changes:
            writer.writerow(["spot", ch.spot_id, "", f"{ch.delta_units:.3f}", ch.change])
        for ev in report.off_spot_events:
            writer.writerow(["off-spot", f"{ev.position[0]:.1f}",
                             f"{ev.position[1]:.1f}", f"{ev.delta_units:.3f}", ev.change])
