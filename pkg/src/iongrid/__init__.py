"""iongrid: deterministic single-ion implantation, simulated end to end.

The package covers the full pipeline at desk scale: adaptive Bayesian
knife-edge profiling of the ion beam (:mod:`iongrid.profiler`), dot-grid
implantation with annealing and native background (:mod:`iongrid.simulator`),
polarization-resolved upconversion-scan synthesis (:mod:`iongrid.optics`,
:mod:`iongrid.simulator`), and the inverse quantification and placement
statistics (:mod:`iongrid.analyze`, :mod:`iongrid.metrics`).  Time-of-flight
species identification lives in :mod:`iongrid.tof`; bundled reference
measurements in :mod:`iongrid.datasets`.

Every stochastic operation takes an explicit seed; identical seeds give
bit-identical results.
"""

from .core import ScanImage, image_moments, subtract_images
from .profiler import (
    BeamParams,
    BeamPosterior,
    EdgeEvent,
    choose_next_edge,
    detect_probability,
    estimate,
    expected_information_gain,
    posterior_update,
    run_session,
)

__version__ = "0.1.0"

__all__ = [
    "ScanImage",
    "subtract_images",
    "image_moments",
    "BeamParams",
    "BeamPosterior",
    "EdgeEvent",
    "detect_probability",
    "posterior_update",
    "expected_information_gain",
    "choose_next_edge",
    "estimate",
    "run_session",
    "__version__",
]
