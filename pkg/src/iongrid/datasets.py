"""Bundled reference measurements from the modeled implantation experiment.

Two 12-spot dot grids (pitch 2 um) were implanted with 5.9 keV Pr+ ions,
annealed, and read out by polarization-summed upconversion scans: area A with
8 ions per spot, area B with 4 (spot 12 of B carries 2).  The tables below
hold the published per-spot net fluorescence sums, the single-ion calibration
units, and the companion beam, PSF and statistics constants.  They anchor the
regression tests and provide realistic defaults for the demo pipeline.
"""

from __future__ import annotations

# Per-spot net fluorescence sums in kcounts (aperture sum minus annulus
# background), spots 1..12.
AREA_A_SPOT_KCOUNTS = (1231, 778, 1998, 1883, 396, 732, 871, 434, 1516, 1105, 717, 876)
AREA_B_SPOT_KCOUNTS = (900, 677, 723, 956, 299, 702, 563, 424, 644, 964, 371, 413)

# Ion numbers as printed alongside the sums: fractional (units of C) and
# rounded columns.
AREA_A_PRINTED_FRACTIONAL = (3.12, 1.97, 5.06, 4.77, 1.0, 1.85, 2.21, 1.1, 3.84, 2.8, 1.82, 2.22)
AREA_B_PRINTED_FRACTIONAL = (2.69, 2.03, 2.16, 2.86, 0.9, 2.1, 1.69, 1.27, 1.93, 2.89, 1.11, 1.24)
AREA_A_PRINTED_ROUNDED = (3, 2, 5, 5, 1, 2, 2, 1, 4, 3, 2, 2)   # sum 32
AREA_B_PRINTED_ROUNDED = (3, 2, 2, 3, 1, 2, 2, 1, 2, 3, 1, 1)   # sum 23

# Average single-ion fluorescence (area under the fitted 2D Gaussian).
UNIT_A_KCOUNTS = 395.0
UNIT_B_KCOUNTS = 334.0

# Spots excluded from the placement statistics (merged or ambiguous fits):
# spot 12 in area A; spots 1, 7 and 9 in area B.
EXCLUDED_SPOTS_A = (12,)
EXCLUDED_SPOTS_B = (1, 7, 9)

# Beam profiling results: waist sigma in nm and the event count of the
# profiling run that produced each.
BEAM_SIGMA_CA_NM = 11.3
BEAM_SIGMA_CA_ERR_NM = 2.0
BEAM_EVENTS_CA = 308
BEAM_SIGMA_PR_NM = 30.7
BEAM_SIGMA_PR_ERR_NM = 8.5
BEAM_EVENTS_PR = 150

# Imaging constants.
PSF_WIDTH_NM = 115.0
PIXEL_SIZE_NM = 25.0
DWELL_S = 6e-3

# Implantation constants.
GRID_PITCH_NM = 2000.0
IMPLANT_ENERGY_KEV = 5.9
IMPLANT_DEPTH_NM = 6.0
YIELD_A = 0.32
YIELD_B = 0.50
NATIVE_DENSITY_CM3 = 6e11

# Placement statistics.
PRECISION_SIGMA_NM = 49.0
ACCURACY_SIGMA_NM = 57.0

# Time of flight: trapped-extraction arrival at 5.9 keV over 42.8 cm, and
# the ion-gun pass-through measurement at 600 eV over 107 cm.
TOF_ENERGY_KEV = 5.9
TOF_DISTANCE_M = 0.428
TOF_MEAN_MEASURED_S = 5.79e-6
TOF_FWHM_S = 2e-9
TOF_CA_PR_GAP_MEASURED_S = 2.6e-6
ION_GUN_ENERGY_KEV = 0.6
ION_GUN_DISTANCE_M = 1.07
ION_GUN_MEAN_S = 54.45e-6
ION_GUN_FWHM_S = 1.4e-6
ION_GUN_COUNT = 1085
