"""Run configuration: INI-style files with a validated schema.

A configuration file holds one section per subcommand plus an optional
``[run]`` section for the global seed and output directory.  Command-line
flags override file values.  Example::

    [run]
    seed = 7

    [profile]
    sigma = 11.3
    events = 308

    [simulate]
    area = B
    activation_yield = 0.5

Unknown keys and out-of-range values are configuration errors reported with
the offending section and key.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

__all__ = ["ConfigError", "OptionSpec", "SCHEMA", "load_config", "validate",
           "snapshot", "parse_exclusions"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class OptionSpec:
    """Type, default and optional range check for one configuration key."""

    type: type
    default: object
    check: tuple | None = None   # (low, high) inclusive bounds, numbers only
    help: str = ""


SCHEMA: dict[str, dict[str, OptionSpec]] = {
    "run": {
        "seed": OptionSpec(int, 0, None, "global random seed"),
        "out": OptionSpec(str, "runs", None, "output directory root"),
    },
    "profile": {
        "x0": OptionSpec(float, 0.0, None, "true beam center (nm)"),
        "sigma": OptionSpec(float, 11.3, (1e-9, None), "true beam waist (nm)"),
        "a": OptionSpec(float, 0.9, (0.0, 1.0), "detector efficiency"),
        "events": OptionSpec(int, 308, (1, None), "number of edge events"),
        "grid_nx": OptionSpec(int, 101, (2, None), "posterior x0 grid points"),
        "grid_nsigma": OptionSpec(int, 101, (2, None), "posterior sigma grid points"),
        "grid_na": OptionSpec(int, 21, (2, None), "posterior a grid points"),
        "max_candidates": OptionSpec(int, 9, (1, None), "candidate edges per event"),
        "bin_width": OptionSpec(float, 5.0, (1e-9, None), "histogram bin width (nm)"),
    },
    "simulate": {
        "area": OptionSpec(str, "B", None, "implantation pattern, A or B"),
        "beam_sigma": OptionSpec(float, 30.7, (0.0, None), "beam waist (nm)"),
        "straggle": OptionSpec(float, 3.0, (0.0, None), "lattice straggle (nm)"),
        "activation_yield": OptionSpec(float, 0.5, (0.0, 1.0), "anneal activation yield"),
        "migration_loss": OptionSpec(float, 0.0, (0.0, 1.0), "anneal loss probability"),
        "migration_sigma": OptionSpec(float, 0.0, (0.0, None), "anneal displacement (nm)"),
        "second_anneal_loss": OptionSpec(float, 0.1, (0.0, 1.0),
                                         "loss probability of the second anneal"),
        "second_anneal_yield": OptionSpec(float, 0.1, (0.0, 1.0),
                                          "activation yield of the second anneal"),
        "native_density": OptionSpec(float, 6e11, (0.0, None),
                                     "native emitter density (cm^-3)"),
        "depth_of_field": OptionSpec(float, 1000.0, (0.0, None),
                                     "native depth of field (nm)"),
        "brightness": OptionSpec(float, 334e3, (1e-9, None),
                                 "integrated single-ion counts"),
        "background": OptionSpec(float, 20.0, (0.0, None),
                                 "background counts per pixel"),
        "pixel_size": OptionSpec(float, 25.0, (1e-9, None), "pixel size (nm)"),
        "noiseless": OptionSpec(bool, False, None, "skip Poisson noise"),
    },
    "analyze": {
        "unit": OptionSpec(float, 334e3, (1e-9, None),
                           "single-ion calibration unit (counts)"),
        "psf_c": OptionSpec(float, 115.0, (1e-9, None), "PSF width (nm)"),
        "pitch": OptionSpec(float, 2000.0, (1e-9, None), "grid pitch (nm)"),
        "area": OptionSpec(str, "B", None, "plan for nominal spot centers, A or B"),
        "exclusions": OptionSpec(str, "", None,
                                 "comma-separated spot ids excluded from statistics"),
        "fit_positions": OptionSpec(bool, True, None,
                                    "fit per-emitter positions for the metrics"),
    },
}


def _coerce(section: str, key: str, raw, spec: OptionSpec):
    try:
        if spec.type is bool and isinstance(raw, str):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                value = True
            elif low in ("0", "false", "no", "off"):
                value = False
            else:
                raise ValueError(raw)
        else:
            value = spec.type(raw)
    except (TypeError, ValueError):
        raise ConfigError(
            f"[{section}] {key}: cannot read {raw!r} as {spec.type.__name__}"
        ) from None
    if spec.check is not None and isinstance(value, (int, float)):
        lo, hi = spec.check
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            raise ConfigError(f"[{section}] {key}: value {value!r} outside "
                              f"[{lo}, {hi if hi is not None else 'inf'}]")
    return value


def load_config(path=None) -> dict:
    """Read a configuration file into a {section: {key: value}} dict with
    defaults filled in; ``None`` gives pure defaults."""
    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"cannot read configuration file {path}")
    config = {}
    for section, options in SCHEMA.items():
        config[section] = {k: spec.default for k, spec in options.items()}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in options:
                    raise ConfigError(f"[{section}] {key}: unknown key")
                config[section][key] = _coerce(section, key, raw, options[key])
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"[{section}]: unknown section")
    return config


def validate(config: dict) -> dict:
    """Re-check a (possibly flag-overridden) configuration against the schema."""
    for section, options in config.items():
        schema = SCHEMA.get(section)
        if schema is None:
            raise ConfigError(f"[{section}]: unknown section")
        for key, value in options.items():
            if key not in schema:
                raise ConfigError(f"[{section}] {key}: unknown key")
            options[key] = _coerce(section, key, value, schema[key])
    if config.get("simulate", {}).get("area", "B").upper() not in ("A", "B"):
        raise ConfigError("[simulate] area: must be 'A' or 'B'")
    if config.get("analyze", {}).get("area", "B").upper() not in ("A", "B"):
        raise ConfigError("[analyze] area: must be 'A' or 'B'")
    return config


def snapshot(config: dict, path) -> None:
    """Write the resolved configuration back out as an INI file."""
    parser = configparser.ConfigParser()
    for section, options in config.items():
        parser.add_section(section)
        for key, value in options.items():
            parser.set(section, key, str(value))
    with open(path, "w") as fh:
        parser.write(fh)


def parse_exclusions(raw: str) -> tuple[int, ...]:
    """'1,7,9' -> (1, 7, 9); empty string -> ()."""
    raw = (raw or "").strip()
    if not raw:
        return ()
    try:
        return tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"[analyze] exclusions: cannot parse {raw!r}") from None
