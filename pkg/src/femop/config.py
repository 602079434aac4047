"""Run configuration: a small INI dialect with a fixed schema.

Sections and keys are closed sets; anything unknown is a hard error so a typo
cannot silently fall back to a default. Parsing resolves every key, recording
which ones came from defaults, and `serialize` writes the fully resolved file
back out, so parse(serialize(cfg)) reproduces cfg exactly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Bad configuration file: unknown keys, missing keys, or unparseable values."""


REQUIRED = object()


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    return float(text)


def _str(text: str) -> str:
    return text.strip()


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_tuple(text: str) -> tuple[float, ...]:
    t = text.strip()
    return tuple(float(tok) for tok in t.split(",")) if t else ()


def _int_tuple(text: str) -> tuple[int, ...]:
    t = text.strip()
    return tuple(int(tok) for tok in t.split(",")) if t else ()


def _choice(*options: str):
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"must be one of {options}, got {text!r}")
        return t

    return parse


# section -> key -> (parser, default). REQUIRED defaults have no fallback.
SCHEMA = {
    "mesh": {
        "nx": (_int, REQUIRED),
        "ny": (_int, REQUIRED),
        "lx": (_float, 1.0),
        "ly": (_float, 1.0),
        "quadrature_order": (_int, 2),
    },
    "physics": {
        "problem": (_choice("thermal", "thermal_nonlinear", "elastic"), "thermal"),
        "left_value": (_float, 1.0),
        "right_value": (_float, 0.1),
        "source": (_float, 0.0),
        "nonlinear_m1": (_float, 2.0),
        "nonlinear_m2": (_float, 4.0),
        "young_modulus": (_float, 1.0),
        "poisson_ratio": (_float, 0.2),
        "top_ux": (_float, 0.0),
        "top_uy": (_float, 0.1),
    },
    "parameterization": {
        "kind": (_choice("uniform", "fourier", "nodal"), "fourier"),
        "k_value": (_float, 1.0),
        "fx": (_float_tuple, (3.0, 5.0, 7.0)),
        "fy": (_float_tuple, (2.0, 4.0, 7.0)),
        "coeffs": (_float_tuple, ()),
        "k_min": (_float, 0.01),
        "k_max": (_float, 1.0),
        "projection_beta": (_float, 5.0),
        "coeff_min": (_float, -3.0),
        "coeff_max": (_float, 3.0),
        "n_samples": (_int, 200),
        "sample_seed": (_int, 0),
    },
    "network": {
        "hidden": (_int_tuple, (300, 300)),
        "activation": (_choice("tanh", "sigmoid", "swish", "linear"), "swish"),
        "seed": (_int, 0),
    },
    "loss": {
        "physics": (_choice("energy", "residual"), "energy"),
        "w_ph": (_float, 1.0),
        "w_bc": (_float, 1.0),
        "w_se": (_float, 0.0),
        "w_db": (_float, 10.0),
        "hard_bc": (_bool, False),
    },
    "training": {
        "epochs": (_int, 1000),
        "batch_size": (_int, 32),
        "lr": (_float, 0.001),
        "seed": (_int, 0),
    },
    "optimizer": {
        "mode": (_choice("fem", "fol"), "fem"),
        "iters": (_int, 100),
        "alpha": (_float, 0.01),
        "tol": (_float, 1e-6),
        "maximize": (_bool, True),
        "epochs_per_iter": (_int, 200),
        "objective": (_choice("sq_flux_y", "sq_flux_x_shifted"), "sq_flux_y"),
        "constraint": (_choice("sq_flux_x_shifted", "sq_flux_y", "none"), "sq_flux_x_shifted"),
    },
    "io": {
        "output_dir": (_str, ""),
        "write_vtk": (_bool, True),
        "upsample": (_int, 0),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration plus a log of the defaults that filled it."""

    values: dict
    defaults_applied: tuple[str, ...]
    path: str = ""

    def __getitem__(self, section: str) -> dict:
        return self.values[section]


def parse_config(path) -> RunConfig:
    """Read and resolve an INI file against the schema.

    Raises ConfigError on unknown sections/keys, on unparseable values, and
    on missing required keys (all of them named in one message).
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    unknown = []
    for section in cp.sections():
        if section not in SCHEMA:
            unknown.append(f"[{section}]")
            continue
        for key in cp[section]:
            if key not in SCHEMA[section]:
                unknown.append(f"{section}.{key}")
    if unknown:
        raise ConfigError("unknown configuration keys: " + ", ".join(sorted(unknown)))

    values: dict = {}
    defaults: list[str] = []
    missing: list[str] = []
    errors: list[str] = []
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (parse, default) in keys.items():
            if cp.has_option(section, key):
                raw = cp.get(section, key)
                try:
                    values[section][key] = parse(raw)
                except ValueError as exc:
                    errors.append(f"{section}.{key}: {exc}")
            elif default is REQUIRED:
                missing.append(f"{section}.{key}")
            else:
                values[section][key] = default
                defaults.append(f"{section}.{key} = {format_value(default)}")
    if errors:
        raise ConfigError("invalid configuration values: " + "; ".join(errors))
    if missing:
        raise ConfigError("missing required configuration keys: " + ", ".join(missing))

    return RunConfig(values=values, defaults_applied=tuple(defaults), path=str(path))


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def serialize(cfg: RunConfig) -> str:
    """Resolved config back as INI text. parse_config on it is an identity."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {format_value(cfg.values[section][key])}")
        lines.append("")
    return "\n".join(lines)


def write_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(serialize(cfg))


def default_config(nx: int, ny: int, **overrides) -> RunConfig:
    """Programmatic construction: defaults plus section.key overrides.

    Override keys are dotted, e.g. default_config(11, 11, **{"training.lr": 1e-2}).
    """
    values: dict = {}
    for section, keys in SCHEMA.items():
        values[section] = {
            key: default for key, (parse, default) in keys.items() if default is not REQUIRED
        }
    values["mesh"]["nx"] = nx
    values["mesh"]["ny"] = ny
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown configuration key: {dotted}")
        values[section][key] = value
    return RunConfig(values=values, defaults_applied=())
