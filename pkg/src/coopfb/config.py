"""INI configuration files and experiment presets.

A config file has one section per concern; every key is optional except
``n_t``, ``k_users``, a power (``power_db`` or ``power_total``), ``b_f``,
``trials`` and ``seed``::

    [scenario]
    n_t = 60
    k_users = 2
    power_db = 20
    b_f = 6
    trials = 2000
    seed = 1

    [channel]
    model = one-ring
    mean_azimuths_deg = 73, 73
    angular_spread_deg = 15
    path_losses_db = 0, -10

    [exchange]
    b_tot = 80
    backend = ideal-dr

    [sim]
    schemes = csi-feedback-mmse, precoder-naive, precoder-adaptive

    [sweep]
    parameter = blockage_db
    values = 0, 5, 10, 15, 20, 25

A ``[sweep]`` section turns the file into an :class:`ExperimentPreset`.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from coopfb.errors import ConfigError
from coopfb.sim import ScenarioConfig

__all__ = [
    "ExperimentPreset",
    "SWEEP_PARAMETERS",
    "PRESET_NAMES",
    "parse_config",
    "parse_config_text",
    "apply_sweep",
    "apply_overrides",
    "preset",
    "db_to_linear",
]

SWEEP_PARAMETERS = ("blockage_db", "power_db", "b_f", "b_tot", "b_c")
PRESET_NAMES = ("fig2", "fig3", "fig4a", "fig4b", "table1", "bounds", "validate")

# section -> key -> (ScenarioConfig field, parser)
_SCHEMA = {
    "scenario": {
        "n_t": ("n_t", "int"),
        "k_users": ("k_users", "int"),
        "power_db": ("power_total", "db"),
        "power_total": ("power_total", "float"),
        "b_f": ("b_f", "int"),
        "trials": ("trials", "int"),
        "seed": ("master_seed", "int"),
    },
    "channel": {
        "model": ("channel_model", "str"),
        "mean_azimuths_deg": ("mean_azimuths_deg", "floats"),
        "angular_spread_deg": ("angular_spread_deg", "float"),
        "antenna_spacing": ("antenna_spacing", "float"),
        "path_losses": ("path_losses", "floats"),
        "path_losses_db": ("path_losses", "dbs"),
        "energy_fraction": ("energy_fraction", "float"),
    },
    "exchange": {
        "b_tot": ("b_tot", "float"),
        "backend": ("backend", "str"),
        "eig_floor": ("eig_floor", "float"),
        "b_c": ("b_c", "float"),
        "emulate_rvq": ("emulate_exchange", "bool"),
    },
    "sim": {
        "schemes": ("schemes", "strs"),
        "codebook_reuse": ("codebook_reuse", "int"),
    },
}
_REQUIRED = ("n_t", "k_users", "power_total", "b_f", "trials", "master_seed")


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    parameter: str
    values: tuple
    base: ScenarioConfig

    def __post_init__(self):
        if not self.values:
            raise ConfigError("sweep grid must be nonempty", key="values")
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter; choose from {', '.join(SWEEP_PARAMETERS)}",
                              key="parameter")

    def points(self):
        """``(value, config)`` for every grid value."""
        return [(v, apply_sweep(self.base, self.parameter, v)) for v in self.values]


def _convert(key, raw, kind):
    try:
        if kind == "int":
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind == "float":
            return float(raw)
        if kind == "db":
            return db_to_linear(float(raw))
        if kind == "str":
            return raw.strip()
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError
            return low in ("true", "yes", "1", "on")
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if kind == "floats":
            return tuple(float(x) for x in items)
        if kind == "dbs":
            return tuple(db_to_linear(float(x)) for x in items)
        if kind == "strs":
            return tuple(items)
    except ValueError:
        pass
    raise ConfigError(f"cannot parse {raw!r} as {kind}", key=key)


def _scenario_from_sections(sections: dict) -> ScenarioConfig:
    fields = {}
    for section, items in sections.items():
        if section == "sweep":
            continue
        schema = _SCHEMA.get(section)
        if schema is None:
            raise ConfigError(f"unknown section; expected one of {', '.join([*_SCHEMA, 'sweep'])}",
                              key=f"[{section}]")
        for key, raw in items.items():
            if key not in schema:
                raise ConfigError(f"unknown key in [{section}]", key=key)
            name, kind = schema[key]
            if name in fields:
                raise ConfigError(f"conflicts with another key setting {name}", key=key)
            fields[name] = _convert(key, raw, kind)
    for name in _REQUIRED:
        if name not in fields:
            key = {"power_total": "power_db", "master_seed": "seed"}.get(name, name)
            raise ConfigError("required key is missing", key=key)
    if fields.get("trials", 1) < 1:
        raise ConfigError("must be >= 1", key="trials")
    if fields.get("channel_model", "iid") == "one-ring" and "mean_azimuths_deg" not in fields:
        raise ConfigError("required for the one-ring model", key="mean_azimuths_deg")
    return ScenarioConfig(**fields)


def parse_config_text(text: str, name: str = "config"):
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=name)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    cfg = _scenario_from_sections(sections)
    if "sweep" not in sections:
        return cfg
    sweep = dict(sections["sweep"])
    for key in sweep:
        if key not in ("parameter", "values"):
            raise ConfigError("unknown key in [sweep]", key=key)
    if "parameter" not in sweep or "values" not in sweep:
        raise ConfigError("[sweep] needs both parameter and values", key="sweep")
    values = _convert("values", sweep["values"], "floats")
    return ExperimentPreset(name, sweep["parameter"].strip(), values, cfg)


def parse_config(path):
    """Read an INI file into a :class:`ScenarioConfig` or :class:`ExperimentPreset`."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError("file not found", key=str(path))
    return parse_config_text(p.read_text(), p.stem)


def apply_sweep(cfg: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    if parameter == "blockage_db":
        losses = list(cfg.path_losses or (1.0,) * cfg.k_users)
        losses[-1] = db_to_linear(-value)
        return cfg.replace(path_losses=tuple(losses))
    if parameter == "power_db":
        return cfg.replace(power_total=db_to_linear(value))
    if parameter == "b_f":
        return cfg.replace(b_f=int(value))
    if parameter == "b_tot":
        return cfg.replace(b_tot=float(value))
    if parameter == "b_c":
        return cfg.replace(b_c=float(value))
    raise ConfigError(f"unknown sweep parameter {parameter!r}", key="parameter")


def apply_overrides(obj, overrides: dict):
    """Apply ``field=value`` strings to a config or to a preset's base config."""
    base = obj.base if isinstance(obj, ExperimentPreset) else obj
    lookup = {k: v for sec in _SCHEMA.values() for k, v in sec.items()}
    changes = {}
    for key, raw in overrides.items():
        if key not in lookup:
            raise ConfigError("unknown override key", key=key)
        name, kind = lookup[key]
        changes[name] = _convert(key, raw, kind)
    new = base.replace(**changes) if changes else base
    if isinstance(obj, ExperimentPreset):
        return ExperimentPreset(obj.name, obj.parameter, obj.values, new)
    return new


# -- built-in presets --------------------------------------------------------

SHARED_AZIMUTH_DEG = 73.0
HETERO_CENTER_DEG = 50.0
HETERO_OFFSET_DEG = 10.0

_ONE_RING = dict(n_t=60, k_users=2, b_f=6, b_tot=80.0, channel_model="one-ring",
                 angular_spread_deg=15.0, antenna_spacing=0.5,
                 schemes=("csi-feedback-mmse", "precoder-naive", "precoder-adaptive"))


def _shared(**kw):
    return ScenarioConfig(mean_azimuths_deg=(SHARED_AZIMUTH_DEG,) * 2, path_losses=(1.0, 1.0),
                          **{**_ONE_RING, **kw})


def _hetero(**kw):
    az = (HETERO_CENTER_DEG - HETERO_OFFSET_DEG, HETERO_CENTER_DEG + HETERO_OFFSET_DEG)
    return ScenarioConfig(mean_azimuths_deg=az, path_losses=(1.0, 1.0), **{**_ONE_RING, **kw})


def preset(name: str) -> ExperimentPreset:
    """Built-in experiment definitions.

    ``table1`` and ``bounds`` need no Monte Carlo; their base configs only
    carry the scenario constants.
    """
    if name == "fig2":
        return ExperimentPreset(name, "blockage_db", (0, 5, 10, 15, 20, 25, 30),
                                _shared(power_total=db_to_linear(20), trials=2000, master_seed=1))
    if name == "table1":
        return ExperimentPreset(name, "blockage_db", (0, 5, 10, 15, 20, 25),
                                _shared(power_total=db_to_linear(20), trials=1, master_seed=0))
    if name == "fig3":
        return ExperimentPreset(name, "power_db", (0, 5, 10, 15, 20, 25, 30),
                                _hetero(power_total=1.0, trials=2000, master_seed=1))
    if name == "fig4a":
        return ExperimentPreset(name, "b_f", tuple(range(4, 13)),
                                _hetero(power_total=db_to_linear(10), trials=2000, master_seed=1))
    if name == "fig4b":
        return ExperimentPreset(name, "b_tot", (10, 20, 40, 60, 80, 100, 120),
                                _hetero(power_total=db_to_linear(10), trials=2000, master_seed=1))
    if name == "bounds":
        return ExperimentPreset(name, "b_c", (8, 12, 16, 20, 24, 32, 40, 64, math.inf),
                                ScenarioConfig(n_t=16, k_users=2, power_total=2.0, b_f=6,
                                               schemes=("precoder-rvq",), trials=1))
    if name == "validate":
        return ExperimentPreset(name, "b_c", (8, 12, 16, 20),
                                ScenarioConfig(n_t=16, k_users=2, power_total=2.0, b_f=6, b_c=16,
                                               schemes=("precoder-rvq",), trials=2000,
                                               master_seed=1, emulate_exchange=False,
                                               codebook_reuse=10))
    raise ConfigError(f"unknown preset; choose from {', '.join(PRESET_NAMES)}", key=name)
