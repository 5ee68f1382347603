"""INI configuration files for registration, optimizer and DIC settings.

Example::

    [registration]
    metric = MI
    n_samples = 2048
    spacing = 30, 30
    pyramid_levels = 0
    interpolation = cubic_bspline

    [asgd]
    max_iterations = 500
    a = auto

    [dic]
    subset_radius = 10

Omitted keys keep their defaults. Unknown sections and keys are errors, as
are values that do not parse or fall outside their allowed range; the error
message starts with the offending key.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace

from .asgd import AsgdConfig
from .dic import DicParams
from .exceptions import ConfigurationError, ParameterError
from .registration import RegistrationConfig

_SECTIONS = ("registration", "asgd", "dic")


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_float(text):
    return None if text.strip().lower() in ("auto", "none", "") else float(text)


def _parse_floats(text):
    return tuple(float(p) for p in text.replace(",", " ").split())


def _parse_ints(text):
    return tuple(int(p) for p in text.replace(",", " ").split())


def _parse_int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


_PARSERS = {
    "registration": {
        "metric": str.strip,
        "n_samples": _parse_int,
        "spacing": _parse_floats,
        "pyramid_levels": _parse_ints,
        "interpolation": str.strip,
        "workers": _parse_int,
    },
    "asgd": {
        "max_iterations": _parse_int,
        "a": _parse_optional_float,
        "A": float,
        "alpha": float,
        "time_window": float,
        "seed": _parse_int,
        "max_step": float,
        "probe": float,
        "clip": _parse_bool,
        "precondition": _parse_bool,
    },
    "dic": {
        "subset_radius": _parse_int,
        "step": _parse_int,
        "search_radius": _parse_int,
        "strain_window": float,
    },
}


@dataclass
class RunConfig:
    """Everything a run needs: registration (with optimizer) and DIC settings."""

    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    dic: DicParams = field(default_factory=DicParams)

    def to_dict(self) -> dict:
        reg = {f.name: getattr(self.registration, f.name)
               for f in fields(self.registration) if f.name != "asgd"}
        reg["spacing"] = list(reg["spacing"])
        reg["pyramid_levels"] = list(reg["pyramid_levels"])
        return {
            "registration": reg,
            "asgd": dataclasses.asdict(self.registration.asgd),
            "dic": dataclasses.asdict(self.dic),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        for name in data:
            if name not in _SECTIONS:
                raise ConfigurationError(f"{name}: unknown section")
        for section in _SECTIONS:
            for key in data.get(section, {}):
                if key not in _PARSERS[section]:
                    raise ConfigurationError(f"{section}.{key}: unknown key")
        try:
            asgd = AsgdConfig(**data.get("asgd", {}))
        except ParameterError as exc:
            raise ConfigurationError(f"asgd.{exc}") from None
        try:
            reg = RegistrationConfig(asgd=asgd, **data.get("registration", {}))
        except ParameterError as exc:
            raise ConfigurationError(f"registration.{exc}") from None
        try:
            dic = DicParams(**data.get("dic", {}))
        except ParameterError as exc:
            raise ConfigurationError(f"dic.{exc}") from None
        return cls(reg, dic)

    def with_seed(self, seed: int) -> "RunConfig":
        asgd = replace(self.registration.asgd, seed=int(seed))
        return replace(self, registration=replace(self.registration, asgd=asgd))

    def with_workers(self, workers: int) -> "RunConfig":
        return replace(self, registration=replace(self.registration, workers=int(workers)))


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, (list, tuple)):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in cfg.to_dict().items():
        parser[section] = {k: _format(v) for k, v in values.items()}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in parser[section].items())
        lines.append("")
    return "\n".join(lines)


def loads_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="\0defaults")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config: {exc}") from None
    data = {}
    for section in parser.sections():
        if section not in _PARSERS:
            raise ConfigurationError(f"{section}: unknown section")
        values = {}
        for key, raw in parser[section].items():
            parse = _PARSERS[section].get(key)
            if parse is None:
                raise ConfigurationError(f"{section}.{key}: unknown key")
            try:
                values[key] = parse(raw)
            except ValueError as exc:
                raise ConfigurationError(f"{section}.{key}: {exc}") from None
        data[section] = values
    return RunConfig.from_dict(data)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return loads_config(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_config(cfg))
