"""Experiment configuration and its INI-style text format.

Sections map onto the dataclasses that configure each part of a run::

    [experiment]   name, n_seeds, base_seed, max_env_steps, output_dir
    [env]          EnvConfig fields
    [expert]       ExpertConfig fields
    [sac]          SacConfig fields

Values are Python literals (``0.05``, ``true``, ``(0.25, 0.25)``, ``'single'``).
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import ast
import configparser
import io
import os
import types
import typing
from dataclasses import asdict, dataclass, field, fields, replace

from ..env import EnvConfig
from ..expert import ExpertConfig
from ..sac import SacConfig

OUTPUT_ENV_VAR = "SACR2_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "sac_demo"
    n_seeds: int = 4
    base_seed: int = 0
    max_env_steps: int = 150_000
    output_dir: str = "runs"
    env: EnvConfig = field(default_factory=EnvConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    sac: SacConfig = field(default_factory=SacConfig)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.max_env_steps < 1:
            raise ConfigError("max_env_steps must be >= 1")

    def seeds(self) -> list:
        return [self.base_seed + i for i in range(self.n_seeds)]

    def suite_dir(self) -> str:
        root = os.environ.get(OUTPUT_ENV_VAR)
        base = self.output_dir if root is None or os.path.isabs(self.output_dir) else os.path.join(root, self.output_dir)
        return os.path.join(base, self.name)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_TOP_KEYS = ("name", "n_seeds", "base_seed", "max_env_steps", "output_dir")
_SECTIONS = {"env": EnvConfig, "expert": ExpertConfig, "sac": SacConfig}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return repr(value)


def _parse(raw: str, key: str):
    text = raw.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "none":
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        # bare words are strings
        if text and all(c.isalnum() or c in "_-./" for c in text):
            return text
        raise ConfigError(f"cannot parse value for {key!r}: {raw!r}")


def _coerce(cls, key: str, value):
    hints = typing.get_type_hints(cls)
    hint = hints[key]
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if value is None:
        if type(None) in args:
            return None
        raise ConfigError(f"{key} may not be none")
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if hint is float or (origin in (typing.Union, types.UnionType) and float in args):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} expects a string, got {value!r}")
        return value
    if hint is tuple:
        if not isinstance(value, (tuple, list)):
            raise ConfigError(f"{key} expects a tuple, got {value!r}")
        return tuple(value)
    return value


def dumps(config: ExperimentConfig) -> str:
    """Canonical text form: fixed section order, fields in declaration order."""
    out = io.StringIO()
    out.write("[experiment]\n")
    for k in _TOP_KEYS:
        out.write(f"{k} = {_format(getattr(config, k))}\n")
    for section, cls in _SECTIONS.items():
        out.write(f"\n[{section}]\n")
        obj = getattr(config, section)
        for f in fields(cls):
            out.write(f"{f.name} = {_format(getattr(obj, f.name))}\n")
    return out.getvalue()


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse config text. Keys not given keep the values of ``base``
    (defaults when omitted); unknown sections or keys raise ConfigError."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    base = base or ExperimentConfig()
    top = {}
    sections = {name: {} for name in _SECTIONS}
    for section in parser.sections():
        if section == "experiment":
            for key, raw in parser.items(section):
                if key not in _TOP_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [experiment]")
                top[key] = _coerce(ExperimentConfig, key, _parse(raw, key))
        elif section in _SECTIONS:
            cls = _SECTIONS[section]
            names = {f.name for f in fields(cls)}
            for key, raw in parser.items(section):
                if key not in names:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                sections[section][key] = _coerce(cls, key, _parse(raw, key))
        else:
            raise ConfigError(f"unknown section [{section}]")
    try:
        built = {
            name: replace(getattr(base, name), **vals) if vals else getattr(base, name)
            for name, vals in sections.items()
        }
        return replace(base, **top, **built)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read())


def save(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(config))


def as_dict(config: ExperimentConfig) -> dict:
    return asdict(config)
