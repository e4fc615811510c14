"""TOML experiment configs, validated against the bundled JSON schema."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import resources

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import LocIndexError


class ConfigError(LocIndexError, ValueError):
    pass


@dataclass
class ExperimentConfig:
    data: dict
    digest: str

    def get(self, key, default=None):
        return self.data.get(key, default)

    def require(self, *path):
        cur = self.data
        for i, k in enumerate(path):
            if not isinstance(cur, dict) or k not in cur:
                raise ConfigError(f"missing required key {'.'.join(path[:i + 1])}")
            cur = cur[k]
        return cur


def schema() -> dict:
    return json.loads(resources.files("locindex").joinpath("schema.json").read_text())


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config does not parse: {e}") from None
    try:
        jsonschema.validate(data, schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}") from None
    return ExperimentConfig(data, hashlib.sha256(text.encode()).hexdigest())


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return parse_config(text)
