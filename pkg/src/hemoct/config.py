"""Structured text config files: `key = value` per line, one section per
module ([phantom], [preprocess], [train], [experiment], [gradcam]).
CLI flags override file values."""

import configparser

from .errors import ConfigError


def _parse_value(raw):
    s = raw.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    if "," in s:
        return tuple(_parse_value(p) for p in s.split(","))
    return s


def load_config(path):
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    out = {}
    for section in parser.sections():
        out[section] = {k: _parse_value(v) for k, v in parser.items(section)}
    return out


def merge_options(defaults, file_section, cli_overrides):
    """defaults < config file < explicitly passed CLI flags."""
    merged = dict(defaults)
    for k, v in file_section.items():
        if k not in defaults:
            raise ConfigError(f"unknown config key {k!r}")
        merged[k] = v
    for k, v in cli_overrides.items():
        if v is not None:
            merged[k] = v
    return merged
