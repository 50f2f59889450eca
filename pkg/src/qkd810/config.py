"""YAML scenario files with includes and strictly unit-suffixed quantities.

Every physical quantity is written as ``"<number> <unit>"`` (``"2 km"``,
``"3 ns"``, ``"1e5 /s"``); bare numbers are accepted only for
dimensionless fields (fractions, seeds, indices). Top-level ``include``
lists paths, resolved relative to the including file, whose mappings are
merged underneath the including document.
"""
from __future__ import annotations

import math
import re
from pathlib import Path

import yaml

from .errors import ConfigError

# unit -> factor into the canonical unit of each dimension
UNITS = {
    "length": {"km": 1.0, "m": 1e-3},  # km
    "radius": {"um": 1.0, "µm": 1.0, "nm": 1e-3},  # um
    "wavelength": {"nm": 1.0, "um": 1e3, "µm": 1e3},  # nm
    "duration": {"s": 1.0, "ms": 1e-3, "min": 60.0, "h": 3600.0},  # s
    "time": {"ps": 1.0, "ns": 1e3, "us": 1e6, "µs": 1e6, "ms": 1e9, "s": 1e12},  # ps
    "rate": {"/s": 1.0, "Hz": 1.0, "kHz": 1e3, "MHz": 1e6},  # 1/s
    "loss": {"dB": 1.0},
    "attenuation": {"dB/km": 1.0},
    "angle": {"rad": 1.0, "deg": math.pi / 180},  # rad
    "drift": {"rad/sqrt(s)": 1.0, "deg/sqrt(s)": math.pi / 180},
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S+)\s*$")


def parse_quantity(value, dimension, field):
    """Strictly parse ``"<number> <unit>"`` into the canonical unit."""
    units = UNITS[dimension]
    if isinstance(value, bool) or not isinstance(value, str):
        raise ConfigError(f"expected a quantity with a unit ({', '.join(units)}), got {value!r}", field)
    m = _QUANTITY.match(value)
    if not m:
        raise ConfigError(f"cannot parse quantity {value!r}", field)
    number, unit = m.groups()
    if unit not in units:
        raise ConfigError(f"unit {unit!r} not valid here; use one of {', '.join(units)}", field)
    return float(number) * units[unit]


def parse_number(value, field, lo=None, hi=None, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field)
    if integer and int(value) != value:
        raise ConfigError(f"expected an integer, got {value!r}", field)
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ConfigError(f"{value!r} outside [{lo}, {hi}]", field)
    return int(value) if integer else float(value)


def deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_document(path, _seen=None) -> dict:
    """Read a YAML mapping and resolve its ``include`` chain."""
    path = Path(path).resolve()
    seen = set() if _seen is None else _seen
    if path in seen:
        raise ConfigError(f"include cycle through {path.name}", "include")
    seen = seen | {path}
    try:
        doc = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", "include") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path.name}: invalid YAML ({exc})", "") from None
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path.name}: top level must be a mapping", "")
    includes = doc.pop("include", []) or []
    if isinstance(includes, str):
        includes = [includes]
    merged = {}
    for inc in includes:
        merged = deep_merge(merged, load_document(path.parent / inc, seen))
    return deep_merge(merged, doc)


def set_path(doc: dict, dotted: str, value) -> dict:
    """Return a copy of ``doc`` with ``a.b.c`` set to ``value``."""
    keys = dotted.split(".")
    out = dict(doc)
    node = out
    for k in keys[:-1]:
        child = node.get(k)
        node[k] = dict(child) if isinstance(child, dict) else {}
        node = node[k]
    node[keys[-1]] = value
    return out


class Section:
    """Read-once view of a mapping that tracks its dotted path and rejects unknown keys."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigError("expected a mapping", path)
        self.data = data
        self.path = path
        self.used = set()

    def field(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key):
        return key in self.data

    def raw(self, key, default=...):
        self.used.add(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError("required field missing", self.field(key))
            return default
        return self.data[key]

    def quantity(self, key, dimension, default=...):
        v = self.raw(key, default)
        if v is default and key not in self.data:
            return v
        return parse_quantity(v, dimension, self.field(key))

    def number(self, key, default=..., **kw):
        v = self.raw(key, default)
        if v is default and key not in self.data:
            return v
        return parse_number(v, self.field(key), **kw)

    def section(self, key, default=...):
        v = self.raw(key, default)
        if v is None:
            return None
        return Section(v, self.field(key))

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"unknown key(s): {', '.join(map(str, extra))}", self.field(str(extra[0])))
