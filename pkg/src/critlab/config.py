"""Sectioned key-value run configurations.

The format is standard INI (``configparser``) with ``#`` or ``;`` comment lines (``#`` also after a value).
See the README for the recognised sections and keys.  Every value that a
command reads is recorded, so a run can be replayed from its manifest.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import replace

from .expr import ExpressionError
from .fields import ExprField, as_field
from .operators import OperatorSpec
from .scenarios import Scenario, get_scenario

__all__ = ["Config", "ConfigError", "load_config"]


class ConfigError(ValueError):
    def __init__(self, message, line=None, offset=None, source=None):
        self.line, self.offset, self.source = line, offset, source
        where = ""
        if line is not None:
            where = f"{source or '<config>'}:{line}" + (f":{offset}" if offset is not None else "")
            where += ": "
        super().__init__(where + message)


_MISSING = object()


class Config:
    def __init__(self, text: str = "", source: str | None = None, overrides=None):
        self.text = text
        self.source = source
        self.parser = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#",), default_section="__none__"
        )
        self.parser.optionxform = str
        try:
            self.parser.read_string(text, source=source or "<config>")
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            if line is None and getattr(exc, "errors", None):
                line = exc.errors[0][0]
            raise ConfigError(str(exc).splitlines()[0], line=line, source=source) from None
        self.overrides: dict = {}
        for key, value in (overrides or {}).items():
            self.set(key, value)
        self.used: dict = {}

    # raw access ------------------------------------------------------------

    def set(self, dotted: str, value) -> None:
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        self.overrides[dotted] = str(value)

    def locate(self, section: str, key: str):
        """Line and value column of ``key`` in ``section`` (1-based)."""
        cur = None
        for no, line in enumerate(self.text.splitlines(), 1):
            m = re.match(r"\s*\[([^\]]+)\]", line)
            if m:
                cur = m.group(1).strip()
                continue
            m = re.match(r"\s*([^=:#;\s]+)\s*[=:]\s*", line)
            if cur == section and m and m.group(1) == key:
                return no, m.end() + 1
        return None, None

    def raw(self, section: str, key: str, default=_MISSING):
        dotted = f"{section}.{key}"
        if dotted in self.overrides:
            value = self.overrides[dotted]
        elif self.parser.has_option(section, key):
            value = self.parser.get(section, key)
        elif default is _MISSING:
            raise ConfigError(f"missing required key {key!r} in [{section}]", source=self.source)
        else:
            self.used[dotted] = default
            return default
        self.used[dotted] = value
        return value

    def has(self, section: str, key: str) -> bool:
        return f"{section}.{key}" in self.overrides or self.parser.has_option(section, key)

    def _fail(self, section, key, message, col_shift=0):
        line, col = self.locate(section, key)
        raise ConfigError(f"[{section}] {key}: {message}", line,
                          None if col is None else col + col_shift, self.source)

    # typed access ------------------------------------------------------------

    def get_str(self, section, key, default=_MISSING):
        v = self.raw(section, key, default)
        return v if v is None else str(v).strip()

    def get_float(self, section, key, default=_MISSING):
        v = self.raw(section, key, default)
        if v is None or isinstance(v, (int, float)):
            return v
        try:
            return float(v)
        except ValueError:
            self._fail(section, key, f"expected a number, got {v!r}")

    def get_int(self, section, key, default=_MISSING):
        v = self.raw(section, key, default)
        if v is None or isinstance(v, int):
            return v
        try:
            f = float(v)
        except ValueError:
            self._fail(section, key, f"expected an integer, got {v!r}")
        if not f.is_integer():
            self._fail(section, key, f"expected an integer, got {v!r}")
        return int(f)

    def get_bool(self, section, key, default=_MISSING):
        v = self.raw(section, key, default)
        if isinstance(v, bool) or v is None:
            return v
        s = str(v).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        self._fail(section, key, f"expected a boolean, got {v!r}")

    def get_floats(self, section, key, default=_MISSING):
        v = self.raw(section, key, default)
        if v is None or isinstance(v, (list, tuple)):
            return None if v is None else [float(x) for x in v]
        try:
            return [float(x) for x in re.split(r"[,\s]+", str(v).strip()) if x]
        except ValueError:
            self._fail(section, key, f"expected a list of numbers, got {v!r}")

    def get_points(self, section, key, default=_MISSING):
        """Semicolon-separated points, each a comma-separated coordinate list."""
        v = self.raw(section, key, default)
        if v is None or isinstance(v, (list, tuple)):
            return v
        try:
            return [[float(c) for c in p.split(",")] for p in str(v).split(";") if p.strip()]
        except ValueError:
            self._fail(section, key, f"expected points like '2,0; 3,0', got {v!r}")

    def get_field(self, section, key, d, default=_MISSING):
        v = self.raw(section, key, default)
        if not isinstance(v, str):
            return as_field(v, d)
        try:
            return ExprField.parse(v.strip(), d)
        except ExpressionError as exc:
            lead = len(v) - len(v.lstrip())
            self._fail(section, key, str(exc),
                       col_shift=(exc.offset or 0) + lead if exc.offset is not None else 0)

    # scenario ----------------------------------------------------------------

    def scenario(self) -> Scenario:
        """The scenario named by ``[scenario] preset`` or defined inline.

        Inline definitions use ``dimension`` plus optional ``a11``, ``a12``,
        ..., ``b1``, ..., ``V``; keys given next to a preset override the
        preset's coefficients.
        """
        sec = "scenario"
        preset = self.get_str(sec, "preset", None)
        if preset is not None:
            try:
                base = get_scenario(preset)
            except KeyError as exc:
                self._fail(sec, "preset", str(exc))
            d = base.d
            spec = base.spec
        else:
            d = self.get_int(sec, "dimension")
            if d < 1:
                self._fail(sec, "dimension", "dimension must be positive")
            base = Scenario(self.get_str(sec, "name", "custom"), OperatorSpec.build(d))
            spec = base.spec
        a = [list(row) for row in spec.a]
        for i in range(d):
            for j in range(i, d):
                key = f"a{i + 1}{j + 1}"
                if self.has(sec, key):
                    a[i][j] = a[j][i] = self.get_field(sec, key, d)
        b = list(spec.b)
        for i in range(d):
            if self.has(sec, f"b{i + 1}"):
                b[i] = self.get_field(sec, f"b{i + 1}", d)
        V = self.get_field(sec, "V", d) if self.has(sec, "V") else spec.V
        spec = OperatorSpec(d, tuple(tuple(r) for r in a), tuple(b), V, dict(spec.metadata))
        dom = "domain"
        return replace(
            base,
            spec=spec,
            shape=self.get_str(dom, "shape", base.shape),
            radius=self.get_float(dom, "radius", base.radius),
            inner_radius=self.get_float(dom, "inner_radius", base.inner_radius),
            h=self.get_float(dom, "h", base.h),
        )

    def resolved(self) -> dict:
        return {k: (v if isinstance(v, (int, float, bool, type(None))) else str(v))
                for k, v in sorted(self.used.items())}


def load_config(path: str | None, overrides=None) -> Config:
    if path is None:
        return Config("", None, overrides)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return Config(text, str(path), overrides)
