"""Run configuration files (JSON) and CSV result output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ArrayConfig, ConfigError, DiodeModel, SelectorParams
from .protocol import BiasScheme, SenseDefaults, SweepRow
from .solver import IterationSettings


@dataclass(frozen=True)
class ArraySection:
    m: int = 100
    n: int = 100
    r_wl: float = 5.0
    r_bl: float = 5.0
    r_low: float = 1e4
    r_high: float = 1e6


@dataclass(frozen=True)
class SelectorSection:
    eta: float = 1.8
    i_s: float = 1e-12
    temperature: float = 300.0
    model: str = DiodeModel.PAPER_EQ2.value


@dataclass(frozen=True)
class RunConfig:
    array: ArraySection = field(default_factory=ArraySection)
    selector: SelectorSection | None = field(default_factory=SelectorSection)
    scheme: BiasScheme = field(default_factory=BiasScheme)
    terminals: SenseDefaults = field(default_factory=SenseDefaults)
    solver: IterationSettings = field(default_factory=IterationSettings)
    seed: int = 0

    def selector_params(self) -> SelectorParams | None:
        if self.selector is None:
            return None
        s = self.selector
        return SelectorParams(s.eta, s.i_s, s.temperature)

    def array_config(self, cells=None) -> ArrayConfig:
        """Array with the configured lines and selector; all cells high unless ``cells`` is given."""
        a = self.array
        if cells is None:
            cells = np.full((a.m, a.n), a.r_high)
        model = DiodeModel.PAPER_EQ2 if self.selector is None else DiodeModel(self.selector.model)
        return ArrayConfig(cells, a.r_wl, a.r_bl, self.selector_params(), model)


_SECTIONS = {
    "array": ArraySection,
    "selector": SelectorSection,
    "scheme": BiasScheme,
    "terminals": SenseDefaults,
    "solver": IterationSettings,
}
_INT_FIELDS = {"array.m", "array.n", "solver.max_iterations"}
_BOOL_FIELDS = {"solver.polish"}
_STR_FIELDS = {"selector.model", "scheme.kind", "solver.linearization", "solver.linear_solver"}
_OPTIONAL_FIELDS = {"solver.residual_tol", "scheme.unselected_wl", "scheme.unselected_bl"}


def _coerce(path: str, value):
    if path in _OPTIONAL_FIELDS and value is None:
        return None
    if path in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false, got {value!r}")
        return value
    if path in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number, got {value!r}")
    if path in _INT_FIELDS:
        if value != int(value):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _build_section(name: str, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name} must be an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
    kwargs = {key: _coerce(f"{name}.{key}", value) for key, value in raw.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(f"{name}.") else f"{name}: {msg}") from None
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _check_array(a: ArraySection):
    if a.m < 1:
        raise ConfigError(f"array.m must be >= 1, got {a.m}")
    if a.n < 1:
        raise ConfigError(f"array.n must be >= 1, got {a.n}")
    for key in ("r_wl", "r_bl"):
        v = getattr(a, key)
        if not (math.isfinite(v) and v >= 0):
            raise ConfigError(f"array.{key} must be >= 0, got {v!r}")
    if not (0 < a.r_low < a.r_high and math.isfinite(a.r_high)):
        raise ConfigError(f"array.r_low and array.r_high need 0 < r_low < r_high, got {a.r_low!r}, {a.r_high!r}")


def config_from_dict(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    for key in raw:
        if key not in _SECTIONS and key != "seed":
            raise ConfigError(f"unknown key {key}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name not in raw:
            continue
        if name == "selector" and raw[name] is None:
            kwargs[name] = None
            continue
        kwargs[name] = _build_section(name, cls, raw[name])
    if "seed" in raw:
        seed = raw["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        kwargs["seed"] = seed
    cfg = RunConfig(**kwargs)
    _check_array(cfg.array)
    if cfg.selector is not None:
        try:
            cfg.selector_params()
            DiodeModel(cfg.selector.model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def parse_config(path) -> RunConfig:
    """Read a JSON run configuration; omitted keys take the built-in defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(raw)


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        if section is None:
            out[name] = None
            continue
        d = {}
        for f in dataclasses.fields(section):
            v = getattr(section, f.name)
            d[f.name] = v.value if hasattr(v, "value") else v
        out[name] = d
    out["seed"] = cfg.seed
    return out


def dump_config(cfg: RunConfig, path=None) -> str:
    text = json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
    if path is not None:
        _write_text(path, text)
    return text


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.15e}"
    return str(value)


def _write_text(path, text: str):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def table_text(rows) -> str:
    header = [f.name for f in dataclasses.fields(SweepRow)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(getattr(row, h)) for h in header])
    return buf.getvalue()


def emit_table(rows, path=None) -> None:
    """Write sweep/protocol rows as CSV (``path=None`` or ``"-"`` means stdout)."""
    _write_text(path, table_text(rows))


def map_text(grid, value_name: str = "value") -> str:
    grid = np.asarray(grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", value_name])
    m, n = grid.shape
    for i in range(m):
        for j in range(n):
            w.writerow([i + 1, j + 1, _fmt(float(grid[i, j]))])
    return buf.getvalue()


def emit_map(grid, path=None, value_name: str = "value") -> None:
    """Write an m x n grid as long-form CSV rows ``i, j, value`` with 1-based indices."""
    _write_text(path, map_text(grid, value_name))
