"""Read bias schemes, the twelve-scenario read protocol, and parameter sweeps."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .metrics import ReadMetrics, read_metrics, sense_margin
from .model import (R_OPEN, ArrayConfig, ConfigError, PatternKind, SelectorParams, SolveResult,
                    StatePattern, TerminalConfig, build_state_pattern)
from .solver import ConvergenceError, IterationSettings, SolverError, solve_nonlinear

logger = logging.getLogger(__name__)


class SchemeKind(str, Enum):
    HALF_V = "half_v"
    THIRD_V = "third_v"
    CUSTOM = "custom"


@dataclass(frozen=True)
class BiasScheme:
    """Read bias pattern.

    ``half_v`` puts every unselected line at V/2; ``third_v`` puts unselected
    word lines at V/3 and unselected bit lines at 2V/3.  ``custom`` takes the
    two unselected biases explicitly.
    """

    kind: SchemeKind = SchemeKind.HALF_V
    read_voltage: float = 1.0
    unselected_wl: float | None = None
    unselected_bl: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not math.isfinite(self.read_voltage):
            raise ConfigError(f"scheme.read_voltage must be finite, got {self.read_voltage!r}")
        if self.kind is SchemeKind.CUSTOM and (self.unselected_wl is None or self.unselected_bl is None):
            raise ConfigError("custom scheme needs unselected_wl and unselected_bl")

    def unselected_biases(self) -> tuple[float, float]:
        v = self.read_voltage
        if self.kind is SchemeKind.HALF_V:
            return v / 2, v / 2
        if self.kind is SchemeKind.THIRD_V:
            return v / 3, 2 * v / 3
        return float(self.unselected_wl), float(self.unselected_bl)


@dataclass(frozen=True)
class SenseDefaults:
    """Terminal resistances and idle-side voltages for protocol reads."""

    r_sens_wl1: float = 10.0
    r_sens_wl2: float = R_OPEN
    r_sens_bl1_selected: float = 1e3
    r_sens_bl1_unselected: float = 10.0
    r_sens_bl2: float = R_OPEN
    v_app_wl2: float = 0.0
    v_app_bl2: float = 0.0
    r_dual_side: float = 10.0

    def __post_init__(self):
        for name in ("r_sens_wl1", "r_sens_wl2", "r_sens_bl1_selected", "r_sens_bl1_unselected",
                     "r_sens_bl2", "r_dual_side"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"terminals.{name} must be positive and finite, got {value!r}")


READ_DEFAULTS = SenseDefaults()


def terminal_config_for(scheme: BiasScheme, selected, shape, sense: SenseDefaults = READ_DEFAULTS,
                        dual_bias: bool = False, dual_ground: bool = False) -> TerminalConfig:
    """Four-sided terminal configuration for reading ``selected`` (0-based)."""
    m, n = shape.shape if isinstance(shape, ArrayConfig) else shape
    i, j = selected
    if not (0 <= i < m and 0 <= j < n):
        raise IndexError(f"selected cell ({i + 1},{j + 1}) outside {m}x{n} array")
    u_wl, u_bl = scheme.unselected_biases()
    v_wl1 = np.full(m, u_wl)
    v_wl1[i] = scheme.read_voltage
    v_bl1 = np.full(n, u_bl)
    v_bl1[j] = 0.0
    r_bl1 = np.full(n, sense.r_sens_bl1_unselected)
    r_bl1[j] = sense.r_sens_bl1_selected
    r_wl1 = np.full(m, sense.r_sens_wl1)

    v_wl2, r_wl2 = np.full(m, sense.v_app_wl2), np.full(m, sense.r_sens_wl2)
    v_bl2, r_bl2 = np.full(n, sense.v_app_bl2), np.full(n, sense.r_sens_bl2)
    if dual_bias:
        v_wl2, r_wl2 = v_wl1.copy(), np.full(m, sense.r_dual_side)
    if dual_ground:
        v_bl2, r_bl2 = v_bl1.copy(), np.full(n, sense.r_dual_side)
    return TerminalConfig(v_wl1, v_wl2, v_bl1, v_bl2, r_wl1, r_wl2, r_bl1, r_bl2)


class Corner(str, Enum):
    NEAR = "near"
    FAR = "far"


class CellState(str, Enum):
    HIGH = "high"
    LOW = "low"
    RANDOM = "random"


# Position within a six-scenario corner block -> (selected state, unselected state).
_BLOCK = (
    (CellState.HIGH, CellState.HIGH),
    (CellState.LOW, CellState.HIGH),
    (CellState.HIGH, CellState.LOW),
    (CellState.LOW, CellState.LOW),
    (CellState.HIGH, CellState.RANDOM),
    (CellState.LOW, CellState.RANDOM),
)


def scenario_table() -> dict[int, tuple[Corner, CellState, CellState]]:
    """Canonical numbering: 1-6 read cell (1,1), 7-12 read cell (m,n)."""
    table = {}
    for index in range(1, 13):
        corner = Corner.NEAR if index <= 6 else Corner.FAR
        sel, unsel = _BLOCK[(index - 1) % 6]
        table[index] = (corner, sel, unsel)
    return table


_TABLE = scenario_table()
WORST_LOW_READ = 8
WORST_HIGH_READ = 9


@dataclass(frozen=True)
class ScenarioSpec:
    index: int
    scheme: BiasScheme = field(default_factory=BiasScheme)
    seed: int = 0

    def __post_init__(self):
        if self.index not in _TABLE:
            raise ConfigError(f"scenario index must be 1..12, got {self.index!r}")

    @property
    def corner(self) -> Corner:
        return _TABLE[self.index][0]

    @property
    def select_state(self) -> CellState:
        return _TABLE[self.index][1]

    @property
    def unselect_state(self) -> CellState:
        return _TABLE[self.index][2]

    def selected(self, m: int, n: int) -> tuple[int, int]:
        return (0, 0) if self.corner is Corner.NEAR else (m - 1, n - 1)

    def pattern_seed(self) -> int:
        return self.seed ^ self.index


@dataclass(frozen=True)
class ScenarioOutcome:
    spec: ScenarioSpec
    selected: tuple[int, int]
    terminals: TerminalConfig
    result: SolveResult
    metrics: ReadMetrics


def scenario_cells(spec: ScenarioSpec, m: int, n: int, r_low: float, r_high: float) -> np.ndarray:
    kind = {CellState.HIGH: PatternKind.ALL_HIGH, CellState.LOW: PatternKind.ALL_LOW,
            CellState.RANDOM: PatternKind.RANDOM}[spec.unselect_state]
    cells = build_state_pattern(StatePattern(kind, r_low, r_high, spec.pattern_seed()), m, n)
    cells[spec.selected(m, n)] = r_low if spec.select_state is CellState.LOW else r_high
    return cells


def run_scenario(spec: ScenarioSpec, base: ArrayConfig, settings: IterationSettings = IterationSettings(), *,
                 r_low: float = 1e4, r_high: float = 1e6, sense: SenseDefaults = READ_DEFAULTS) -> ScenarioOutcome:
    """Solve one protocol scenario on ``base``'s geometry, lines and selector.

    ``base.cell_resistance`` only supplies the shape; the cell states come
    from the scenario.
    """
    m, n = base.shape
    cfg = base.with_cells(scenario_cells(spec, m, n, r_low, r_high))
    selected = spec.selected(m, n)
    term = terminal_config_for(spec.scheme, selected, (m, n), sense)
    try:
        result = solve_nonlinear(cfg, term, settings)
    except SolverError as exc:
        raise _tag(exc, spec.index)
    return ScenarioOutcome(spec, selected, term, result, read_metrics(result, selected, term))


def _tag(exc: SolverError, index: int) -> SolverError:
    exc.args = (f"scenario {index}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
    exc.scenario = index
    return exc


def worst_case_reads(base: ArrayConfig, scheme: BiasScheme, settings: IterationSettings = IterationSettings(),
                     *, r_low: float = 1e4, r_high: float = 1e6, sense: SenseDefaults = READ_DEFAULTS, seed: int = 0):
    low = run_scenario(ScenarioSpec(WORST_LOW_READ, scheme, seed), base, settings,
                       r_low=r_low, r_high=r_high, sense=sense)
    high = run_scenario(ScenarioSpec(WORST_HIGH_READ, scheme, seed), base, settings,
                        r_low=r_low, r_high=r_high, sense=sense)
    return low, high


def worst_case_margin(base: ArrayConfig, scheme: BiasScheme, settings: IterationSettings = IterationSettings(),
                      **kwargs) -> float:
    """Sense margin (%) between the far-corner worst-case low and high reads."""
    low, high = worst_case_reads(base, scheme, settings, **kwargs)
    return sense_margin(low.result, high.result, low.selected, low.terminals, high.terminals)


class SweepAxis(str, Enum):
    LINE_RESISTANCE = "line_resistance"
    ARRAY_SIZE = "array_size"
    I_S = "i_s"
    ETA = "eta"
    TEMPERATURE = "temperature"
    R_SENS_RATIO = "r_sens_ratio"


@dataclass(frozen=True)
class SweepSpec:
    axis: SweepAxis
    points: tuple
    base: ArrayConfig
    scheme: BiasScheme = field(default_factory=BiasScheme)
    settings: IterationSettings = field(default_factory=IterationSettings)
    scenarios: tuple = (WORST_LOW_READ, WORST_HIGH_READ)
    r_low: float = 1e4
    r_high: float = 1e6
    sense: SenseDefaults = READ_DEFAULTS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "axis", SweepAxis(self.axis))
        pts = tuple(float(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "scenarios", tuple(int(s) for s in self.scenarios))
        if not pts:
            raise ConfigError("sweep needs at least one point")
        d = np.diff(pts)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigError("sweep points must be strictly monotone")
        if self.axis is SweepAxis.LINE_RESISTANCE:
            ok = all(p >= 0 for p in pts)
        elif self.axis is SweepAxis.ARRAY_SIZE:
            ok = all(p >= 1 and p == int(p) for p in pts)
        else:
            ok = all(p > 0 for p in pts)
        if not ok:
            raise ConfigError(f"invalid points for axis {self.axis.value}: {pts}")
        for s in self.scenarios:
            if s not in _TABLE:
                raise ConfigError(f"scenario index must be 1..12, got {s}")
        if self.base.selector is None and self.axis in (SweepAxis.I_S, SweepAxis.ETA, SweepAxis.TEMPERATURE):
            raise ConfigError(f"axis {self.axis.value} needs a selector")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    axis_value: float
    row_kind: str  # "scenario" or "margin"
    scenario: int | None
    apparent_resistance_ohm: float = math.nan
    v_sense_v: float = math.nan
    sense_margin_pct: float = math.nan
    i_select_a: float = math.nan
    i_leak_a: float = math.nan
    iterations: int = 0
    kcl_residual_a: float = math.nan
    converged: bool = False
    error: str = ""


def point_setup(spec: SweepSpec, value: float) -> tuple[ArrayConfig, SenseDefaults]:
    """Base configuration and terminal defaults at one sweep point."""
    base, sense = spec.base, spec.sense
    sel = base.selector
    if spec.axis is SweepAxis.LINE_RESISTANCE:
        base = ArrayConfig(base.cell_resistance, value, value, sel, base.diode_model)
    elif spec.axis is SweepAxis.ARRAY_SIZE:
        k = int(value)
        base = base.with_cells(np.full((k, k), spec.r_high))
    elif spec.axis is SweepAxis.I_S:
        base = replace(base, selector=replace(sel, i_s=value))
    elif spec.axis is SweepAxis.ETA:
        base = replace(base, selector=replace(sel, eta=value))
    elif spec.axis is SweepAxis.TEMPERATURE:
        base = replace(base, selector=replace(sel, temperature=value))
    elif spec.axis is SweepAxis.R_SENS_RATIO:
        sense = replace(sense, r_sens_bl1_selected=value * spec.r_low)
    return base, sense


def _run_task(task):
    spec, point, index = task
    value = spec.points[point]
    base, sense = point_setup(spec, value)
    sc = ScenarioSpec(index, spec.scheme, spec.seed)
    try:
        out = run_scenario(sc, base, spec.settings, r_low=spec.r_low, r_high=spec.r_high, sense=sense)
    except (SolverError, ArithmeticError) as exc:
        logger.warning("axis %s=%g: %s", spec.axis.value, value, exc)
        iterations = exc.result.iterations if isinstance(exc, ConvergenceError) else 0
        return SweepRow(spec.axis.value, value, "scenario", index, iterations=iterations, error=str(exc)), None
    met = out.metrics
    row = SweepRow(spec.axis.value, value, "scenario", index, met.apparent_resistance, met.v_sense, math.nan,
                   met.i_select, met.i_leak, out.result.iterations, out.result.kcl_residual, True)
    return row, out


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[SweepRow]:
    """One row per (point, scenario), plus a margin row per point when 8 and 9 are both run.

    Output order and content do not depend on ``jobs``.
    """
    tasks = [(spec, p, s) for p in range(len(spec.points)) for s in spec.scenarios]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_run_task, tasks))
    else:
        done = [_run_task(t) for t in tasks]

    rows: list[SweepRow] = []
    per_point = len(spec.scenarios)
    want_margin = WORST_LOW_READ in spec.scenarios and WORST_HIGH_READ in spec.scenarios
    for p, value in enumerate(spec.points):
        chunk = done[p * per_point:(p + 1) * per_point]
        rows.extend(r for r, _ in chunk)
        if not want_margin:
            continue
        by_index = {s: out for s, (_, out) in zip(spec.scenarios, chunk)}
        low, high = by_index[WORST_LOW_READ], by_index[WORST_HIGH_READ]
        if low is None or high is None:
            rows.append(SweepRow(spec.axis.value, value, "margin", None, error="worst-case read failed"))
            continue
        margin = sense_margin(low.result, high.result, low.selected, low.terminals, high.terminals)
        rows.append(SweepRow(spec.axis.value, value, "margin", None, sense_margin_pct=margin,
                             iterations=low.result.iterations + high.result.iterations,
                             kcl_residual_a=max(low.result.kcl_residual, high.result.kcl_residual),
                             converged=True))
    return rows


def _protocol_task(task):
    index, base, scheme, settings, r_low, r_high, sense, seed = task
    sc = ScenarioSpec(index, scheme, seed)
    try:
        out = run_scenario(sc, base, settings, r_low=r_low, r_high=r_high, sense=sense)
    except (SolverError, ArithmeticError) as exc:
        logger.warning("%s", exc)
        iterations = exc.result.iterations if isinstance(exc, ConvergenceError) else 0
        return SweepRow("scenario", float(index), "scenario", index, iterations=iterations, error=str(exc))
    met = out.metrics
    return SweepRow("scenario", float(index), "scenario", index, met.apparent_resistance, met.v_sense,
                    math.nan, met.i_select, met.i_leak, out.result.iterations, out.result.kcl_residual, True)


def run_protocol(base: ArrayConfig, scheme: BiasScheme, settings: IterationSettings = IterationSettings(), *,
                 indices=tuple(range(1, 13)), r_low: float = 1e4, r_high: float = 1e6,
                 sense: SenseDefaults = READ_DEFAULTS, seed: int = 0, jobs: int = 1) -> list[SweepRow]:
    """Apparent-resistance rows for the listed protocol scenarios, in the order given."""
    tasks = [(int(k), base, scheme, settings, r_low, r_high, sense, seed) for k in indices]
    for t in tasks:
        ScenarioSpec(t[0])
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_protocol_task, tasks))
    return [_protocol_task(t) for t in tasks]


class MapCase(str, Enum):
    A = "a"  # single bias, single ground
    B = "b"  # dual bias, single ground
    C = "c"  # single bias, dual ground
    D = "d"  # dual bias, dual ground


def map_case_for(dual_bias: bool, dual_ground: bool) -> MapCase:
    return {(False, False): MapCase.A, (True, False): MapCase.B,
            (False, True): MapCase.C, (True, True): MapCase.D}[(bool(dual_bias), bool(dual_ground))]


def map_terminals(case: MapCase, m: int, n: int, read_voltage: float = 1.0,
                  sense_r: float = 10.0, open_r: float = R_OPEN) -> TerminalConfig:
    """Every WL driven at ``read_voltage``, every BL grounded.

    An idle end is left open (``open_r``) at its own line's drive level, so
    the WL2 end sits at ``read_voltage`` and the BL2 end at 0 V.  Swapping
    word and bit lines then maps case b onto case c exactly.
    """
    case = MapCase(case)
    dual_bias = case in (MapCase.B, MapCase.D)
    dual_ground = case in (MapCase.C, MapCase.D)
    return TerminalConfig.uniform(
        m, n,
        v_wl1=read_voltage, v_wl2=read_voltage,
        r_wl1=sense_r, r_wl2=sense_r if dual_bias else open_r,
        r_bl1=sense_r, r_bl2=sense_r if dual_ground else open_r,
    )


def current_map_solve(case: MapCase, base: ArrayConfig, settings: IterationSettings = IterationSettings(),
                      **kwargs) -> SolveResult:
    return solve_nonlinear(base, map_terminals(case, *base.shape, **kwargs), settings)


def current_map_case(case: MapCase, base: ArrayConfig, settings: IterationSettings = IterationSettings(),
                     **kwargs) -> np.ndarray:
    """Cell-current grid with all cells under read bias for one biasing/grounding case."""
    return current_map_solve(case, base, settings, **kwargs).i_cell


def random_array(m: int, n: int, *, r_low=1e4, r_high=1e6, seed=0, r_line=1.0,
                 selector: SelectorParams | None = SelectorParams()) -> ArrayConfig:
    """Random-state array; ``selector=None`` gives ohmic cells."""
    cells = build_state_pattern(StatePattern(PatternKind.RANDOM, r_low, r_high, seed), m, n)
    return ArrayConfig(cells, r_line, r_line, selector)
