"""Domain types shared by the solver, metrics and protocol layers.

Every type here is a frozen dataclass holding numpy arrays; arrays are
copied and marked read-only on construction so validated instances can be
handed to worker processes without defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

K_B = 1.380649e-23  # J/K
Q_E = 1.602176634e-19  # C

# Stand-in for a zero-length line segment (1 micro-ohm).  Larger values push
# cell conductances below the rounding of the line diagonal.
G_MAX = 1e6
# Source resistance of an idle (open) line end.
R_OPEN = 1e8


class ConfigError(ValueError):
    """Raised when a configuration violates a type invariant."""


class DiodeModel(str, Enum):
    PAPER_EQ2 = "paper_eq2"
    EXACT_BANWELL = "exact_banwell"


@dataclass(frozen=True)
class PhysicalConstants:
    k_b: float = K_B
    q: float = Q_E


CONSTANTS = PhysicalConstants()


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SelectorParams:
    """Diode selector parameters: ideality factor, saturation current (A), temperature (K)."""

    eta: float = 1.8
    i_s: float = 1e-12
    temperature: float = 300.0

    def __post_init__(self):
        for name in ("eta", "i_s", "temperature"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"selector.{name} must be positive and finite, got {value!r}")

    @property
    def v_t(self) -> float:
        """Thermal voltage k_B*T/q in volts."""
        return CONSTANTS.k_b * self.temperature / CONSTANTS.q

    @property
    def n_vt(self) -> float:
        return self.eta * self.v_t


@dataclass(frozen=True)
class ArrayConfig:
    """Geometry, cell states and line resistances of an m x n crossbar.

    ``selector=None`` selects pure-resistor cells.
    """

    cell_resistance: np.ndarray
    r_wl: float = 5.0
    r_bl: float = 5.0
    selector: SelectorParams | None = field(default_factory=SelectorParams)
    diode_model: DiodeModel = DiodeModel.PAPER_EQ2

    def __post_init__(self):
        object.__setattr__(self, "cell_resistance", _frozen(self.cell_resistance))
        object.__setattr__(self, "diode_model", DiodeModel(self.diode_model))
        validate_array_config(self)

    @property
    def m(self) -> int:
        return self.cell_resistance.shape[0]

    @property
    def n(self) -> int:
        return self.cell_resistance.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cell_resistance.shape

    def wl_segment_conductance(self) -> np.ndarray:
        """Per-segment word-line conductances, shape (m, n-1), capped at ``G_MAX``."""
        g = G_MAX if self.r_wl <= 1.0 / G_MAX else 1.0 / self.r_wl
        return np.full((self.m, self.n - 1), g)

    def bl_segment_conductance(self) -> np.ndarray:
        """Per-segment bit-line conductances, shape (m-1, n), capped at ``G_MAX``."""
        g = G_MAX if self.r_bl <= 1.0 / G_MAX else 1.0 / self.r_bl
        return np.full((self.m - 1, self.n), g)

    def with_cells(self, cell_resistance) -> "ArrayConfig":
        return ArrayConfig(cell_resistance, self.r_wl, self.r_bl, self.selector, self.diode_model)


def validate_array_config(cfg: ArrayConfig) -> ArrayConfig:
    r = cfg.cell_resistance
    if r.ndim != 2:
        raise ConfigError(f"cell_resistance must be a 2-D grid, got {r.ndim} dimension(s)")
    m, n = r.shape
    if m < 1 or n < 1:
        raise ConfigError(f"array must have m >= 1 and n >= 1, got {m}x{n}")
    bad = np.argwhere(~np.isfinite(r) | (r <= 0))
    if bad.size:
        i, j = bad[0]
        raise ConfigError(
            f"cell_resistance({i + 1},{j + 1}) must be positive and finite, got {r[i, j]!r}"
            f" ({len(bad)} invalid cell(s))"
        )
    for name in ("r_wl", "r_bl"):
        value = getattr(cfg, name)
        if not np.isfinite(value) or value < 0:
            raise ConfigError(f"{name} must be >= 0 and finite, got {value!r}")
    if cfg.selector is not None and not isinstance(cfg.selector, SelectorParams):
        raise ConfigError("selector must be SelectorParams or None")
    return cfg


@dataclass(frozen=True)
class TerminalConfig:
    """Applied voltages and sense resistances on the four array sides.

    WL1 is the left end of every word line (j = 1), WL2 the right end.
    BL1 is the top end of every bit line (i = 1), BL2 the bottom end.
    """

    v_app_wl1: np.ndarray
    v_app_wl2: np.ndarray
    v_app_bl1: np.ndarray
    v_app_bl2: np.ndarray
    r_sens_wl1: np.ndarray
    r_sens_wl2: np.ndarray
    r_sens_bl1: np.ndarray
    r_sens_bl2: np.ndarray

    def __post_init__(self):
        for name in self._fields():
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name))))

    @staticmethod
    def _fields():
        return ("v_app_wl1", "v_app_wl2", "v_app_bl1", "v_app_bl2",
                "r_sens_wl1", "r_sens_wl2", "r_sens_bl1", "r_sens_bl2")

    @classmethod
    def uniform(cls, m: int, n: int, *, v_wl1=0.0, v_wl2=0.0, v_bl1=0.0, v_bl2=0.0,
                r_wl1=10.0, r_wl2=R_OPEN, r_bl1=10.0, r_bl2=R_OPEN) -> "TerminalConfig":
        return cls(
            np.full(m, v_wl1, float), np.full(m, v_wl2, float),
            np.full(n, v_bl1, float), np.full(n, v_bl2, float),
            np.full(m, r_wl1, float), np.full(m, r_wl2, float),
            np.full(n, r_bl1, float), np.full(n, r_bl2, float),
        )

    def replace(self, **changes) -> "TerminalConfig":
        values = {name: getattr(self, name) for name in self._fields()}
        values.update(changes)
        return TerminalConfig(**values)

    def validate(self, m: int, n: int) -> "TerminalConfig":
        for name in self._fields():
            arr = getattr(self, name)
            expected = m if "wl" in name else n
            if arr.ndim != 1 or arr.shape[0] != expected:
                raise ConfigError(f"{name} must have length {expected}, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")
            if name.startswith("r_sens"):
                bad = np.flatnonzero(arr <= 0)
                if bad.size:
                    raise ConfigError(f"{name}[{bad[0] + 1}] must be > 0, got {arr[bad[0]]!r}")
        return self


def validate_terminal_config(term: TerminalConfig, cfg: ArrayConfig) -> TerminalConfig:
    return term.validate(cfg.m, cfg.n)


@dataclass(frozen=True)
class SolveResult:
    """Converged node voltages and cell currents of one DC solve.

    ``i_cell`` is positive for current flowing from the word line into the
    bit line.
    """

    v_wl: np.ndarray
    v_bl: np.ndarray
    i_cell: np.ndarray
    iterations: int
    max_rel_delta: float
    kcl_residual: float
    converged: bool = True
    polish_steps: int = 0
    damping: float = 1.0
    linearization: str = "chord"

    @property
    def v_cell(self) -> np.ndarray:
        return self.v_wl - self.v_bl

    @property
    def shape(self) -> tuple[int, int]:
        return self.v_wl.shape


class PatternKind(str, Enum):
    ALL_HIGH = "all_high"
    ALL_LOW = "all_low"
    RANDOM = "random"


@dataclass(frozen=True)
class StatePattern:
    kind: PatternKind = PatternKind.RANDOM
    r_low: float = 1e4
    r_high: float = 1e6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        if not (0 < self.r_low < self.r_high) or not np.isfinite(self.r_high):
            raise ConfigError(f"need 0 < r_low < r_high, got r_low={self.r_low!r}, r_high={self.r_high!r}")


def build_state_pattern(pattern: StatePattern, m: int, n: int) -> np.ndarray:
    """Resistance grid for ``pattern``; random cells are low with probability 1/2."""
    if m < 1 or n < 1:
        raise ConfigError(f"pattern size must be at least 1x1, got {m}x{n}")
    if pattern.kind is PatternKind.ALL_HIGH:
        return np.full((m, n), float(pattern.r_high))
    if pattern.kind is PatternKind.ALL_LOW:
        return np.full((m, n), float(pattern.r_low))
    rng = np.random.default_rng(pattern.seed)
    low = rng.random((m, n)) < 0.5
    return np.where(low, float(pattern.r_low), float(pattern.r_high))
