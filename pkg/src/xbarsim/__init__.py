"""Static DC read simulation of one-diode-one-resistor crossbar arrays."""

from .device import (cell_chord_conductance, cell_current, cell_differential_conductance, lambert_w0,
                     lambert_w0_of_exp)
from .metrics import ReadMetrics, apparent_resistance, johnson_noise_rms, power_map, read_metrics, sense_margin
from .model import (ArrayConfig, ConfigError, DiodeModel, PatternKind, SelectorParams, SolveResult,
                    StatePattern, TerminalConfig, build_state_pattern, validate_array_config)
from .protocol import (BiasScheme, MapCase, ScenarioSpec, SchemeKind, SenseDefaults, SweepAxis, SweepSpec,
                       current_map_case, run_protocol, run_scenario, run_sweep, terminal_config_for,
                       worst_case_margin)
from .solver import (ConvergenceError, IterationSettings, NodalSystem, SolverError, assemble, line_currents,
                     solve_linear, solve_nonlinear)

__version__ = "0.1.0"

__all__ = [
    "apparent_resistance",
    "ArrayConfig",
    "assemble",
    "BiasScheme",
    "build_state_pattern",
    "cell_chord_conductance",
    "cell_current",
    "cell_differential_conductance",
    "ConfigError",
    "ConvergenceError",
    "current_map_case",
    "DiodeModel",
    "IterationSettings",
    "johnson_noise_rms",
    "lambert_w0",
    "lambert_w0_of_exp",
    "line_currents",
    "MapCase",
    "NodalSystem",
    "PatternKind",
    "power_map",
    "read_metrics",
    "ReadMetrics",
    "run_protocol",
    "run_scenario",
    "run_sweep",
    "ScenarioSpec",
    "SchemeKind",
    "SelectorParams",
    "sense_margin",
    "SenseDefaults",
    "solve_linear",
    "solve_nonlinear",
    "SolverError",
    "SolveResult",
    "StatePattern",
    "SweepAxis",
    "SweepSpec",
    "terminal_config_for",
    "TerminalConfig",
    "validate_array_config",
    "worst_case_margin",
]
