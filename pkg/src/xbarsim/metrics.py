"""Read figures of merit computed from a converged solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CONSTANTS, ConfigError, SolveResult, TerminalConfig


@dataclass(frozen=True)
class ReadMetrics:
    apparent_resistance: float
    v_sense: float
    i_select: float
    i_leak: float
    power_map: np.ndarray


def _check_selected(result: SolveResult, selected):
    i, j = selected
    m, n = result.shape
    if not (0 <= i < m and 0 <= j < n):
        raise IndexError(f"selected cell {selected} outside {m}x{n} array")
    return i, j


def sense_current(result: SolveResult, j: int, term: TerminalConfig) -> float:
    """Current collected through BL ``j``'s ground-side (BL1) sense resistor."""
    return float((result.v_bl[0, j] - term.v_app_bl1[j]) / term.r_sens_bl1[j])


def sense_voltage(result: SolveResult, j: int, term: TerminalConfig) -> float:
    """Voltage dropped across BL ``j``'s BL1 sense resistor."""
    return float(result.v_bl[0, j] - term.v_app_bl1[j])


def apparent_resistance(result: SolveResult, selected, term: TerminalConfig) -> float:
    """Resistance the terminals see for the selected cell.

    (V_app on the selected WL - V across the sense resistor) divided by the
    current collected at the selected BL's grounded end.
    """
    i, j = _check_selected(result, selected)
    current = sense_current(result, j, term)
    if current == 0:
        raise ZeroDivisionError(f"no current collected on bit line {j + 1}")
    return float((term.v_app_wl1[i] - sense_voltage(result, j, term)) / current)


def sense_margin(result_low: SolveResult, result_high: SolveResult, selected, term: TerminalConfig,
                 term_high: TerminalConfig | None = None) -> float:
    """Sense margin in percent of the selected WL's applied voltage.

    ``result_low`` is the low-state read, ``result_high`` the high-state read.
    Negative values mean the read window has closed.
    """
    if result_low.shape != result_high.shape:
        raise ConfigError(f"results have different shapes: {result_low.shape} vs {result_high.shape}")
    i, j = _check_selected(result_low, selected)
    term_high = term if term_high is None else term_high
    if term_high.v_app_wl1[i] != term.v_app_wl1[i]:
        raise ConfigError("low and high reads use different selected word-line voltages")
    v_low = sense_voltage(result_low, j, term)
    v_high = sense_voltage(result_high, j, term_high)
    return float(100.0 * (v_low - v_high) / term.v_app_wl1[i])


def power_map(result: SolveResult) -> np.ndarray:
    """Power dissipated in each cell (diode and memristor together), in watts."""
    return result.i_cell * (result.v_wl - result.v_bl)


def read_metrics(result: SolveResult, selected, term: TerminalConfig) -> ReadMetrics:
    i, j = _check_selected(result, selected)
    collected = sense_current(result, j, term)
    i_select = float(result.i_cell[i, j])
    return ReadMetrics(
        apparent_resistance=apparent_resistance(result, selected, term),
        v_sense=sense_voltage(result, j, term),
        i_select=i_select,
        i_leak=collected - i_select,
        power_map=power_map(result),
    )


def johnson_noise_rms(r_sens: float, temperature: float, bandwidth: float) -> float:
    """Thermal noise voltage sqrt(4 k_B T R df) of a sense resistor.

    Informational only; nothing in the margin calculation uses it.
    """
    if r_sens <= 0 or temperature <= 0 or bandwidth < 0:
        raise ValueError(
            f"need r_sens > 0, temperature > 0, bandwidth >= 0; got {r_sens}, {temperature}, {bandwidth}")
    return float(np.sqrt(4.0 * CONSTANTS.k_b * temperature * r_sens * bandwidth))
