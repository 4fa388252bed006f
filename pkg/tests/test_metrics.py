import numpy as np
import pytest
from oracles import single_cell_circuit

from xbarsim.metrics import (apparent_resistance, johnson_noise_rms, power_map, read_metrics, sense_current,
                             sense_margin, sense_voltage)
from xbarsim.model import ArrayConfig, ConfigError, SelectorParams, TerminalConfig
from xbarsim.protocol import BiasScheme, terminal_config_for
from xbarsim.solver import line_currents, solve_nonlinear

SEL = SelectorParams()


def solve_read(cells, selected, scheme=BiasScheme(), r_line=5.0, selector=SEL):
    cfg = ArrayConfig(cells, r_line, r_line, selector)
    term = terminal_config_for(scheme, selected, cfg.shape)
    return cfg, term, solve_nonlinear(cfg, term)


def test_identical_results_zero_margin():
    _, term, res = solve_read(np.full((3, 3), 1e6), (2, 2))
    assert sense_margin(res, res, (2, 2), term) == 0.0


def test_margin_antisymmetric_and_pure():
    cells = np.full((4, 4), 1e4)
    cells[3, 3] = 1e6
    _, term, high = solve_read(cells, (3, 3))
    cells[3, 3] = 1e4
    _, _, low = solve_read(cells, (3, 3))
    m1 = sense_margin(low, high, (3, 3), term)
    assert m1 > 0
    assert sense_margin(high, low, (3, 3), term) == -m1
    assert sense_margin(low, high, (3, 3), term) == m1


def test_margin_rejects_mismatched_reads():
    _, term, a = solve_read(np.full((2, 2), 1e6), (0, 0))
    _, _, b = solve_read(np.full((3, 3), 1e6), (0, 0))
    with pytest.raises(ConfigError):
        sense_margin(a, b, (0, 0), term)
    other = term.replace(v_app_wl1=np.array([2.0, 0.5]))
    with pytest.raises(ConfigError):
        sense_margin(a, a, (0, 0), term, other)


@pytest.mark.parametrize("r_cell", [1e4, 1e6])
def test_apparent_resistance_single_cell_oracle(r_cell):
    cfg = ArrayConfig(np.array([[r_cell]]), 1e-6, 1e-6, SEL)
    term = TerminalConfig.uniform(1, 1, v_wl1=1.0, r_wl1=10.0, r_bl1=1e3)
    res = solve_nonlinear(cfg, term)
    _, v_bl, _ = single_cell_circuit(1.0, 10.0, r_cell, 1e3)
    expected = (1.0 - v_bl) / (v_bl / 1e3)
    assert apparent_resistance(res, (0, 0), term) == pytest.approx(expected, rel=1e-6)
    # The diode drop and source resistor add to the cell's own resistance.
    assert apparent_resistance(res, (0, 0), term) > r_cell


def test_collected_current_is_boundary_segment_current():
    rng = np.random.default_rng(1)
    cells = np.where(rng.random((8, 8)) < 0.5, 1e4, 1e6)
    cfg, term, res = solve_read(cells, (7, 7))
    _, i_bl = line_currents(res, cfg, term)
    for j in range(8):
        assert sense_current(res, j, term) == pytest.approx(i_bl[0, j], rel=1e-15)
    # Same current from the cells of the column, less the tiny BL2 inflow.
    col = res.i_cell[:, 7].sum() + i_bl[-1, 7]
    assert sense_current(res, 7, term) == pytest.approx(col, rel=1e-9)


def test_read_metrics_fields():
    rng = np.random.default_rng(2)
    cells = np.where(rng.random((6, 6)) < 0.5, 1e4, 1e6)
    cfg, term, res = solve_read(cells, (5, 5))
    met = read_metrics(res, (5, 5), term)
    assert met.v_sense == sense_voltage(res, 5, term)
    assert met.i_select == res.i_cell[5, 5]
    assert met.i_leak == pytest.approx(sense_current(res, 5, term) - met.i_select, rel=1e-12)
    assert met.apparent_resistance == apparent_resistance(res, (5, 5), term)
    np.testing.assert_array_equal(met.power_map, power_map(res))


def test_selected_outside_array():
    _, term, res = solve_read(np.full((2, 2), 1e6), (0, 0))
    with pytest.raises(IndexError):
        apparent_resistance(res, (2, 0), term)


def test_power_ohmic_single_cell():
    cfg = ArrayConfig(np.array([[1e4]]), 5.0, 5.0, None)
    term = TerminalConfig.uniform(1, 1, v_wl1=1.0, r_bl1=1e3)
    res = solve_nonlinear(cfg, term)
    i = res.i_cell[0, 0]
    assert power_map(res)[0, 0] == pytest.approx(i * i * 1e4, rel=1e-14)


def test_energy_balance():
    rng = np.random.default_rng(3)
    cells = np.where(rng.random((10, 12)) < 0.5, 1e4, 1e6)
    cfg, term, res = solve_read(cells, (9, 11), BiasScheme("third_v"))
    i_wl, i_bl = line_currents(res, cfg, term)
    v_wl, v_bl = res.v_wl, res.v_bl
    supplied = (term.v_app_wl1 * i_wl[:, 0]).sum() - (term.v_app_wl2 * i_wl[:, -1]).sum() \
        - (term.v_app_bl1 * i_bl[0]).sum() + (term.v_app_bl2 * i_bl[-1]).sum()
    sense = (i_wl[:, 0] ** 2 * term.r_sens_wl1).sum() + (i_wl[:, -1] ** 2 * term.r_sens_wl2).sum() \
        + (i_bl[0] ** 2 * term.r_sens_bl1).sum() + (i_bl[-1] ** 2 * term.r_sens_bl2).sum()
    lines = ((v_wl[:, :-1] - v_wl[:, 1:]) ** 2 / cfg.r_wl).sum() + ((v_bl[:-1] - v_bl[1:]) ** 2 / cfg.r_bl).sum()
    dissipated = power_map(res).sum() + sense + lines
    assert dissipated == pytest.approx(supplied, rel=1e-6)


def test_selected_cell_dominates_power_v3_all_high():
    cfg, term, res = solve_read(np.full((10, 10), 1e6), (9, 9), BiasScheme("third_v"))
    p = power_map(res)
    others = np.delete(p.ravel(), 99)
    assert np.all(others < p[9, 9])


def test_johnson_noise():
    # sqrt(4 k_B 300 1e6 1e9) at 40 digits.
    assert johnson_noise_rms(1e6, 300.0, 1e9) == pytest.approx(4.0703547756921631757e-3, rel=1e-14)
    assert johnson_noise_rms(1e6, 300.0, 1e9) > 4e-3
    assert johnson_noise_rms(1e3, 300.0, 0.0) == 0.0
    assert johnson_noise_rms(4e3, 300.0, 1e6) == pytest.approx(2 * johnson_noise_rms(1e3, 300.0, 1e6), rel=1e-15)


@pytest.mark.parametrize("args", [(0.0, 300.0, 1.0), (1e3, 0.0, 1.0), (1e3, 300.0, -1.0)])
def test_johnson_noise_domain(args):
    with pytest.raises(ValueError):
        johnson_noise_rms(*args)
