"""Lambert-W evaluation and the diode + series-resistor cell model.

The cell current of a diode in series with a resistor ``r`` has the closed
form ``I = (n_vt / r) * W((i_s r / n_vt) * exp(v_c / n_vt))`` with
``n_vt = eta * k_B T / q``.  The exponential is never formed: the W argument
is handled through its logarithm so sweeps over eta, T and v_c cannot
overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DiodeModel, SelectorParams

_INV_E = np.exp(-1.0)
_EPS = np.finfo(float).eps
_MAX_HALLEY = 50

# Below this |v_c| the chord conductance is replaced by its v_c -> 0 limit.
V_EPS = 1e-9


def _as_array(x):
    scalar = np.ndim(x) == 0
    return np.atleast_1d(np.asarray(x, dtype=float)), scalar


def _unwrap(a, scalar):
    return float(a[0]) if scalar else a


def _w_direct(x: np.ndarray) -> np.ndarray:
    # Halley on w*exp(w) = x; used for -1/e <= x <= e.
    w = np.log1p(x)
    near_branch = x < -0.25
    if near_branch.any():
        p = np.sqrt(np.maximum(2.0 * (np.e * x[near_branch] + 1.0), 0.0))
        w[near_branch] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    active = np.ones(x.shape, dtype=bool)
    active &= (w + 1.0) > 1e-12
    for _ in range(_MAX_HALLEY):
        if not active.any():
            break
        wa, xa = w[active], x[active]
        ew = np.exp(wa)
        f = wa * ew - xa
        wp1 = wa + 1.0
        dw = f / (ew * wp1 - (wa + 2.0) * f / (2.0 * wp1))
        w[active] = wa - dw
        done = np.abs(dw) <= 4.0 * _EPS * np.maximum(np.abs(w[active]), 1e-300)
        done |= f == 0
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return w


def _w_log(t: np.ndarray) -> np.ndarray:
    # Halley on w + ln(w) = t, i.e. w = W(exp(t)); used for t >= 1.
    lt = np.log(t)
    w = t - lt + lt / t
    active = np.ones(t.shape, dtype=bool)
    for _ in range(_MAX_HALLEY):
        if not active.any():
            break
        wa, ta = w[active], t[active]
        f = wa + np.log(wa) - ta
        fp = 1.0 + 1.0 / wa
        # f'' = -1/w^2, written so huge w cannot overflow.
        dw = (f / fp) / (1.0 + (f / wa) / wa / (2.0 * fp * fp))
        w[active] = wa - dw
        done = np.abs(dw) <= 4.0 * _EPS * w[active]
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return w


def lambert_w0(x):
    """Principal branch of the Lambert W function for real ``x >= -1/e``.

    Accepts scalars or arrays. Raises ``ValueError`` outside the domain.
    """
    xa, scalar = _as_array(x)
    if np.any(np.isnan(xa)):
        raise ValueError("lambert_w0 is undefined for NaN")
    if np.any(xa < -_INV_E * (1.0 + 4.0 * _EPS)):
        raise ValueError(f"lambert_w0 domain is x >= -1/e, got min {xa.min()!r}")
    xa = np.maximum(xa, -_INV_E)
    w = np.empty_like(xa)
    big = xa > np.e
    if big.any():
        w[big] = _w_log(np.log(xa[big]))
    small = ~big
    if small.any():
        w[small] = _w_direct(xa[small])
    w[xa == -_INV_E] = -1.0
    return _unwrap(w, scalar)


def lambert_w0_of_exp(x):
    """W(exp(x)) without forming exp(x); valid for any finite ``x``."""
    xa, scalar = _as_array(x)
    if not np.all(np.isfinite(xa)):
        raise ValueError("lambert_w0_of_exp requires finite input")
    w = np.empty_like(xa)
    big = xa >= 1.0
    if big.any():
        w[big] = _w_log(xa[big])
    small = ~big
    if small.any():
        w[small] = lambert_w0(np.exp(xa[small]))
    return _unwrap(w, scalar)


def _lambert_value(v_c, r, sel: SelectorParams, model: DiodeModel):
    n_vt = sel.n_vt
    shift = sel.i_s * r if DiodeModel(model) is DiodeModel.EXACT_BANWELL else 0.0
    t = np.log(sel.i_s * np.asarray(r, float) / n_vt) + (np.asarray(v_c, float) + shift) / n_vt
    return lambert_w0_of_exp(t)


def cell_current(v_c, r, sel: SelectorParams, model: DiodeModel = DiodeModel.PAPER_EQ2):
    """Current (A) through a selector diode in series with resistance ``r``.

    ``paper_eq2`` is the Lambert-W closed form without a reverse saturation
    floor; ``exact_banwell`` includes the ``-i_s`` term and the ``i_s r``
    exponent shift, so it returns exactly zero current at zero bias.
    """
    w = _lambert_value(v_c, r, sel, model)
    i = sel.n_vt / np.asarray(r, float) * w
    if DiodeModel(model) is DiodeModel.EXACT_BANWELL:
        i = i - sel.i_s
    return float(i) if np.ndim(i) == 0 else i


def cell_differential_conductance(v_c, r, sel: SelectorParams,
                                  model: DiodeModel = DiodeModel.PAPER_EQ2):
    """dI/dv_c = W / (r (1 + W)), in siemens."""
    w = _lambert_value(v_c, r, sel, model)
    g = w / (np.asarray(r, float) * (1.0 + w))
    return float(g) if np.ndim(g) == 0 else g


def zero_bias_current(r, sel: SelectorParams, model: DiodeModel = DiodeModel.PAPER_EQ2):
    """Cell current at v_c = 0: about ``i_s`` for ``paper_eq2``, zero for ``exact_banwell``."""
    if DiodeModel(model) is DiodeModel.EXACT_BANWELL:
        return np.zeros_like(np.asarray(r, float)) if np.ndim(r) else 0.0
    return cell_current(np.zeros_like(np.asarray(r, float)) if np.ndim(r) else 0.0, r, sel, model)


def cell_chord_conductance(v_c, r, sel: SelectorParams, model: DiodeModel = DiodeModel.PAPER_EQ2):
    """Secant conductance of the cell about zero bias.

    Returns ``(I(v_c) - I(0)) / v_c``, which is positive for every ``v_c``
    because the current is strictly increasing.  Together with the constant
    offset ``I(0)`` from :func:`zero_bias_current` it reproduces the
    nonlinear current exactly: ``g * v_c + I(0) == I(v_c)``.  For
    ``exact_banwell`` the offset is zero and this is plain ``I / v_c``.
    Within ``V_EPS`` of zero bias the analytic limit (the differential
    conductance at zero) is returned.
    """
    v, scalar = _as_array(v_c)
    r_arr = np.broadcast_to(np.asarray(r, float), v.shape)
    g = np.empty_like(v)
    tiny = np.abs(v) <= V_EPS
    if tiny.any():
        g[tiny] = cell_differential_conductance(np.zeros(tiny.sum()), r_arr[tiny], sel, model)
    rest = ~tiny
    if rest.any():
        vr, rr = v[rest], r_arr[rest]
        g[rest] = (cell_current(vr, rr, sel, model) - zero_bias_current(rr, sel, model)) / vr
    return _unwrap(g, scalar)


@dataclass(frozen=True)
class CellOperatingPoint:
    v_c: float
    current: float
    chord_conductance: float
    differential_conductance: float


def operating_point(v_c: float, r: float, sel: SelectorParams,
                    model: DiodeModel = DiodeModel.PAPER_EQ2) -> CellOperatingPoint:
    return CellOperatingPoint(
        v_c=float(v_c),
        current=cell_current(v_c, r, sel, model),
        chord_conductance=cell_chord_conductance(v_c, r, sel, model),
        differential_conductance=cell_differential_conductance(v_c, r, sel, model),
    )
