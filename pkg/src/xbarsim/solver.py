"""Sparse nodal solve of the crossbar network.

Node ordering: word-line node (i, j) has flat index ``i*n + j`` and bit-line
node (i, j) has ``m*n + i*n + j`` (0-based).  Each WL node couples to its two
WL neighbours, its own BL node through the cell, and to the WL1/WL2
terminals at the row ends; BL nodes mirror this along the column, with BL1
at the top (i = 0) and BL2 at the bottom.

The conductance matrix has a fixed sparsity pattern, so :class:`_Stencil`
builds the CSR structure once and only rewrites the cell-dependent entries
on each fixed-point iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from . import device
from .model import ArrayConfig, ConfigError, SolveResult, TerminalConfig, validate_terminal_config

logger = logging.getLogger(__name__)

LINEARIZATIONS = ("chord", "differential")
_DIRECT_MAX_NODES = 100_000
_STALL_WINDOW = 10
_PROGRESS = 0.9  # a new best must beat the old one by 10%
# Damping is halved at most this many times before a stall counts as failure.
_MAX_HALVINGS = 4


class SolverError(RuntimeError):
    pass


class LinearSolveError(SolverError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConvergenceError(SolverError):
    """Fixed-point iteration ran out of iterations; ``result`` holds the last iterate."""

    def __init__(self, message, result: SolveResult, oscillating: bool):
        super().__init__(message)
        self.result = result
        self.oscillating = oscillating


@dataclass(frozen=True)
class IterationSettings:
    """Controls for the nonlinear fixed-point solve.

    ``linearization`` picks the per-cell conductance used in each linear
    solve.  ``"chord"`` uses the secant about zero bias, so the converged
    network carries exactly the diode-model currents.  ``"differential"``
    uses dI/dv_c as a plain conductance, which converges to a different
    (non-physical) fixed point.  It gives noticeably larger read margins and
    is kept for comparison with results computed that way.

    ``residual_tol=None`` resolves to 1e-10 times the largest terminal
    injection current.
    """

    rel_tol: float = 1e-4
    max_iterations: int = 200
    damping: float = 1.0
    residual_tol: float | None = None
    linearization: str = "chord"
    polish: bool = True
    linear_solver: str = "auto"

    def __post_init__(self):
        if not 0 < self.rel_tol < 1:
            raise ConfigError(f"solver.rel_tol must be in (0, 1), got {self.rel_tol!r}")
        if int(self.max_iterations) < 1:
            raise ConfigError(f"solver.max_iterations must be >= 1, got {self.max_iterations!r}")
        if not 0 < self.damping <= 1:
            raise ConfigError(f"solver.damping must be in (0, 1], got {self.damping!r}")
        if self.residual_tol is not None and not self.residual_tol > 0:
            raise ConfigError(f"solver.residual_tol must be > 0, got {self.residual_tol!r}")
        if self.linearization not in LINEARIZATIONS:
            raise ConfigError(f"solver.linearization must be one of {LINEARIZATIONS}, got {self.linearization!r}")
        if self.linear_solver not in ("auto", "direct", "cg"):
            raise ConfigError(f"solver.linear_solver must be auto, direct or cg, got {self.linear_solver!r}")


@dataclass(frozen=True)
class NodalSystem:
    m: int
    n: int
    conductance: sp.csr_matrix
    source: np.ndarray
    g_wl: np.ndarray  # (m, n-1) segment conductances
    g_bl: np.ndarray  # (m-1, n)
    residual_tol: float

    @property
    def dimension(self) -> int:
        return 2 * self.m * self.n

    def node_index(self, kind: str, i: int, j: int) -> int:
        if kind not in ("WL", "BL"):
            raise ValueError(f"kind must be 'WL' or 'BL', got {kind!r}")
        if not (0 <= i < self.m and 0 <= j < self.n):
            raise IndexError(f"node ({i}, {j}) outside {self.m}x{self.n} array")
        return (kind == "BL") * self.m * self.n + i * self.n + j

    def node_of(self, index: int) -> tuple[str, int, int]:
        mn = self.m * self.n
        if not 0 <= index < 2 * mn:
            raise IndexError(index)
        kind = "BL" if index >= mn else "WL"
        i, j = divmod(index % mn, self.n)
        return kind, i, j


def _terminal_injection(term: TerminalConfig) -> float:
    parts = [np.abs(term.v_app_wl1 / term.r_sens_wl1), np.abs(term.v_app_wl2 / term.r_sens_wl2),
             np.abs(term.v_app_bl1 / term.r_sens_bl1), np.abs(term.v_app_bl2 / term.r_sens_bl2)]
    return max(float(p.max()) for p in parts)


def resolve_residual_tol(settings: IterationSettings, term: TerminalConfig) -> float:
    if settings.residual_tol is not None:
        return settings.residual_tol
    injected = _terminal_injection(term)
    return 1e-10 * injected if injected > 0 else 1e-30


class _Stencil:
    """Fixed CSR pattern of the nodal matrix for one (array, terminals) pair."""

    def __init__(self, cfg: ArrayConfig, term: TerminalConfig):
        m, n = cfg.shape
        N = m * n
        self.m, self.n = m, n
        g_wl = cfg.wl_segment_conductance()
        g_bl = cfg.bl_segment_conductance()
        self.g_wl, self.g_bl = g_wl, g_bl

        g_t_wl1, g_t_wl2 = 1.0 / term.r_sens_wl1, 1.0 / term.r_sens_wl2
        g_t_bl1, g_t_bl2 = 1.0 / term.r_sens_bl1, 1.0 / term.r_sens_bl2

        # WL rows: columns [left, self, right, own BL]
        wl_left = np.zeros((m, n))
        wl_left[:, 1:] = g_wl
        wl_right = np.zeros((m, n))
        wl_right[:, :-1] = g_wl
        wl_diag = wl_left + wl_right
        wl_diag[:, 0] += g_t_wl1
        wl_diag[:, -1] += g_t_wl2
        # BL rows: columns [own WL, up, self, down]
        bl_up = np.zeros((m, n))
        bl_up[1:, :] = g_bl
        bl_down = np.zeros((m, n))
        bl_down[:-1, :] = g_bl
        bl_diag = bl_up + bl_down
        bl_diag[0, :] += g_t_bl1
        bl_diag[-1, :] += g_t_bl2

        idx = np.arange(N, dtype=np.int64).reshape(m, n)
        jj = np.broadcast_to(np.arange(n), (m, n))
        ii = np.broadcast_to(np.arange(m)[:, None], (m, n))

        wl_cols = np.stack([idx - 1, idx, idx + 1, idx + N], axis=-1).reshape(N, 4)
        wl_mask = np.stack([jj > 0, np.ones((m, n), bool), jj < n - 1, np.ones((m, n), bool)],
                           axis=-1).reshape(N, 4)
        wl_data = np.stack([-wl_left, wl_diag, -wl_right, np.zeros((m, n))], axis=-1).reshape(N, 4)

        bl_cols = np.stack([idx, idx + N - n, idx + N, idx + N + n], axis=-1).reshape(N, 4)
        bl_mask = np.stack([np.ones((m, n), bool), ii > 0, np.ones((m, n), bool), ii < m - 1],
                           axis=-1).reshape(N, 4)
        bl_data = np.stack([np.zeros((m, n)), -bl_up, bl_diag, -bl_down], axis=-1).reshape(N, 4)

        cols = np.concatenate([wl_cols[wl_mask], bl_cols[bl_mask]])
        mask = np.concatenate([wl_mask, bl_mask])
        counts = mask.sum(axis=1)
        indptr = np.zeros(2 * N + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        pos = np.cumsum(mask.ravel()).reshape(2 * N, 4) - 1

        itype = np.int32 if cols.size < 2**31 - 1 else np.int64
        self.indices = cols.astype(itype)
        self.indptr = indptr.astype(itype)
        self.base_data = np.concatenate([wl_data[wl_mask], bl_data[bl_mask]])
        self.pos_wl_diag = pos[:N, 1]
        self.pos_wl_cross = pos[:N, 3]
        self.pos_bl_cross = pos[N:, 0]
        self.pos_bl_diag = pos[N:, 2]
        self.dim = 2 * N

        src = np.zeros(2 * N)
        src_wl = src[:N].reshape(m, n)
        src_bl = src[N:].reshape(m, n)
        src_wl[:, 0] += term.v_app_wl1 * g_t_wl1
        src_wl[:, -1] += term.v_app_wl2 * g_t_wl2
        src_bl[0, :] += term.v_app_bl1 * g_t_bl1
        src_bl[-1, :] += term.v_app_bl2 * g_t_bl2
        self.base_source = src

    def build(self, cell_conductance: np.ndarray, cell_offset=None, residual_tol: float = 0.0) -> NodalSystem:
        g = np.asarray(cell_conductance, float).ravel()
        data = self.base_data.copy()
        data[self.pos_wl_diag] += g
        data[self.pos_bl_diag] += g
        data[self.pos_wl_cross] = -g
        data[self.pos_bl_cross] = -g
        K = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.dim, self.dim))
        K.has_sorted_indices = True
        src = self.base_source
        if cell_offset is not None:
            off = np.broadcast_to(np.asarray(cell_offset, float), (self.m, self.n)).ravel()
            src = src.copy()
            N = self.m * self.n
            src[:N] -= off
            src[N:] += off
        return NodalSystem(self.m, self.n, K, src, self.g_wl, self.g_bl, residual_tol)


def assemble(cfg: ArrayConfig, term: TerminalConfig, cell_conductance, cell_offset=None,
             residual_tol: float | None = None) -> NodalSystem:
    """Nodal system for fixed cell conductances.

    ``cell_offset`` is an optional constant current per cell (A, WL to BL)
    carried alongside the conductance.
    """
    validate_terminal_config(term, cfg)
    g = np.asarray(cell_conductance, float)
    if g.shape != cfg.shape:
        raise ConfigError(f"cell_conductance must have shape {cfg.shape}, got {g.shape}")
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise ConfigError("cell conductances must be positive and finite")
    if residual_tol is None:
        residual_tol = resolve_residual_tol(IterationSettings(), term)
    return _Stencil(cfg, term).build(g, cell_offset, residual_tol)


class _ChainPreconditioner:
    """Exact inverse of the line-chain blocks (all WL rows and all BL columns).

    Dropping the cell cross-coupling leaves m + n independent SPD tridiagonal
    systems; they are factored once per matrix with LAPACK ``pttrf``.
    """

    def __init__(self, sys: NodalSystem):
        m, n = sys.m, sys.n
        N = m * n
        diag = sys.conductance.diagonal()
        self.N, self.m, self.n = N, m, n
        e_wl = np.zeros((m, n))
        e_wl[:, :-1] = -sys.g_wl
        e_bl = np.zeros((n, m))
        e_bl[:, :-1] = -sys.g_bl.T
        d_bl = diag[N:].reshape(m, n).T.ravel()
        self.wl = self._factor(diag[:N].copy(), e_wl.ravel()[:-1].copy())
        self.bl = self._factor(d_bl.copy(), e_bl.ravel()[:-1].copy())

    @staticmethod
    def _factor(d, e):
        d, e, info = lapack.dpttrf(d, e)
        if info != 0:
            raise LinearSolveError(f"chain factorization failed (info={info})", np.inf, 0)
        return d, e

    def __call__(self, r):
        N, m, n = self.N, self.m, self.n
        out = np.empty_like(r)
        x, info = lapack.dpttrs(*self.wl, r[:N])
        out[:N] = x
        rb = r[N:].reshape(m, n).T.ravel()
        x, info = lapack.dpttrs(*self.bl, rb)
        out[N:] = x.reshape(n, m).T.ravel()
        return out


def solve_linear(sys: NodalSystem, x0=None, method: str = "auto", max_cg_iterations: int = 5000) -> np.ndarray:
    """Node voltages with ``||K v - b||_inf <= sys.residual_tol``."""
    K, b = sys.conductance, sys.source
    tol = sys.residual_tol
    if not np.any(b):
        return np.zeros_like(b)
    if method == "auto":
        method = "direct" if sys.dimension <= _DIRECT_MAX_NODES else "cg"

    if method == "direct":
        lu = spla.splu(K.tocsc())
        x = lu.solve(b)
        for _ in range(3):
            r = b - K @ x
            if np.max(np.abs(r)) <= tol:
                return x
            x = x + lu.solve(r)
        res = float(np.max(np.abs(b - K @ x)))
        if res <= _rounding_floor(K, x, tol):
            return x
        raise LinearSolveError(f"direct solve residual {res:.3e} exceeds {tol:.3e}", res, 3)

    prec = _ChainPreconditioner(sys)
    M = spla.LinearOperator(K.shape, matvec=prec, dtype=float)
    count = [0]

    def _tick(_):
        count[0] += 1

    x, info = spla.cg(K, b, x0=x0, rtol=0.0, atol=tol, maxiter=max_cg_iterations, M=M, callback=_tick)
    res = float(np.max(np.abs(b - K @ x)))
    if res > _rounding_floor(K, x, tol):
        raise LinearSolveError(f"CG stopped after {count[0]} iterations with residual {res:.3e} > {tol:.3e}",
                               res, count[0])
    return x


def _rounding_floor(K, x, tol):
    # Residual achievable in float64 when line conductances are huge (r_wl=0).
    scale = float(np.max(np.abs(K.data))) * float(np.max(np.abs(x), initial=0.0))
    return max(tol, 64 * np.finfo(float).eps * scale)


def line_currents(result: SolveResult, cfg: ArrayConfig, term: TerminalConfig):
    """Segment currents of every line.

    ``i_wl`` has shape (m, n+1): column k is the current flowing rightwards
    into WL node k (k = 0 is the WL1 terminal, k = n leaves through WL2).
    ``i_bl`` has shape (m+1, n): row k is the current flowing upwards out of
    BL node k toward BL1 (k = 0 leaves through BL1, k = m enters from BL2).
    With these orientations every junction satisfies
    ``i_wl[i, j] = i_cell[i, j] + i_wl[i, j+1]`` and
    ``i_bl[i, j] = i_cell[i, j] + i_bl[i+1, j]``.
    """
    v_wl, v_bl = result.v_wl, result.v_bl
    m, n = v_wl.shape
    i_wl = np.empty((m, n + 1))
    i_wl[:, 0] = (term.v_app_wl1 - v_wl[:, 0]) / term.r_sens_wl1
    i_wl[:, 1:n] = (v_wl[:, :-1] - v_wl[:, 1:]) * cfg.wl_segment_conductance()
    i_wl[:, n] = (v_wl[:, -1] - term.v_app_wl2) / term.r_sens_wl2
    i_bl = np.empty((m + 1, n))
    i_bl[0, :] = (v_bl[0, :] - term.v_app_bl1) / term.r_sens_bl1
    i_bl[1:m, :] = (v_bl[1:, :] - v_bl[:-1, :]) * cfg.bl_segment_conductance()
    i_bl[m, :] = (term.v_app_bl2 - v_bl[-1, :]) / term.r_sens_bl2
    return i_wl, i_bl


def kcl_residuals(i_wl, i_bl, i_cell):
    """Per-junction KCL mismatch on the WL and BL grids."""
    r_wl = i_wl[:, :-1] - i_cell - i_wl[:, 1:]
    r_bl = i_bl[:-1, :] - i_cell - i_bl[1:, :]
    return r_wl, r_bl


def _max_kcl(cfg, term, v_wl, v_bl, i_cell) -> float:
    probe = SolveResult(v_wl, v_bl, i_cell, 0, 0.0, 0.0)
    r_wl, r_bl = kcl_residuals(*line_currents(probe, cfg, term), i_cell)
    return float(max(np.max(np.abs(r_wl)), np.max(np.abs(r_bl))))


def _drive_voltages(term: TerminalConfig):
    # Each line is driven from whichever end has the smaller source resistance.
    wl = np.where(term.r_sens_wl1 <= term.r_sens_wl2, term.v_app_wl1, term.v_app_wl2)
    bl = np.where(term.r_sens_bl1 <= term.r_sens_bl2, term.v_app_bl1, term.v_app_bl2)
    return wl, bl


def solve_nonlinear(cfg: ArrayConfig, term: TerminalConfig,
                    settings: IterationSettings = IterationSettings()) -> SolveResult:
    """Fixed-point solve of the crossbar with nonlinear 1D1R cells.

    Starting from each cell's bias-scheme drive voltage, cell conductances
    are linearized, the sparse nodal system is solved, and the cell voltages
    are updated until the largest relative node-voltage change between two
    iterations is below ``settings.rel_tol``.  In chord mode a few Newton
    steps then drive the nonlinear KCL residual below the residual
    tolerance.
    """
    validate_terminal_config(term, cfg)
    m, n = cfg.shape
    N = m * n
    tol = resolve_residual_tol(settings, term)
    stencil = _Stencil(cfg, term)
    method = settings.linear_solver

    if cfg.selector is None:
        g = 1.0 / cfg.cell_resistance
        x = solve_linear(stencil.build(g, None, tol), method=method)
        x = _refine_linear(cfg, term, stencil, g, x, method)
        v_wl, v_bl = x[:N].reshape(m, n), x[N:].reshape(m, n)
        i_cell = g * (v_wl - v_bl)
        return SolveResult(v_wl, v_bl, i_cell, 1, 0.0, _max_kcl(cfg, term, v_wl, v_bl, i_cell),
                           linearization="ohmic")

    r, sel, model = cfg.cell_resistance, cfg.selector, cfg.diode_model
    lin = settings.linearization
    drive_wl, drive_bl = _drive_voltages(term)
    v_c = np.broadcast_to(drive_wl[:, None] - drive_bl[None, :], (m, n)).copy()
    offset = device.zero_bias_current(r, sel, model) if lin == "chord" else None

    damping = settings.damping
    halvings = 0
    x_prev = None
    g_prev = None
    delta = np.inf
    best = np.inf
    since_best = 0
    oscillating = False
    converged = False
    it = 0
    for it in range(1, int(settings.max_iterations) + 1):
        if lin == "chord":
            g_new = device.cell_chord_conductance(v_c, r, sel, model)
        else:
            g_new = device.cell_differential_conductance(v_c, r, sel, model)
        g = g_new if g_prev is None or damping == 1.0 else g_prev ** (1.0 - damping) * g_new ** damping
        g_prev = g
        x = solve_linear(stencil.build(g, offset, tol), x0=x_prev, method=method)
        v_c = x[:N].reshape(m, n) - x[N:].reshape(m, n)
        if x_prev is not None:
            delta = float(np.max(np.abs(x - x_prev) / np.maximum(np.abs(x), 1e-6)))
            logger.debug("iteration %d: max relative delta %.3e", it, delta)
            if delta <= settings.rel_tol:
                converged = True
                x_prev = x
                break
            if delta < _PROGRESS * best:
                best, since_best = delta, 0
            else:
                since_best += 1
                if since_best >= _STALL_WINDOW:
                    oscillating = True
                    if halvings >= _MAX_HALVINGS:
                        x_prev = x
                        break
                    damping *= 0.5
                    halvings += 1
                    best, since_best = np.inf, 0
                    logger.info("fixed point stalled at iteration %d; damping reduced to %.3g", it, damping)
        x_prev = x

    x = x_prev
    polish_steps = 0
    if converged and lin == "differential":
        x = _refine_linear(cfg, term, stencil, g_prev, x, method)
    v_wl, v_bl = x[:N].reshape(m, n), x[N:].reshape(m, n)
    if converged and lin == "chord" and settings.polish:
        v_wl, v_bl, polish_steps = _newton_polish(cfg, term, stencil, x, tol, method)

    v_c = v_wl - v_bl
    # Differential mode reports the branch currents of the network it solved.
    i_cell = device.cell_current(v_c, r, sel, model) if lin == "chord" else g_prev * v_c
    kcl = _max_kcl(cfg, term, v_wl, v_bl, i_cell)
    result = SolveResult(v_wl, v_bl, i_cell, it, delta, kcl, converged, polish_steps, damping, lin)
    if not converged:
        raise ConvergenceError(
            f"no convergence after {it} iterations (last delta {delta:.3e}, oscillating={oscillating})",
            result, oscillating)
    return result


def _kcl_vector(cfg, term, v_wl, v_bl, i_cell) -> np.ndarray:
    # Net current leaving each node, in the row order of the nodal matrix.  Built
    # from line-current differences, so it stays accurate when the node
    # voltages are large compared with the currents they drive.
    probe = SolveResult(v_wl, v_bl, i_cell, 0, 0.0, 0.0)
    r_wl, r_bl = kcl_residuals(*line_currents(probe, cfg, term), i_cell)
    return np.concatenate([-r_wl.ravel(), r_bl.ravel()])


def _refine_linear(cfg, term, stencil, g, x, method, max_steps: int = 3):
    """Iterative refinement of a fixed-conductance solve against the line-current residual."""
    m, n = cfg.shape
    N = m * n
    K = stencil.build(g)
    F = _kcl_vector(cfg, term, x[:N].reshape(m, n), x[N:].reshape(m, n), g * (x[:N] - x[N:]).reshape(m, n))
    best = float(np.max(np.abs(F)))
    for _ in range(max_steps):
        if best == 0:
            break
        try:
            x_new = x - solve_linear(replace(K, source=F, residual_tol=1e-6 * best), method=method)
        except LinearSolveError:
            break
        F_new = _kcl_vector(cfg, term, x_new[:N].reshape(m, n), x_new[N:].reshape(m, n),
                            g * (x_new[:N] - x_new[N:]).reshape(m, n))
        res = float(np.max(np.abs(F_new)))
        if res >= best:
            break
        x, F, best = x_new, F_new, res
    return x


def _newton_polish(cfg, term, stencil, x, tol, method, max_steps: int = 8):
    """Newton corrections on the nonlinear KCL residual.

    Steps continue past ``tol`` while each one still at least halves the
    residual, which takes global current balance down to rounding level.
    """
    m, n = cfg.shape
    N = m * n
    r, sel, model = cfg.cell_resistance, cfg.selector, cfg.diode_model

    def split(x):
        return x[:N].reshape(m, n), x[N:].reshape(m, n)

    def residual(x):
        v_wl, v_bl = split(x)
        return _kcl_vector(cfg, term, v_wl, v_bl, device.cell_current(v_wl - v_bl, r, sel, model))

    F = residual(x)
    best_res = float(np.max(np.abs(F)))
    steps = 0
    while steps < max_steps and best_res > 0:
        v_wl, v_bl = split(x)
        g_d = device.cell_differential_conductance(v_wl - v_bl, r, sel, model)
        jac = replace(stencil.build(g_d), source=F, residual_tol=1e-6 * best_res)
        try:
            step = solve_linear(jac, method=method)
        except LinearSolveError:
            break
        steps += 1
        x_new = x - step
        F_new = residual(x_new)
        res = float(np.max(np.abs(F_new)))
        if res >= best_res:
            break
        improved_enough = res <= 0.5 * best_res
        x, F, best_res = x_new, F_new, res
        if best_res <= tol and not improved_enough:
            break
    v_wl, v_bl = split(x)
    return v_wl, v_bl, steps


def with_settings(settings: IterationSettings, **changes) -> IterationSettings:
    return replace(settings, **changes)
