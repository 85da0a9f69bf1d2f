"""Receding-horizon predictive safety filter on the hover-linearized model.

At every control step the filter solves

    min  |u_des - u(0)|^2 + 1e-6 sum_i |u(i) - u_hover|^2
    s.t. predicted states in the constraint box for i = 1..T,
         inputs in the input box for i = 0..T-1,
         predicted terminal state in the terminal ellipsoid,

and applies only ``u(0)``. The predicted states are eliminated (condensed), so
the decision vector is the stacked input deviation from hover. The terminal
ellipsoid enters the QP as its axis-aligned outer box; membership is checked
exactly after the solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .controller import LqrDesign
from .dynamics import (
    CHART_DIM,
    INPUT_DIM,
    POS,
    ControlInput,
    LinearModel,
    State,
    chart_error,
    chart_from_state,
)
from .qp import INFEASIBLE, AdmmSolver, QpProblem

Array = NDArray[np.float64]

log = logging.getLogger(__name__)

REGULARIZATION = 1e-6
HESSIAN_JITTER = 1e-8
INTERVENTION_THRESHOLD = 1e-6


class TerminalSetError(RuntimeError):
    """No positive ellipsoid level satisfies the certificates."""


@dataclass(frozen=True)
class ConstraintSet:
    lower: Array
    upper: Array

    def __post_init__(self) -> None:
        lo = np.array(self.lower, dtype=float).reshape(CHART_DIM)
        hi = np.array(self.upper, dtype=float).reshape(CHART_DIM)
        if np.any(lo > hi):
            raise ValueError("constraint lower bound exceeds upper bound")
        if not np.all((lo < 0) & (hi > 0)):
            raise ValueError("hover must lie strictly inside the constraint set")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def angle_box(cls, roll: float = 0.2, pitch: float = 0.05, yaw: float = 0.2) -> ConstraintSet:
        lo = np.full(CHART_DIM, -np.inf)
        hi = np.full(CHART_DIM, np.inf)
        lo[6:9] = [-roll, -pitch, -yaw]
        hi[6:9] = [roll, pitch, yaw]
        return cls(lo, hi)

    @property
    def finite_dims(self) -> NDArray[np.int64]:
        return np.flatnonzero(np.isfinite(self.lower) | np.isfinite(self.upper))

    def contains(self, xi: Array, tol: float = 0.0) -> bool:
        xi = np.asarray(xi, dtype=float)
        return bool(np.all(xi >= self.lower - tol) and np.all(xi <= self.upper + tol))

    def violations(self, xi: Array, tol: float = 0.0) -> NDArray[np.int64]:
        xi = np.asarray(xi, dtype=float)
        return np.flatnonzero((xi < self.lower - tol) | (xi > self.upper + tol))

    def scaled(self, factor: float) -> ConstraintSet:
        return ConstraintSet(self.lower * factor, self.upper * factor)

    def tightened(self, margin: float) -> ConstraintSet:
        """Finite bounds pulled inward by ``margin``; infinite ones stay open."""
        return ConstraintSet(self.lower + margin, self.upper - margin)


@dataclass(frozen=True)
class InputSet:
    lower: Array
    upper: Array

    def __post_init__(self) -> None:
        lo = np.array(self.lower, dtype=float).reshape(INPUT_DIM)
        hi = np.array(self.upper, dtype=float).reshape(INPUT_DIM)
        if np.any(lo > hi):
            raise ValueError("input lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def clamp(self, u: Array) -> Array:
        return np.clip(u, self.lower, self.upper)

    def contains(self, u: Array, tol: float = 0.0) -> bool:
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


@dataclass(frozen=True)
class TerminalSet:
    """Ellipsoid ``{xi : (xi - center)' P (xi - center) <= level}``.

    With ``free_position`` the ellipsoid may be re-centred at any hover position,
    so membership only constrains the non-position coordinates (the position
    offset is minimized out). Each re-centred copy carries the same certificates
    because the model is translation invariant in position.
    """

    center: Array
    shape: Array
    level: float
    free_position: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.array(self.center, dtype=float).reshape(CHART_DIM))
        object.__setattr__(self, "shape", np.array(self.shape, dtype=float))
        if not self.level > 0:
            raise ValueError("terminal level must be positive")
        p = self.shape
        pp = p[POS, POS]
        pn = p[POS, 3:]
        schur = p[3:, 3:] - pn.T @ np.linalg.solve(pp, pn)
        object.__setattr__(self, "_schur", schur)
        object.__setattr__(self, "_recenter", np.linalg.solve(pp, pn))
        reduced = schur if self.free_position else p
        object.__setattr__(self, "_whiten", np.linalg.cholesky(reduced).T)

    @property
    def whitening(self) -> Array:
        """``W`` with ``|W delta_t|^2`` the membership form on the terminal coordinates."""
        return self._whiten

    @property
    def half_widths(self) -> Array:
        """Support values ``sqrt(level * (P^-1)_jj)`` per chart axis."""
        return np.sqrt(self.level * np.diag(np.linalg.inv(self.shape)))

    def offset(self, xi: Array, center: Array | None = None) -> Array:
        c = self.center if center is None else center
        delta = chart_error(xi, c)
        if self.free_position:
            delta[POS] = -self._recenter @ delta[3:]
        return delta

    def value(self, xi: Array, center: Array | None = None) -> float:
        """Quadratic form at ``xi``; at most ``level`` inside."""
        delta = self.offset(xi, center)
        return float(delta @ self.shape @ delta)

    def contains(self, xi: Array, center: Array | None = None, tol: float = 0.0) -> bool:
        return self.value(xi, center) <= self.level * (1 + tol) + tol

    def anchor(self, xi: Array) -> Array:
        """Centre used by the backup law for ``xi``: nearest hover point in the P metric."""
        if not self.free_position:
            return self.center.copy()
        delta = self.offset(xi)
        c = self.center.copy()
        c[POS] = np.asarray(xi, dtype=float)[POS] - delta[POS]
        return c


def _ellipsoid_boundary_samples(shape: Array, level: float, count: int,
                                rng: np.random.Generator) -> Array:
    chol = np.linalg.cholesky(shape)
    eta = rng.normal(size=(count, shape.shape[0]))
    eta *= np.sqrt(level) / np.linalg.norm(eta, axis=1, keepdims=True)
    # delta' P delta = |L' delta|^2
    return np.linalg.solve(chol.T, eta.T).T


def disturbance_margin(shape: Array, disturbance_bound: Array, dt: float) -> float:
    """Upper bound on the P-norm of a one-step disturbance inside the box ``dt * d``."""
    w = np.abs(np.asarray(disturbance_bound, dtype=float)) * dt
    return float(np.sum(w * np.sqrt(np.diag(shape))))


def certificate_checks(design: LqrDesign, c_set: ConstraintSet, u_set: InputSet,
                       model: LinearModel, level: float, disturbance_bound=None,
                       samples: int = 10_000, seed: int = 0) -> dict[str, bool]:
    """The three terminal-set certificates at ``level``."""
    p, k = design.riccati_solution, design.gain
    p_inv = np.linalg.inv(p)
    support = np.sqrt(level * np.diag(p_inv))
    center = model.operating_chart
    containment = bool(np.all(center - support >= c_set.lower)
                       and np.all(center + support <= c_set.upper))
    u_support = np.sqrt(level * np.einsum("ij,jk,ik->i", k, p_inv, k))
    u_h = design.hover_input
    admissible = bool(np.all(u_h - u_support >= u_set.lower)
                      and np.all(u_h + u_support <= u_set.upper))
    if disturbance_bound is None:
        disturbance_bound = np.zeros(CHART_DIM)
    margin = disturbance_margin(p, disturbance_bound, model.dt)
    rng = np.random.default_rng(seed)
    deltas = _ellipsoid_boundary_samples(p, level, samples, rng)
    closed = model.a_matrix - model.b_matrix @ k
    nxt = deltas @ closed.T
    chol = np.linalg.cholesky(p)
    norms = np.linalg.norm(nxt @ chol, axis=1)
    invariant = bool(np.all(norms + margin <= np.sqrt(level)))
    return {"containment": containment, "input_admissible": admissible, "invariant": invariant}


def terminal_set_synthesis(design: LqrDesign, c_set: ConstraintSet, u_set: InputSet,
                           model: LinearModel, disturbance_bound=None, samples: int = 10_000,
                           seed: int = 0, bisection_steps: int = 50,
                           free_position: bool = True) -> TerminalSet:
    """Largest certified level of the Riccati ellipsoid around hover.

    ``c_max`` is the exact largest level passing containment and input
    admissibility; the sampled invariance check is then bisected on (0, c_max].
    """
    p, k = design.riccati_solution, design.gain
    p_inv = np.linalg.inv(p)
    center = model.operating_chart
    diag = np.diag(p_inv)
    room = np.minimum(c_set.upper - center, center - c_set.lower)
    finite = np.isfinite(room)
    c_max = np.inf
    if np.any(finite):
        c_max = float(np.min(room[finite] ** 2 / diag[finite]))
    u_h = design.hover_input
    u_room = np.minimum(u_set.upper - u_h, u_h - u_set.lower)
    if np.any(u_room <= 0):
        raise ValueError("hover input must lie strictly inside the input set")
    u_var = np.einsum("ij,jk,ik->i", k, p_inv, k)
    c_max = min(c_max, float(np.min(u_room ** 2 / u_var)))
    if not np.isfinite(c_max) or c_max <= 0:
        raise TerminalSetError("constraints leave no room around hover")

    def passes(level: float) -> bool:
        return all(certificate_checks(design, c_set, u_set, model, level, disturbance_bound,
                                      samples, seed).values())

    if passes(c_max):
        level = c_max
    else:
        lo, hi = 0.0, c_max
        for _ in range(bisection_steps):
            mid = 0.5 * (lo + hi)
            if passes(mid):
                lo = mid
            else:
                hi = mid
        level = lo
    if level <= 0:
        raise TerminalSetError("no positive level passes the terminal-set certificates")
    return TerminalSet(center, p, level, free_position)


# ---------------------------------------------------------------------------
# QP construction


@dataclass(frozen=True)
class Prediction:
    """Condensed prediction ``dxi_i = Phi_i dxi_0 + Gamma_i dU`` for i = 1..T."""

    phi: Array  # (T, n, n)
    gamma: Array  # (T, n, T*m)

    @classmethod
    def build(cls, a: Array, b: Array, horizon: int) -> Prediction:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        n, m = b.shape
        phi = np.empty((horizon, n, n))
        gamma = np.zeros((horizon, n, horizon * m))
        power = np.eye(n)
        for i in range(horizon):
            power = a @ power
            phi[i] = power
            if i > 0:
                gamma[i] = a @ gamma[i - 1]
            gamma[i][:, i * m:(i + 1) * m] = b
        return cls(phi, gamma)

    @property
    def horizon(self) -> int:
        return self.phi.shape[0]

    def states(self, delta0: Array, du: Array) -> Array:
        return self.phi @ delta0 + self.gamma @ du


def _terminal_dims(terminal: TerminalSet) -> NDArray[np.int64]:
    return np.arange(3, CHART_DIM) if terminal.free_position else np.arange(CHART_DIM)


def qp_structure(model: LinearModel, c_set: ConstraintSet, terminal: TerminalSet,
                 horizon: int, inner: bool = False
                 ) -> tuple[Prediction, Array, Array, dict[str, tuple[int, int]]]:
    """Hessian, constraint matrix and row layout; independent of the current state.

    The terminal block is the outer axis-aligned box of the ellipsoid, or with
    ``inner`` a box in whitened coordinates that lies inside it.
    """
    m = INPUT_DIM
    nu = horizon * m
    pred = Prediction.build(model.a_matrix, model.b_matrix, horizon)
    hessian = (2 * REGULARIZATION + HESSIAN_JITTER) * np.eye(nu)
    hessian[:m, :m] += 2 * np.eye(m)
    dims = c_set.finite_dims
    state_rows = pred.gamma[:, dims, :].reshape(-1, nu)
    input_rows = np.eye(nu)
    tdims = _terminal_dims(terminal)
    terminal_rows = pred.gamma[-1][tdims]
    if inner:
        terminal_rows = terminal.whitening @ terminal_rows
    c_mat = np.vstack([state_rows, input_rows, terminal_rows])
    s0, s1 = 0, state_rows.shape[0]
    i1 = s1 + nu
    blocks = {"state": (s0, s1), "input": (s1, i1), "terminal": (i1, i1 + len(tdims))}
    return pred, hessian, c_mat, blocks


def _qp_vectors(model, pred, xi_k, u_des, c_set, u_set, terminal, terminal_center,
                tightening, terminal_scale, inner=False):
    m = INPUT_DIM
    horizon = pred.horizon
    op = model.operating_chart
    u_h = model.operating_input.thrusts
    delta0 = chart_error(xi_k, op)
    free = pred.phi @ delta0  # (T, n)
    dims = c_set.finite_dims
    stage = np.arange(1, horizon + 1)[:, None] * tightening
    lo_state = (c_set.lower[dims] - op[dims])[None, :] + stage - free[:, dims]
    hi_state = (c_set.upper[dims] - op[dims])[None, :] - stage - free[:, dims]
    lo_in = np.tile(u_set.lower - u_h, horizon)
    hi_in = np.tile(u_set.upper - u_h, horizon)
    tdims = _terminal_dims(terminal)
    center_rel = chart_error(terminal_center, op)
    if inner:
        whiten = terminal.whitening
        half = np.full(len(tdims), np.sqrt(terminal.level / len(tdims))) * terminal_scale
        shift = whiten @ (center_rel[tdims] - free[-1, tdims])
    else:
        half = terminal.half_widths[tdims] * terminal_scale
        shift = center_rel[tdims] - free[-1, tdims]
    lo_t = shift - half
    hi_t = shift + half
    lower = np.concatenate([lo_state.ravel(), lo_in, lo_t])
    upper = np.concatenate([hi_state.ravel(), hi_in, hi_t])
    g = np.zeros(horizon * m)
    g[:m] = -2 * (np.asarray(u_des, dtype=float) - u_h)
    return g, lower, upper, delta0


def build_qp(model: LinearModel, x_k: Array, u_des, ref_window, c_set: ConstraintSet,
             u_set: InputSet, terminal: TerminalSet, horizon: int,
             tightening: float = 0.0) -> QpProblem:
    """Condensed QP in the stacked input deviations ``u(i|k) - u_hover``.

    ``ref_window`` supplies the terminal centre position when the terminal set is
    pinned (``free_position=False``); it may be ``None`` otherwise.
    """
    u_des = u_des.thrusts if isinstance(u_des, ControlInput) else u_des
    pred, hessian, c_mat, blocks = qp_structure(model, c_set, terminal, horizon)
    center = terminal_center_for(terminal, ref_window)
    g, lower, upper, _ = _qp_vectors(model, pred, x_k, u_des, c_set, u_set, terminal,
                                     center, tightening, 1.0)
    return QpProblem(hessian, g, c_mat, lower, upper, blocks)


def terminal_center_for(terminal: TerminalSet, ref_window) -> Array:
    center = terminal.center.copy()
    if ref_window is None or terminal.free_position:
        return center
    last = np.asarray(ref_window[-1], dtype=float)
    center[POS] = last[POS]
    return center


# ---------------------------------------------------------------------------
# the filter


@dataclass
class FilterDiagnostics:
    status: str
    iterations: int
    objective: float
    fallback: bool
    terminal_resolves: int
    terminal_value: float
    initial_state_admissible: bool


@dataclass(frozen=True)
class FilterOutput:
    u_safe: ControlInput
    intervened: bool
    diagnostics: FilterDiagnostics
    inputs: Array | None = field(default=None, repr=False)


class SafetyFilter:
    """Filter context plus its own solver workspace.

    The context (model, design, sets) is read-only; the workspace and the
    warm-start/backup memory are per instance, so use one instance per thread.
    """

    def __init__(self, model: LinearModel, design: LqrDesign, c_set: ConstraintSet,
                 u_set: InputSet, terminal: TerminalSet, horizon: int, *,
                 tightening: float = 0.0, tolerance: float = 1e-6,
                 max_iterations: int = 20_000, terminal_resolves: int = 1):
        self.model = model
        self.design = design
        self.c_set = c_set
        self.u_set = u_set
        self.terminal = terminal
        self.horizon = horizon
        self.tightening = tightening
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.terminal_resolves = terminal_resolves
        self.prediction, hessian, c_mat, self.blocks = qp_structure(model, c_set, terminal, horizon)
        self.solver = AdmmSolver(hessian, c_mat)
        _, _, inner_mat, _ = qp_structure(model, c_set, terminal, horizon, inner=True)
        self.inner_solver = AdmmSolver(hessian, inner_mat)
        self._warm: tuple[Array, Array] | None = None
        self._backup_center: Array | None = None

    def reset(self) -> None:
        self._warm = None
        self._backup_center = None

    def backup_input(self, xi: Array, center: Array | None = None) -> Array:
        """``u_hover - K (xi - center)`` clamped to the input box."""
        if center is None:
            center = self.terminal.anchor(xi)
        u = self.design.hover_input - self.design.gain @ chart_error(xi, center)
        return self.u_set.clamp(u)

    def predict(self, xi: Array, inputs: Array) -> Array:
        """Linear-model states x(1|k)..x(T|k) (absolute chart) for an input sequence."""
        du = (np.asarray(inputs, dtype=float) - self.model.operating_input.thrusts).ravel()
        delta0 = chart_error(xi, self.model.operating_chart)
        return self.prediction.states(delta0, du) + self.model.operating_chart

    def solve(self, xi: Array, u_des: Array, ref_window=None, warm_start=None):
        """Outer-box solve, up to ``terminal_resolves`` shrink-and-resolve rounds, then
        one solve on the inner (whitened) box whose solutions are members by construction.

        Returns ``(result, center, attempts, terminal_value)``.
        """
        center = terminal_center_for(self.terminal, ref_window)
        scale = 1.0
        attempts = 0
        inner = False
        while True:
            g, lower, upper, delta0 = _qp_vectors(
                self.model, self.prediction, xi, u_des, self.c_set, self.u_set,
                self.terminal, center, self.tightening, scale, inner)
            solver = self.inner_solver if inner else self.solver
            result = solver.solve(g, lower, upper, tolerance=self.tolerance,
                                  max_iterations=self.max_iterations, warm_start=warm_start)
            if not result.solved:
                if inner or result.status == INFEASIBLE:
                    return result, center, attempts, np.inf
            else:
                terminal_state = (self.prediction.states(delta0, result.x)[-1]
                                  + self.model.operating_chart)
                value = self.terminal.value(terminal_state, center)
                if value <= self.terminal.level * (1 + 1e-9) or inner:
                    return result, center, attempts, value
                warm_start = (result.x, result.y)
            attempts += 1
            if attempts > self.terminal_resolves or not result.solved:
                inner, scale = True, 1.0
                warm_start = (result.x, np.zeros(self.inner_solver.m)) if result.solved else None
            else:
                scale *= np.sqrt(self.terminal.level / value)

    def filter(self, state: State | Array, u_des: ControlInput | Array,
               ref_window=None) -> FilterOutput:
        xi = chart_from_state(state) if isinstance(state, State) else np.asarray(state, dtype=float)
        u_des = u_des.thrusts if isinstance(u_des, ControlInput) else np.asarray(u_des, dtype=float)
        admissible0 = self.c_set.contains(xi)
        result, center, resolves, value = self.solve(xi, u_des, ref_window, self._warm)
        ok = result.solved and value <= self.terminal.level * (1 + 1e-6)
        if ok:
            du = result.x.reshape(self.horizon, INPUT_DIM)
            inputs = du + self.model.operating_input.thrusts
            u_safe = inputs[0]
            shifted = np.concatenate([result.x[INPUT_DIM:], np.zeros(INPUT_DIM)])
            self._warm = (shifted, result.y)
            self._backup_center = None
            fallback = False
        else:
            if self._backup_center is None:
                self._backup_center = self.terminal.anchor(xi)
            u_safe = self.backup_input(xi, self._backup_center)
            inputs = None
            self._warm = None
            fallback = True
            log.info("safety filter fallback (status=%s, terminal value %.3g)",
                     result.status, value)
        intervened = bool(np.max(np.abs(u_safe - u_des)) > INTERVENTION_THRESHOLD)
        diag = FilterDiagnostics(result.status, result.iterations, result.objective, fallback,
                                 resolves, value, admissible0)
        return FilterOutput(ControlInput(u_safe), intervened, diag, inputs)
