"""LQR trajectory tracking on the hover-linearized model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .dynamics import (
    ANG,
    ControlInput,
    LinearModel,
    State,
    chart_error,
    chart_from_state,
)

Array = NDArray[np.float64]

DEFAULT_Q_WEIGHTS = (10.0,) * 3 + (1.0,) * 3 + (5.0,) * 3 + (0.1,) * 3
DEFAULT_R_WEIGHTS = (1e3,) * 4


class RiccatiConvergenceError(RuntimeError):
    """The DARE fixed-point iteration did not settle."""


def riccati_residual(a: Array, b: Array, q: Array, r: Array, p: Array) -> float:
    """Infinity norm of ``A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q``."""
    bpa = b.T @ p @ a
    res = a.T @ p @ a - p - bpa.T @ np.linalg.solve(r + b.T @ p @ b, bpa) + q
    return float(np.max(np.abs(res)))


def solve_dare(a, b, q, r, tol: float = 1e-10, max_iterations: int = 100_000) -> Array:
    """Discrete algebraic Riccati equation by value iteration from ``P0 = Q``.

    Stops once ``max|P_{k+1} - P_k| <= tol``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    p = q.copy()
    # a diverging iterate is caught by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iterations):
            bpa = b.T @ p @ a
            p_next = a.T @ p @ a - bpa.T @ np.linalg.solve(r + b.T @ p @ b, bpa) + q
            p_next = 0.5 * (p_next + p_next.T)
            delta = np.max(np.abs(p_next - p))
            p = p_next
            if delta <= tol:
                return p
            if not np.all(np.isfinite(p)):
                break
    raise RiccatiConvergenceError(
        "Riccati iteration did not converge; check stabilizability and weights")


@dataclass(frozen=True)
class LqrDesign:
    q_weights: Array
    r_weights: Array
    gain: Array
    riccati_solution: Array
    hover_input: Array
    spectral_radius: float

    def closed_loop(self, model: LinearModel) -> Array:
        return model.a_matrix - model.b_matrix @ self.gain


def lqr_gain(model: LinearModel, q_weights=DEFAULT_Q_WEIGHTS,
             r_weights=DEFAULT_R_WEIGHTS) -> LqrDesign:
    q_weights = np.asarray(q_weights, dtype=float)
    r_weights = np.asarray(r_weights, dtype=float)
    a, b = model.a_matrix, model.b_matrix
    q, r = np.diag(q_weights), np.diag(r_weights)
    p = solve_dare(a, b, q, r)
    k = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    rho = max(abs(np.linalg.eigvals(a - b @ k)))
    if rho >= 1.0:
        raise RiccatiConvergenceError(f"closed loop is not stable (spectral radius {rho})")
    return LqrDesign(q_weights, r_weights, k, p, model.operating_input.thrusts.copy(), float(rho))


def reference_chart(position, velocity=(0.0, 0.0, 0.0), yaw: float = 0.0) -> Array:
    """Level, rate-free chart point for a reference sample."""
    xi = np.zeros(12)
    xi[0:3] = position
    xi[3:6] = velocity
    xi[8] = yaw
    return xi


def desired_input(design: LqrDesign, x: State | Array, ref: Array) -> ControlInput:
    """``u_hover - K (xi - xi_ref)``; deliberately left unclamped."""
    xi = chart_from_state(x) if isinstance(x, State) else np.asarray(x, dtype=float)
    err = chart_error(xi, ref)
    return ControlInput(design.hover_input - design.gain @ err)


__all__ = [
    "ANG",
    "DEFAULT_Q_WEIGHTS",
    "DEFAULT_R_WEIGHTS",
    "LqrDesign",
    "RiccatiConvergenceError",
    "desired_input",
    "lqr_gain",
    "reference_chart",
    "riccati_residual",
    "solve_dare",
]
