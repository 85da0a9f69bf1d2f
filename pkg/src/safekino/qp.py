"""ADMM solver for convex QPs with interval constraints.

    minimize    0.5 x'Hx + g'x
    subject to  lower <= Cx <= upper

The splitting follows the operator-splitting scheme popularized by OSQP:
a cached factorization of ``H + sigma I + C' diag(rho) C`` handles the
quadratic step and a clip onto ``[lower, upper]`` handles the constraints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_factor, cho_solve

Array = NDArray[np.float64]

log = logging.getLogger(__name__)

SOLVED = "solved"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class QpProblem:
    hessian: Array
    linear_term: Array
    constraint_matrix: Array
    lower: Array
    upper: Array
    # named row ranges, e.g. {"state": (0, 60)}; informational only
    blocks: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        h = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        c = np.asarray(self.constraint_matrix, dtype=float).reshape(-1, h.shape[0])
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "linear_term", np.asarray(self.linear_term, dtype=float).ravel())
        object.__setattr__(self, "constraint_matrix", c)
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).ravel())
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())
        if np.any(self.lower > self.upper):
            raise ValueError("constraint lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.hessian.shape[0]

    @property
    def m(self) -> int:
        return self.constraint_matrix.shape[0]

    def objective(self, x: Array) -> float:
        return float(0.5 * x @ self.hessian @ x + self.linear_term @ x)


@dataclass
class QpResult:
    status: str
    x: Array
    y: Array
    iterations: int
    objective: float
    primal_residual: float
    dual_residual: float
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def _inf_norm(v: Array) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _ruiz(h: Array, c: Array, iterations: int = 15) -> tuple[Array, Array, float]:
    n, m = h.shape[0], c.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    hs, cs = h.copy(), c.copy()
    for _ in range(iterations):
        col = np.max(np.abs(hs), axis=0)
        if m:
            col = np.maximum(col, np.max(np.abs(cs), axis=0))
            row = np.max(np.abs(cs), axis=1)
        else:
            row = np.zeros(0)
        col[col < 1e-8] = 1.0
        row[row < 1e-8] = 1.0
        dd = 1.0 / np.sqrt(col)
        ee = 1.0 / np.sqrt(row)
        hs = dd[:, None] * hs * dd[None, :]
        cs = ee[:, None] * cs * dd[None, :]
        d *= dd
        e *= ee
    mean_col = np.mean(np.max(np.abs(hs), axis=0))
    cost = 1.0 / max(mean_col, 1e-8)
    return d, e, float(np.clip(cost, 1e-4, 1e4))


class AdmmSolver:
    """Reusable workspace for QPs sharing a Hessian and constraint matrix.

    Only the linear term and the bounds may change between ``solve`` calls.
    A workspace is not thread-safe; give each thread its own.
    """

    def __init__(self, hessian: Array, constraint_matrix: Array, *, rho: float = 0.1,
                 sigma: float = 1e-6, alpha: float = 1.6, adaptive_rho: bool = True,
                 polish: bool = True, adapt_interval: int = 100):
        self.hessian = np.atleast_2d(np.asarray(hessian, dtype=float))
        self.constraint_matrix = np.asarray(constraint_matrix, dtype=float).reshape(
            -1, self.hessian.shape[0])
        self.sigma = sigma
        self.alpha = alpha
        self.adaptive_rho = adaptive_rho
        self.polish = polish
        self.rho0 = rho
        self.adapt_interval = adapt_interval
        self._d, self._e, self._cost = _ruiz(self.hessian, self.constraint_matrix)
        self._h = self._cost * self._d[:, None] * self.hessian * self._d[None, :]
        self._c = self._e[:, None] * self.constraint_matrix * self._d[None, :]
        self._factor_key = None
        self._factor = None

    @property
    def n(self) -> int:
        return self.hessian.shape[0]

    @property
    def m(self) -> int:
        return self.constraint_matrix.shape[0]

    def _rho_vector(self, rho: float, lower: Array, upper: Array) -> Array:
        vec = np.full(self.m, rho)
        vec[(lower == upper)] = rho * 1e3
        vec[np.isinf(lower) & np.isinf(upper)] = 1e-6
        return vec

    def _factorize(self, rho_vec: Array):
        key = rho_vec.tobytes()
        if key != self._factor_key:
            kkt = self._h + self.sigma * np.eye(self.n) + self._c.T @ (rho_vec[:, None] * self._c)
            self._factor = cho_factor(kkt)
            self._factor_key = key
        return self._factor

    def solve(self, linear_term: Array, lower: Array, upper: Array, *,
              tolerance: float = 1e-6, max_iterations: int = 20_000,
              warm_start: tuple[Array, Array] | None = None,
              infeasibility_tolerance: float = 1e-5) -> QpResult:
        g = np.asarray(linear_term, dtype=float).ravel()
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if self.m == 0:
            x = np.linalg.solve(self.hessian, -g)
            obj = float(0.5 * x @ self.hessian @ x + g @ x)
            return QpResult(SOLVED, x, np.zeros(0), 0, obj, 0.0, 0.0)

        d, e, cost = self._d, self._e, self._cost
        hs, cs = self._h, self._c
        gs = cost * d * g
        ls, us = e * lower, e * upper

        if warm_start is not None:
            x = warm_start[0] / d
            y = warm_start[1] * cost / e
        else:
            x = np.zeros(self.n)
            y = np.zeros(self.m)
        z = np.clip(cs @ x, ls, us)

        rho = self.rho0
        rho_vec = self._rho_vector(rho, lower, upper)
        factor = self._factorize(rho_vec)
        sigma, alpha = self.sigma, self.alpha
        status = MAX_ITERATIONS
        r_prim = r_dual = np.inf
        it = 0
        for it in range(1, max_iterations + 1):
            y_prev = y
            rhs = sigma * x - gs + cs.T @ (rho_vec * z - y)
            x_tilde = cho_solve(factor, rhs)
            z_tilde = cs @ x_tilde
            x = alpha * x_tilde + (1 - alpha) * x
            z_relax = alpha * z_tilde + (1 - alpha) * z
            z_new = np.clip(z_relax + y / rho_vec, ls, us)
            y = y + rho_vec * (z_relax - z_new)
            z = z_new

            if it % 5 and it != max_iterations:
                continue
            cx = cs @ x
            hx = hs @ x
            cty = cs.T @ y
            r_prim = _inf_norm((cx - z) / e)
            r_dual = _inf_norm((hx + gs + cty) / d) / cost
            if r_prim <= tolerance and r_dual <= tolerance:
                status = SOLVED
                break
            dy = y - y_prev
            dy_unscaled = e * dy
            norm_dy = _inf_norm(dy_unscaled)
            if norm_dy > 1e-12 and self._certifies_infeasibility(
                    dy, dy_unscaled, norm_dy, lower, upper, infeasibility_tolerance):
                status = INFEASIBLE
                break
            if self.adaptive_rho and it % self.adapt_interval == 0:
                prim_scale = max(_inf_norm(cx), _inf_norm(z), 1e-10)
                dual_scale = max(_inf_norm(hx), _inf_norm(cty), _inf_norm(gs), 1e-10)
                ratio = np.sqrt((_inf_norm(cx - z) / prim_scale)
                                / max(_inf_norm(hx + gs + cty) / dual_scale, 1e-16))
                if ratio > 5.0 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                    rho_vec = self._rho_vector(rho, lower, upper)
                    factor = self._factorize(rho_vec)

        x_out = d * x
        y_out = e * y / cost
        result = QpResult(status, x_out, y_out, it, 0.0, r_prim, r_dual)
        if status == INFEASIBLE:
            result.objective = np.inf
            return result
        if self.polish:
            self._polish(result, g, lower, upper, tolerance)
        result.objective = float(0.5 * result.x @ self.hessian @ result.x + g @ result.x)
        if result.status == MAX_ITERATIONS:
            log.warning("ADMM hit %d iterations (primal %.2e, dual %.2e)",
                        max_iterations, result.primal_residual, result.dual_residual)
        return result

    def _certifies_infeasibility(self, dy, dy_unscaled, norm_dy, lower, upper, eps) -> bool:
        if _inf_norm((self._c.T @ dy) / self._d) > eps * norm_dy * self._cost:
            return False
        pos = np.maximum(dy_unscaled, 0.0)
        neg = np.minimum(dy_unscaled, 0.0)
        small = eps * norm_dy
        if np.any((pos > small) & np.isinf(upper)) or np.any((neg < -small) & np.isinf(lower)):
            return False
        support = np.sum(np.where(np.isinf(upper), 0.0, upper) * pos) \
            + np.sum(np.where(np.isinf(lower), 0.0, lower) * neg)
        return support < -small

    def _polish(self, result: QpResult, g: Array, lower: Array, upper: Array,
                tolerance: float, rounds: int = 20) -> bool:
        """Re-solve the KKT system on the active set guessed from the ADMM iterate,
        correcting the guess (add violated rows, drop wrong-signed multipliers) for a
        few rounds. The result is replaced only by a point that passes the KKT check."""
        c = self.constraint_matrix
        x, y = result.x, result.y
        cx = c @ x
        lower_act = (cx - lower < -y) & np.isfinite(lower)
        upper_act = (upper - cx < y) & np.isfinite(upper) & ~lower_act
        n = self.n
        for _ in range(rounds):
            active = np.flatnonzero(lower_act | upper_act)
            target = np.where(lower_act, lower, upper)[active]
            k = active.size
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = self.hessian
            kkt[:n, n:] = c[active].T
            kkt[n:, :n] = c[active]
            rhs = np.concatenate([-g, target])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            xp = sol[:n]
            yp = np.zeros(self.m)
            yp[active] = sol[n:]
            cxp = c @ xp
            below = lower - cxp > tolerance
            above = cxp - upper > tolerance
            wrong = (lower_act & (yp > tolerance)) | (upper_act & (yp < -tolerance))
            dual = _inf_norm(self.hessian @ xp + g + c.T @ yp)
            if not (below.any() or above.any() or wrong.any()) and dual <= tolerance:
                viol = _inf_norm(np.maximum(lower - cxp, 0) + np.maximum(cxp - upper, 0))
                result.x, result.y = xp, yp
                result.primal_residual, result.dual_residual = viol, dual
                result.status = SOLVED
                result.polished = True
                return True
            if not (below.any() or above.any() or wrong.any()):
                return False
            lower_act = (lower_act & ~wrong) | below
            upper_act = (upper_act & ~wrong) | above
            upper_act &= ~lower_act
        return False


def solve_qp(qp: QpProblem, tolerance: float = 1e-6, max_iterations: int = 20_000,
             **settings) -> QpResult:
    """One-shot convenience wrapper around :class:`AdmmSolver`."""
    solver = AdmmSolver(qp.hessian, qp.constraint_matrix, **settings)
    return solver.solve(qp.linear_term, qp.lower, qp.upper,
                        tolerance=tolerance, max_iterations=max_iterations)
