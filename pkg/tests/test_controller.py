from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safekino.controller import (
    RiccatiConvergenceError,
    desired_input,
    lqr_gain,
    reference_chart,
    riccati_residual,
    solve_dare,
)
from safekino.dynamics import ControlInput, State, chart_from_state, state_from_chart, step


def scalar_root(a: float, b: float = 1.0, q: float = 1.0, r: float = 1.0) -> float:
    # p = a^2 p - a^2 b^2 p^2 / (r + b^2 p) + q  <=>  b^2 p^2 + (r - a^2 r - q b^2) p - q r = 0
    c1 = r - a * a * r - q * b * b
    return (-c1 + np.sqrt(c1 * c1 + 4 * b * b * q * r)) / (2 * b * b)


def random_stabilizable(rng, n=None, m=None):
    n = n or int(rng.integers(2, 9))
    m = m or int(rng.integers(1, n + 1))
    a = rng.normal(size=(n, n))
    a *= rng.uniform(0.5, 1.4) / max(abs(np.linalg.eigvals(a)))
    b = rng.normal(size=(n, m))
    g = rng.normal(size=(n, n))
    q = g @ g.T / n + 0.1 * np.eye(n)
    h = rng.normal(size=(m, m))
    r = h @ h.T / m + 0.5 * np.eye(m)
    return a, b, q, r


def test_scalar_closed_form():
    p = solve_dare(0.5, 1.0, 1.0, 1.0)
    assert p[0, 0] == pytest.approx(scalar_root(0.5), abs=1e-6)
    assert scalar_root(0.5) == pytest.approx((0.25 + np.sqrt(4.0625)) / 2, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.2, 3.0), st.floats(0.1, 5.0), st.floats(0.1, 5.0))
def test_scalar_closed_form_property(a, b, q, r):
    p = solve_dare(a, b, q, r)
    assert p[0, 0] == pytest.approx(scalar_root(a, b, q, r), abs=1e-6)


def test_deadbeat_plant_returns_q(rng):
    q = np.diag(rng.uniform(0.5, 2.0, size=3))
    p = solve_dare(np.zeros((3, 3)), rng.normal(size=(3, 2)), q, np.eye(2))
    assert np.array_equal(p, q)


def test_random_systems_residual(rng):
    for _ in range(50):
        a, b, q, r = random_stabilizable(rng)
        p = solve_dare(a, b, q, r)
        assert riccati_residual(a, b, q, r, p) <= 1e-8


def test_unstabilizable_raises():
    a = np.diag([1.2, 0.5])
    b = np.array([[0.0], [1.0]])
    with pytest.raises(RiccatiConvergenceError):
        solve_dare(a, b, np.eye(2), np.eye(1), max_iterations=2000)


def test_default_design(model, design):
    p = design.riccati_solution
    assert np.max(np.abs(p - p.T)) <= 1e-10
    assert np.min(np.linalg.eigvalsh(p)) >= -1e-10
    q, r = np.diag(design.q_weights), np.diag(design.r_weights)
    assert riccati_residual(model.a_matrix, model.b_matrix, q, r, p) <= 1e-8
    assert max(abs(np.linalg.eigvals(design.closed_loop(model)))) < 1
    assert design.spectral_radius < 1


def test_cost_scaling_invariance(model, design):
    scaled = lqr_gain(model, 7.0 * design.q_weights, 7.0 * design.r_weights)
    assert np.allclose(scaled.gain, design.gain, rtol=0, atol=1e-9)


def test_heavier_input_cost_shrinks_gain(model, design):
    heavy = lqr_gain(model, design.q_weights, 2.0 * design.r_weights)
    assert np.linalg.norm(heavy.gain) <= np.linalg.norm(design.gain)


def test_at_reference_gives_hover(design, params):
    ref = reference_chart((0.3, -0.1, 0.4), (0.0, 0.0, 0.0), 0.1)
    u = desired_input(design, ref.copy(), ref).thrusts
    assert np.allclose(u, ControlInput.hover(params).thrusts, atol=0)


def test_above_reference_reduces_thrust(design, params):
    ref = reference_chart((0.0, 0.0, 0.5))
    x = State.hover((0.0, 0.0, 0.6))
    assert desired_input(design, x, ref).thrusts.sum() < params.mass * params.gravity


def test_matches_direct_multiply(design, rng):
    for _ in range(50):
        ref = reference_chart(rng.normal(size=3), rng.normal(size=3) * 0.2, rng.uniform(-1, 1))
        dxi = rng.normal(size=12) * 0.05
        u = desired_input(design, ref + dxi, ref).thrusts
        assert np.allclose(u - design.hover_input, -design.gain @ dxi, rtol=0, atol=1e-12)


def test_affine_superposition(design, rng):
    ref = reference_chart((0.1, 0.2, 0.3))
    u_h = design.hover_input
    for _ in range(50):
        d1, d2 = rng.normal(size=(2, 12)) * 0.05
        a, b = rng.uniform(-1, 1, size=2)
        lhs = desired_input(design, ref + a * d1 + b * d2, ref).thrusts - u_h
        rhs = a * (desired_input(design, ref + d1, ref).thrusts - u_h) \
            + b * (desired_input(design, ref + d2, ref).thrusts - u_h)
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_nonlinear_closed_loop_converges(design, params, model, rng):
    ref = reference_chart((0.0, 0.0, 0.5))
    steps = int(round(5.0 / model.dt))
    for _ in range(20):
        d = rng.normal(size=12)
        d *= 0.05 / np.linalg.norm(d)
        x = state_from_chart(ref + d)
        for _ in range(steps):
            x = step(x, desired_input(design, x, ref), params, model.dt)
        assert np.linalg.norm(chart_from_state(x) - ref) <= 1e-3
