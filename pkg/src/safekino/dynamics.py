"""Quadrotor rigid-body model, RK4 integration and hover linearization.

The simulator state carries a unit quaternion ``[w, x, y, z]`` (body to world).
Controllers and constraints work on a 12-dimensional Euler chart

    xi = [position(3), velocity(3), roll, pitch, yaw, body rates(3)]

with ZYX (yaw-pitch-roll) angles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

Array = NDArray[np.float64]

CHART_DIM = 12
INPUT_DIM = 4
POS = slice(0, 3)
VEL = slice(3, 6)
ANG = slice(6, 9)
RATE = slice(9, 12)


@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 0.027
    inertia_diag: tuple[float, float, float] = (1.4e-5, 1.4e-5, 2.17e-5)
    arm_length: float = 0.0397
    torque_coefficient: float = 0.006
    gravity: float = 9.81
    rotor_thrust_min: float = 0.0
    rotor_thrust_max: float = 0.15

    def __post_init__(self) -> None:
        object.__setattr__(self, "inertia_diag", tuple(float(v) for v in self.inertia_diag))
        if len(self.inertia_diag) != 3:
            raise ValueError("inertia_diag must have three components")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not all(v > 0 for v in self.inertia_diag):
            raise ValueError(f"inertia components must be positive, got {self.inertia_diag}")
        if not self.arm_length > 0:
            raise ValueError(f"arm_length must be positive, got {self.arm_length}")
        if not 0 <= self.rotor_thrust_min < self.rotor_thrust_max:
            raise ValueError("need 0 <= rotor_thrust_min < rotor_thrust_max")

    @property
    def inertia(self) -> Array:
        return np.asarray(self.inertia_diag, dtype=float)

    @property
    def hover_thrust(self) -> float:
        """Per-rotor thrust balancing gravity."""
        return self.mass * self.gravity / 4.0


@dataclass(frozen=True)
class State:
    position: Array = field(default_factory=lambda: np.zeros(3))
    velocity: Array = field(default_factory=lambda: np.zeros(3))
    attitude: Array = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    body_rates: Array = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        for name in ("position", "velocity", "attitude", "body_rates"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))

    def to_vector(self) -> Array:
        return np.concatenate([self.position, self.velocity, self.attitude, self.body_rates])

    @classmethod
    def from_vector(cls, vec: Array) -> State:
        vec = np.asarray(vec, dtype=float)
        return cls(vec[0:3], vec[3:6], vec[6:10], vec[10:13])

    @classmethod
    def hover(cls, position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> State:
        return cls(position=np.asarray(position, dtype=float),
                   attitude=quaternion_from_euler(0.0, 0.0, yaw))


@dataclass(frozen=True)
class ControlInput:
    thrusts: Array

    def __post_init__(self) -> None:
        thrusts = np.array(self.thrusts, dtype=float).reshape(INPUT_DIM)
        if not np.all(np.isfinite(thrusts)):
            raise ValueError(f"non-finite rotor thrust {thrusts}")
        object.__setattr__(self, "thrusts", thrusts)

    @classmethod
    def hover(cls, params: QuadrotorParams) -> ControlInput:
        return cls(np.full(INPUT_DIM, params.hover_thrust))


@dataclass(frozen=True)
class LinearModel:
    """Discrete ZOH model ``dxi+ = A dxi + B du`` about a hover equilibrium."""

    a_matrix: Array
    b_matrix: Array
    dt: float
    operating_state: State
    operating_input: ControlInput

    @property
    def operating_chart(self) -> Array:
        return chart_from_state(self.operating_state)


# ---------------------------------------------------------------------------
# quaternion helpers


def quat_multiply(p: Array, q: Array) -> Array:
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def rotation_matrix(q: Array) -> Array:
    """Body-to-world rotation matrix of a unit quaternion."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quaternion_from_euler(roll: float, pitch: float, yaw: float) -> Array:
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def euler_from_quaternion(q: Array) -> tuple[float, float, float]:
    """ZYX angles ``(roll, pitch, yaw)``; roll, yaw in (-pi, pi], pitch in [-pi/2, pi/2].

    Roll is taken first and then divided out of the rotation, so pitch and yaw
    stay consistent with it even at gimbal lock.
    """
    r = rotation_matrix(np.asarray(q, dtype=float))
    roll = np.arctan2(r[2, 1], r[2, 2])
    c, s = np.cos(roll), np.sin(roll)
    # columns 1 and 2 of R @ Rx(-roll) = Rz(yaw) Ry(pitch)
    pitch = np.arctan2(-r[2, 0], r[2, 1] * s + r[2, 2] * c)
    yaw = np.arctan2(r[0, 2] * s - r[0, 1] * c, r[1, 1] * c - r[1, 2] * s)
    # atan2 may return -pi; fold onto the half-open interval
    if roll == -np.pi:
        roll = np.pi
    if yaw == -np.pi:
        yaw = np.pi
    return float(roll), float(pitch), float(yaw)


def euler_rate_matrix(roll: float, pitch: float) -> Array:
    """Maps body rates to ZYX Euler angle rates."""
    sr, cr = np.sin(roll), np.cos(roll)
    tp, cp = np.tan(pitch), np.cos(pitch)
    return np.array([
        [1.0, sr * tp, cr * tp],
        [0.0, cr, -sr],
        [0.0, sr / cp, cr / cp],
    ])


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle) + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def chart_from_state(x: State) -> Array:
    roll, pitch, yaw = euler_from_quaternion(x.attitude)
    return np.concatenate([x.position, x.velocity, [roll, pitch, yaw], x.body_rates])


def state_from_chart(xi: Array) -> State:
    xi = np.asarray(xi, dtype=float)
    return State(xi[POS], xi[VEL], quaternion_from_euler(*xi[ANG]), xi[RATE])


def chart_error(xi: Array, xi_ref: Array) -> Array:
    """``xi - xi_ref`` with the angle block wrapped."""
    err = np.asarray(xi, dtype=float) - np.asarray(xi_ref, dtype=float)
    err[ANG] = wrap_angle(err[ANG])
    return err


# ---------------------------------------------------------------------------
# model


def mixer_matrix(params: QuadrotorParams) -> Array:
    """Rows: collective thrust, roll, pitch and yaw torque for an X frame.

    Rotor order: front-right, back-right, back-left, front-left.
    """
    a = params.arm_length / np.sqrt(2.0)
    k = params.torque_coefficient
    return np.array([
        [1.0, 1.0, 1.0, 1.0],
        [-a, -a, a, a],
        [-a, a, a, -a],
        [-k, k, -k, k],
    ])


def wrench_from_thrusts(u: ControlInput, params: QuadrotorParams) -> tuple[Array, Array]:
    t1, t2, t3, t4 = u.thrusts
    a = params.arm_length / np.sqrt(2.0)
    k = params.torque_coefficient
    force = np.array([0.0, 0.0, t1 + t2 + t3 + t4])
    torque = np.array([
        a * (t3 + t4 - t1 - t2),
        a * (t2 + t3 - t1 - t4),
        k * (t2 + t4 - t1 - t3),
    ])
    return force, torque


def _derivative_vector(vec: Array, thrusts: Array, params: QuadrotorParams) -> Array:
    q = vec[6:10]
    omega = vec[10:13]
    force, torque = wrench_from_thrusts(ControlInput(thrusts), params)
    inertia = params.inertia
    acc = rotation_matrix(q) @ force / params.mass
    acc[2] -= params.gravity
    omega_dot = (torque - np.cross(omega, inertia * omega)) / inertia
    q_dot = 0.5 * quat_multiply(q, np.array([0.0, *omega]))
    return np.concatenate([vec[3:6], acc, q_dot, omega_dot])


def derivative(x: State, u: ControlInput, params: QuadrotorParams) -> State:
    """Time derivative of the state; the attitude field holds the quaternion rate."""
    return State.from_vector(_derivative_vector(x.to_vector(), u.thrusts, params))


def _disturbance_vector(vec: Array, d: Array) -> Array:
    d = np.asarray(d, dtype=float)
    q_dot = 0.5 * quat_multiply(vec[6:10], np.array([0.0, *d[ANG]]))
    return np.concatenate([d[POS], d[VEL], q_dot, d[RATE]])


def step(x: State, u: ControlInput, params: QuadrotorParams, dt: float,
         d: Array | None = None) -> State:
    """One classical RK4 step of length ``dt``.

    ``d`` is an optional 12-vector added to the state derivative at every stage,
    laid out like the Euler chart; its attitude block is a body-frame angular rate.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    thrusts = u.thrusts

    def f(vec: Array) -> Array:
        out = _derivative_vector(vec, thrusts, params)
        if d is not None:
            out = out + _disturbance_vector(vec, d)
        return out

    y = x.to_vector()
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    y_next = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    y_next[6:10] /= np.linalg.norm(y_next[6:10])
    return State.from_vector(y_next)


def chart_derivative(xi: Array, thrusts: Array, params: QuadrotorParams) -> Array:
    """Continuous-time model expressed in Euler-chart coordinates."""
    x = state_from_chart(xi)
    vec_dot = _derivative_vector(x.to_vector(), np.asarray(thrusts, dtype=float), params)
    angle_rates = euler_rate_matrix(xi[6], xi[7]) @ xi[RATE]
    return np.concatenate([vec_dot[0:6], angle_rates, vec_dot[10:13]])


def hover_jacobians(params: QuadrotorParams, eps: float = 1e-6) -> tuple[Array, Array]:
    """Central-difference Jacobians of the chart model at hover."""
    xi0 = np.zeros(CHART_DIM)
    u0 = np.full(INPUT_DIM, params.hover_thrust)
    a_c = np.zeros((CHART_DIM, CHART_DIM))
    b_c = np.zeros((CHART_DIM, INPUT_DIM))
    for j in range(CHART_DIM):
        e = np.zeros(CHART_DIM)
        e[j] = eps
        a_c[:, j] = (chart_derivative(xi0 + e, u0, params)
                     - chart_derivative(xi0 - e, u0, params)) / (2 * eps)
    for j in range(INPUT_DIM):
        e = np.zeros(INPUT_DIM)
        e[j] = eps
        b_c[:, j] = (chart_derivative(xi0, u0 + e, params)
                     - chart_derivative(xi0, u0 - e, params)) / (2 * eps)
    return a_c, b_c


def zoh_discretize(a_c: Array, b_c: Array, dt: float) -> tuple[Array, Array]:
    n, m = b_c.shape
    block = np.zeros((n + m, n + m))
    block[:n, :n] = a_c
    block[:n, n:] = b_c
    phi = expm(block * dt)
    return phi[:n, :n], phi[:n, n:]


def linearize_hover(params: QuadrotorParams, dt: float) -> LinearModel:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    hover_state = State.hover()
    hover_input = ControlInput.hover(params)
    residual = np.linalg.norm(chart_derivative(np.zeros(CHART_DIM), hover_input.thrusts, params))
    if residual > 1e-9:
        raise ValueError(f"operating point is not an equilibrium (|f| = {residual:.3e})")
    a_c, b_c = hover_jacobians(params)
    a_d, b_d = zoh_discretize(a_c, b_c, dt)
    return LinearModel(a_d, b_d, dt, hover_state, hover_input)
