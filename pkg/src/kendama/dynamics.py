"""Cup-and-ball models.

Swing-up: the cup is a planar point mass (x, z) carrying a rigid massless rod
of length r with the ball at its tip; phi is measured from the downward
plumb line, so the ball sits at (x + r sin phi, z - r cos phi). With
T = m_c/2 (xd^2 + zd^2) + m_b/2 ((xd + r c phid)^2 + (zd + r s phid)^2) and
V = m_c g z + m_b g (z - r c) the Euler-Lagrange equations give

    M(q) = [[m_c+m_b, 0,        m_b r c ],
            [0,       m_c+m_b,  m_b r s ],
            [m_b r c, m_b r s,  m_b r^2 ]]
    C(q, qd) = [[0, 0, -m_b r s phid],
                [0, 0,  m_b r c phid],
                [0, 0,  0           ]]
    G(q) = [0, (m_c+m_b) g, m_b g r s]

with s = sin phi, c = cos phi. This C makes Mdot - 2C skew-symmetric.

Catch: the cup-minus-ball position e follows a single integrator,
e+ = e + dt u + w, y = e + v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

GRAVITY = 9.81


class SingularInertia(ArithmeticError):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    # r is chosen so that the release state (2.44 rad, 4.18 rad/s) lands the
    # ball on a fixed cup under free fall; the masses are placeholders.
    m_c: float = 0.2
    m_b: float = 0.03
    r: float = 0.153
    g: float = GRAVITY

    def __post_init__(self):
        for name in ("m_c", "m_b", "r", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.m_c, self.m_b, self.r, self.g])

    def scaled(self, mass: float = 1.0, length: float = 1.0) -> "PhysicalParams":
        return PhysicalParams(self.m_c * mass, self.m_b * mass, self.r * length, self.g)


def mass_matrix(q, p: PhysicalParams) -> np.ndarray:
    s, c = np.sin(q[2]), np.cos(q[2])
    m = p.m_c + p.m_b
    a, b = p.m_b * p.r * c, p.m_b * p.r * s
    return np.array([[m, 0.0, a], [0.0, m, b], [a, b, p.m_b * p.r**2]])


def mass_matrix_dot(q, qd, p: PhysicalParams) -> np.ndarray:
    s, c = np.sin(q[2]), np.cos(q[2])
    a, b = -p.m_b * p.r * s * qd[2], p.m_b * p.r * c * qd[2]
    return np.array([[0.0, 0.0, a], [0.0, 0.0, b], [a, b, 0.0]])


def coriolis_matrix(q, qd, p: PhysicalParams) -> np.ndarray:
    s, c = np.sin(q[2]), np.cos(q[2])
    k = p.m_b * p.r * qd[2]
    return np.array([[0.0, 0.0, -k * s], [0.0, 0.0, k * c], [0.0, 0.0, 0.0]])


def gravity_vector(q, p: PhysicalParams) -> np.ndarray:
    return np.array([0.0, (p.m_c + p.m_b) * p.g, p.m_b * p.g * p.r * np.sin(q[2])])


def energy(x, p: PhysicalParams) -> float:
    """Total mechanical energy T + V."""
    x = np.asarray(x, dtype=float)
    q, qd = x[:3], x[3:]
    kinetic = 0.5 * qd @ mass_matrix(q, p) @ qd
    potential = p.m_c * p.g * q[1] + p.m_b * p.g * (q[1] - p.r * np.cos(q[2]))
    return float(kinetic + potential)


def _as_force(F) -> np.ndarray:
    F = np.asarray(F, dtype=float).ravel()
    if F.size == 2:
        F = np.append(F, 0.0)
    return F


def continuous_dynamics(x, F, p: PhysicalParams, check: bool = False) -> np.ndarray:
    """State derivative [qd; M^-1 (F - C qd - G)].

    ``F`` is the generalised force (F_x, F_z, tau_phi); a 2-vector is read as
    the cup forces with an unactuated swing joint.
    """
    x = np.asarray(x, dtype=float)
    if check:
        cond = np.linalg.cond(mass_matrix(x[:3], p))
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularInertia(f"inertia condition number {cond:.3g}")
    return _kernels.rhs(x, _as_force(F), p.as_array())


def discretize_step(x, F, Ts: float, p: PhysicalParams) -> np.ndarray:
    """One forward-Euler step, the planner's transition map."""
    x = np.asarray(x, dtype=float)
    return x + Ts * continuous_dynamics(x, F, p)


def rk4_integrate(x, F, duration: float, p: PhysicalParams, h: float = 1e-3) -> np.ndarray:
    """RK4 with a zero-order-held force; returns all intermediate states."""
    n = int(round(duration / h))
    return _kernels.rk4(x, _as_force(F), p.as_array(), duration / n, n)


def string_tension(x, F, p: PhysicalParams) -> float:
    """Rod tension from the ball's radial force balance.

    T = m_b (r phid^2 + g cos phi - xdd sin phi + zdd cos phi), where the cup
    accelerations come from the constrained dynamics. T <= 0 means the string
    goes slack.
    """
    x = np.asarray(x, dtype=float)
    qdd = continuous_dynamics(x, F, p)[3:]
    return tension_from_accel(x, qdd[0], qdd[1], p)


def tension_from_accel(x, xdd: float, zdd: float, p: PhysicalParams) -> float:
    s, c = np.sin(x[2]), np.cos(x[2])
    return float(p.m_b * (p.r * x[5] ** 2 + p.g * c - xdd * s + zdd * c))


def ball_state(x, p: PhysicalParams):
    """Ball position and velocity implied by a generalised state."""
    x = np.asarray(x, dtype=float)
    s, c = np.sin(x[2]), np.cos(x[2])
    pos = np.array([x[0] + p.r * s, x[1] - p.r * c])
    vel = np.array([x[3] + p.r * c * x[5], x[4] + p.r * s * x[5]])
    return pos, vel


def predict_ballistic(p0, v0, t, g: float = GRAVITY, method: str = "exact", dt: float = 0.01):
    """Free-fall position and velocity after time t.

    ``method="euler"`` reproduces the controller's forward-Euler velocity
    prediction: velocity is updated after position, in steps of ``dt`` (the
    last step is shortened to land on t).
    """
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if t < 0:
        raise ValueError("t must be non-negative")
    acc = np.array([0.0, -g])
    if method == "exact":
        return p0 + v0 * t + 0.5 * acc * t * t, v0 + acc * t
    if method != "euler":
        raise ValueError(f"unknown method {method!r}")
    pos, vel = p0.copy(), v0.copy()
    remaining = float(t)
    while remaining > 1e-15:
        h = min(dt, remaining)
        pos = pos + h * vel
        vel = vel + h * acc
        remaining -= h
    return pos, vel


@dataclass(frozen=True)
class LtiModel:
    """Catch-phase error system: A = I, B = dt I."""

    dt: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def A(self) -> np.ndarray:
        return np.eye(2)

    @property
    def B(self) -> np.ndarray:
        return self.dt * np.eye(2)


def error_step(e, u, w, model: LtiModel = LtiModel()) -> np.ndarray:
    return np.asarray(e, dtype=float) + model.dt * np.asarray(u, dtype=float) + np.asarray(w, dtype=float)


def measure(e, v) -> np.ndarray:
    return np.asarray(e, dtype=float) + np.asarray(v, dtype=float)
