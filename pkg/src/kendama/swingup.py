"""Offline swing-up planning and open-loop roll-outs.

The planner solves

    min  sum_i x_i' Q x_i + F_i' R F_i
    s.t. x_{i+1} = x_i + Ts f(x_i, F_i),  x_i in X,  F_i in F,  x_N = x_f

by single shooting over the cup forces. Input bounds go to L-BFGS-B directly;
the terminal equality and the state bounds are handled by an augmented
Lagrangian outer loop. Gradients come from an adjoint sweep through the
Euler recursion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .dynamics import PhysicalParams, ball_state, tension_from_accel

log = logging.getLogger(__name__)

RELEASE_ANGLE = 2.44
RELEASE_RATE = 4.18


class InfeasibleBounds(ValueError):
    pass


class NoRelease(RuntimeError):
    pass


def _default_x_f():
    return np.array([0.0, 0.0, RELEASE_ANGLE, 0.0, 0.0, RELEASE_RATE])


@dataclass
class SwingupProblem:
    N: int = 150
    Ts: float = 0.01
    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 1.0, 0.1, 0.1, 0.1]))
    R: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(2))
    x_lo: np.ndarray = field(default_factory=lambda: np.array([-0.5, -0.5, -2 * np.pi, -5.0, -5.0, -40.0]))
    x_hi: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 2 * np.pi, 5.0, 5.0, 40.0]))
    F_lo: np.ndarray = field(default_factory=lambda: np.array([-20.0, -20.0]))
    F_hi: np.ndarray = field(default_factory=lambda: np.array([20.0, 25.0]))
    x_init: np.ndarray = field(default_factory=lambda: np.zeros(6))
    x_f: np.ndarray = field(default_factory=_default_x_f)
    params: PhysicalParams = field(default_factory=PhysicalParams)

    def __post_init__(self):
        for name in ("Q", "R", "x_lo", "x_hi", "F_lo", "F_hi", "x_init", "x_f"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.N < 1 or self.Ts <= 0:
            raise ValueError("need N >= 1 and Ts > 0")
        for name in ("Q", "R"):
            if np.linalg.eigvalsh(0.5 * (getattr(self, name) + getattr(self, name).T)).min() <= 0:
                raise ValueError(f"{name} must be positive definite")


@dataclass
class SolverOptions:
    tol: float = 1e-6
    term_tol: float = 1e-4
    max_outer: int = 40
    max_inner: int = 3000
    rho0: float = 100.0
    rho_max: float = 1e8


@dataclass
class SwingupSolution:
    F_star: np.ndarray
    x_traj: np.ndarray
    cost: float
    terminal_residual: float
    kkt_residual: float
    bound_violation: float
    converged: bool
    outer_iterations: int
    # augmented-Lagrangian values at accepted inner iterates, one list per outer pass
    history: list = field(default_factory=list)


def stage_cost(X: np.ndarray, U: np.ndarray, prob: SwingupProblem) -> float:
    Xs = X[:-1]
    return float(np.einsum("ij,jk,ik->", Xs, prob.Q, Xs) + np.einsum("ij,jk,ik->", U, prob.R, U))


def rollout_nominal(U, prob: SwingupProblem) -> np.ndarray:
    return _kernels.shoot(prob.x_init, np.asarray(U, dtype=float).reshape(prob.N, 2), prob.params.as_array(), prob.Ts)


class _Lagrangian:
    def __init__(self, prob: SwingupProblem):
        self.prob = prob
        self.p = prob.params.as_array()
        self.Qs = prob.Q + prob.Q.T
        self.Rs = prob.R + prob.R.T
        self.lam = np.zeros(6)
        self.mu = np.zeros((prob.N, 12))
        self.rho = 1.0

    def constraints(self, X):
        c = X[-1] - self.prob.x_f
        g = np.hstack([X[1:] - self.prob.x_hi, self.prob.x_lo - X[1:]])
        return c, g

    def value_and_grad(self, u, with_al=True):
        prob = self.prob
        U = u.reshape(prob.N, 2)
        X = _kernels.shoot(prob.x_init, U, self.p, prob.Ts)
        J = stage_cost(X, U, prob)
        gX = np.zeros_like(X)
        gX[:-1] = X[:-1] @ self.Qs.T
        gU = U @ self.Rs.T
        c, g = self.constraints(X)
        if with_al:
            shifted = np.maximum(0.0, self.mu + self.rho * g)
            J += self.lam @ c + 0.5 * self.rho * c @ c
            J += (shifted**2 - self.mu**2).sum() / (2.0 * self.rho)
            gX[-1] += self.lam + self.rho * c
            gX[1:] += shifted[:, :6] - shifted[:, 6:]
        else:
            # plain Lagrangian with the current multipliers
            J += self.lam @ c + (self.mu * g).sum()
            gX[-1] += self.lam
            gX[1:] += self.mu[:, :6] - self.mu[:, 6:]
        grad = _kernels.adjoint(X, U, self.p, prob.Ts, gX, gU)
        return J, grad.ravel()


def _projected_gradient(u, grad, lo, hi):
    return np.abs(u - np.clip(u - grad, lo, hi)).max()


def solve_swingup(prob: SwingupProblem, opts: SolverOptions | None = None, U0=None) -> SwingupSolution:
    opts = opts or SolverOptions()
    if np.any(prob.x_init < prob.x_lo) or np.any(prob.x_init > prob.x_hi):
        raise InfeasibleBounds("x_init lies outside the state bounds")
    if np.any(prob.x_f < prob.x_lo) or np.any(prob.x_f > prob.x_hi):
        raise InfeasibleBounds("x_f lies outside the state bounds")
    if np.any(prob.F_lo > prob.F_hi):
        raise InfeasibleBounds("empty input bounds")

    N = prob.N
    if U0 is None:
        hover = (prob.params.m_c + prob.params.m_b) * prob.params.g
        U0 = np.tile(np.clip([0.0, hover], prob.F_lo, prob.F_hi), (N, 1))
    u = np.asarray(U0, dtype=float).ravel().copy()
    lo = np.tile(prob.F_lo, N)
    hi = np.tile(prob.F_hi, N)
    bounds = list(zip(lo, hi))

    lag = _Lagrangian(prob)
    lag.rho = opts.rho0
    history = []
    prev_viol = np.inf
    best = None
    converged = False
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        trace = []
        res = minimize(
            lag.value_and_grad,
            u,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=lambda xk: trace.append(lag.value_and_grad(xk)[0]),
            options={"maxiter": opts.max_inner, "maxfun": 4 * opts.max_inner, "ftol": 1e-15, "gtol": 1e-12, "maxcor": 30},
        )
        history.append(trace)
        u = res.x
        X = rollout_nominal(u, prob)
        c, g = lag.constraints(X)
        lag.lam = lag.lam + lag.rho * c
        lag.mu = np.maximum(0.0, lag.mu + lag.rho * g)
        viol = max(np.abs(c).max(), max(g.max(), 0.0))
        _, lgrad = lag.value_and_grad(u, with_al=False)
        kkt = _projected_gradient(u, lgrad, lo, hi)
        log.debug("outer %d: viol=%.3e kkt=%.3e rho=%.1e inner=%d", outer, viol, kkt, lag.rho, res.nit)
        cand = (viol, kkt, u.copy())
        if best is None or (viol, kkt) < (best[0], best[1]):
            best = cand
        if viol < opts.term_tol and kkt < opts.tol:
            converged = True
            best = cand
            break
        if viol > 0.25 * prev_viol and viol > 0.1 * opts.term_tol:
            lag.rho = min(lag.rho * 10.0, opts.rho_max)
        prev_viol = min(prev_viol, viol)

    viol, kkt, u = best
    U = u.reshape(N, 2)
    X = rollout_nominal(U, prob)
    c, g = lag.constraints(X)
    if not converged:
        log.warning("swing-up solver stopped without convergence (viol=%.2e, kkt=%.2e)", viol, kkt)
    return SwingupSolution(
        F_star=U,
        x_traj=X,
        cost=stage_cost(X, U, prob),
        terminal_residual=float(np.abs(c).max()),
        kkt_residual=float(kkt),
        bound_violation=float(max(g.max(), 0.0)),
        converged=converged,
        outer_iterations=outer,
        history=history,
    )


def verify_terminal(x_N, params: PhysicalParams, horizon: float = 0.5, dt: float = 1e-3, tol: float = 0.005):
    """Ball-minus-cup gap under free fall with the cup frozen at x_N.

    Returns (times, gaps, vanish_time) where vanish_time is the first sample
    with |gap| < tol, or None.
    """
    pos, vel = ball_state(x_N, params)
    cup = np.asarray(x_N[:2], dtype=float)
    t = np.arange(int(round(horizon / dt)) + 1) * dt
    ball = pos + np.outer(t, vel) + np.outer(0.5 * t * t, [0.0, -params.g])
    gaps = ball - cup
    hit = np.flatnonzero(np.hypot(gaps[:, 0], gaps[:, 1]) < tol)
    return t, gaps, (float(t[hit[0]]) if hit.size else None)


def release_consistency(params: PhysicalParams, phi: float = RELEASE_ANGLE, dphi: float = RELEASE_RATE) -> dict:
    """Tension at the nominal release state with a stationary cup.

    Also reports the rod length that would put the tension zero-crossing
    exactly there: r* = -g cos(phi) / phid^2.
    """
    x = np.array([0.0, 0.0, phi, 0.0, 0.0, dphi])
    tension = tension_from_accel(x, 0.0, 0.0, params)
    return {
        "tension": tension,
        "released": tension <= 0.0,
        "zero_crossing_length": float(-params.g * np.cos(phi) / dphi**2),
    }


@dataclass
class Perturbation:
    mass_frac: float = 0.05
    length_frac: float = 0.05
    force_std: float = 0.05
    seed: int | None = None


@dataclass
class OpenLoopRollout:
    times: np.ndarray
    states: np.ndarray
    params: PhysicalParams
    release_time: float
    release_state: np.ndarray
    ball_pos: np.ndarray
    ball_vel: np.ndarray
    cup_pos: np.ndarray

    @property
    def e0(self) -> np.ndarray:
        return self.cup_pos - self.ball_pos


def _pendulum_rk4(phi, dphi, g, r, h):
    def f(a, b):
        return b, -g / r * np.sin(a)

    k1 = f(phi, dphi)
    k2 = f(phi + 0.5 * h * k1[0], dphi + 0.5 * h * k1[1])
    k3 = f(phi + 0.5 * h * k2[0], dphi + 0.5 * h * k2[1])
    k4 = f(phi + h * k3[0], dphi + h * k3[1])
    return (
        phi + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        dphi + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
    )


def rollout_openloop(
    F_star,
    x_init,
    params: PhysicalParams,
    Ts: float = 0.01,
    perturbation: Perturbation | None = None,
    substeps: int = 10,
    integrator: str = "rk4",
) -> OpenLoopRollout:
    """Apply F_star open loop to the (perturbed) plant, then hold the cup still.

    The string is treated as a rigid rod while F_star plays out; release
    detection is armed at the end of the swing-up. From then on the cup is
    frozen and the first zero-crossing of the rod tension, linearly
    interpolated between integrator steps, is the release.
    """
    F_star = np.asarray(F_star, dtype=float).reshape(-1, 2)
    N = F_star.shape[0]
    pert = perturbation or Perturbation(0.0, 0.0, 0.0)
    rng = np.random.default_rng(pert.seed)
    plant = params.scaled(
        mass=1.0 + rng.uniform(-pert.mass_frac, pert.mass_frac),
        length=1.0 + rng.uniform(-pert.length_frac, pert.length_frac),
    )
    force_noise = rng.normal(0.0, pert.force_std, size=F_star.shape) if pert.force_std > 0 else np.zeros_like(F_star)
    p = plant.as_array()

    x = np.asarray(x_init, dtype=float).copy()
    times = [0.0]
    states = [x.copy()]
    if integrator == "euler":
        h, nsub = Ts, 1
    elif integrator == "rk4":
        h, nsub = Ts / substeps, substeps
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    F = np.zeros(3)
    for i in range(N):
        F[:2] = F_star[i] + force_noise[i]
        if integrator == "euler":
            seg = np.vstack([x, x + Ts * _kernels.rhs(x, F, p)])
        else:
            seg = _kernels.rk4(x, F, p, h, nsub)
        x = seg[-1].copy()
        times.extend(i * Ts + h * np.arange(1, nsub + 1))
        states.extend(seg[1:])

    # cup frozen in place; the pendulum swings freely until the rod goes slack
    x = x.copy()
    x[3:5] = 0.0
    t = N * Ts
    t_max = 2 * N * Ts
    phi, dphi = x[2], x[5]
    tension = tension_from_accel(x, 0.0, 0.0, plant)
    frac = 0.0
    prev = (phi, dphi, tension)
    while tension > 0.0:
        if t > t_max + 1e-12:
            raise NoRelease(f"rod still taut at t={t:.3f}s")
        prev = (phi, dphi, tension)
        phi, dphi = _pendulum_rk4(phi, dphi, plant.g, plant.r, h)
        t += h
        tension = plant.m_b * (plant.r * dphi**2 + plant.g * np.cos(phi))
        x[2], x[5] = phi, dphi
        times.append(t)
        states.append(x.copy())
        if tension <= 0.0:
            frac = prev[2] / (prev[2] - tension)
            phi = prev[0] + frac * (phi - prev[0])
            dphi = prev[1] + frac * (dphi - prev[1])
            t = t - h + frac * h
    release = x.copy()
    release[2], release[5] = phi, dphi
    bpos, bvel = ball_state(release, plant)
    return OpenLoopRollout(
        times=np.asarray(times),
        states=np.asarray(states),
        params=plant,
        release_time=float(t),
        release_state=release,
        ball_pos=bpos,
        ball_vel=bvel,
        cup_pos=release[:2].copy(),
    )
