"""Dense primal active-set solver for small strictly convex QPs.

    minimize    0.5 z'Pz + c'z
    subject to  A z  = b
                G z <= h

A feasible start is taken from the caller when it checks out, otherwise it
comes from a phase-one LP. Adding and dropping constraints follows the
lowest-index rule, which rules out cycling on degenerate vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

FEAS_TOL = 1e-9


@dataclass
class QPResult:
    status: str  # "optimal" | "infeasible" | "max_iter"
    z: np.ndarray | None
    eq_multipliers: np.ndarray | None = None
    ineq_multipliers: np.ndarray | None = None
    iterations: int = 0
    kkt_residual: float = np.inf
    objective: float = np.inf

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def kkt_residual(P, c, A, b, G, h, z, lam, mu) -> float:
    stat = P @ z + c + A.T @ lam + G.T @ mu
    slack = G @ z - h
    return float(
        max(
            np.abs(stat).max(initial=0.0),
            np.abs(A @ z - b).max(initial=0.0),
            np.maximum(slack, 0.0).max(initial=0.0),
            np.maximum(-mu, 0.0).max(initial=0.0),
            np.abs(mu * slack).max(initial=0.0),
        )
    )


def phase_one(A, b, G, h, n: int):
    """A point satisfying the constraints, or None if there is none."""
    res = linprog(
        np.zeros(n),
        A_ub=G if G.size else None,
        b_ub=h if G.size else None,
        A_eq=A if A.size else None,
        b_eq=b if A.size else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"phase-one LP failed: {res.message}")
    return res.x


def _solve_eqp(P, g, Aw):
    """Step p minimising 0.5 p'Pp + g'p with Aw p = 0, plus multipliers."""
    n = P.shape[0]
    m = Aw.shape[0]
    if m == 0:
        return np.linalg.solve(P, -g), np.zeros(0)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = P
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    rhs = np.concatenate([-g, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_qp(P, c, A, b, G, h, z0=None, max_iter: int = 500, tol: float = 1e-10) -> QPResult:
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).ravel()
    G = np.asarray(G, dtype=float).reshape(-1, n)
    h = np.asarray(h, dtype=float).ravel()
    n_eq = A.shape[0]

    def feasible(z):
        return (
            z is not None
            and np.abs(A @ z - b).max(initial=0.0) <= FEAS_TOL
            and (G @ z - h).max(initial=-1.0) <= FEAS_TOL
        )

    z = None if z0 is None else np.asarray(z0, dtype=float).copy()
    if not feasible(z):
        z = phase_one(A, b, G, h, n)
        if z is None:
            return QPResult("infeasible", None)

    # initial working set: active rows that stay linearly independent
    work: list[int] = []
    basis = A.copy()
    for i in np.flatnonzero(np.abs(G @ z - h) <= FEAS_TOL):
        trial = np.vstack([basis, G[i]])
        if trial.shape[0] <= n and np.linalg.matrix_rank(trial, tol=1e-10) == trial.shape[0]:
            basis = trial
            work.append(int(i))

    lam = np.zeros(n_eq)
    mu = np.zeros(G.shape[0])
    for it in range(1, max_iter + 1):
        Aw = np.vstack([A, G[work]]) if work else A
        grad = P @ z + c
        p, mult = _solve_eqp(P, grad, Aw)
        if np.abs(p).max() <= tol * max(1.0, np.abs(z).max()):
            lam = mult[:n_eq]
            mw = mult[n_eq:]
            if not work or mw.min() >= -tol:
                mu = np.zeros(G.shape[0])
                mu[work] = np.maximum(mw, 0.0)
                # the step-length tolerance leaves round-off in z; one
                # Newton correction on the final working set removes it
                dz, dm = _solve_eqp(P, P @ z + c, Aw)
                if np.abs(dz).max() > 0:
                    z_fix = z + dz
                    if feasible(z_fix):
                        z = z_fix
                        lam = dm[:n_eq]
                        mu[:] = 0.0
                        mu[work] = np.maximum(dm[n_eq:], 0.0)
                res = kkt_residual(P, c, A, b, G, h, z, lam, mu)
                return QPResult("optimal", z, lam, mu, it, res, float(0.5 * z @ P @ z + c @ z))
            neg = [k for k in range(len(work)) if mw[k] < -tol]
            drop = min(neg, key=lambda k: work[k])
            work.pop(drop)
            continue
        Gp = G @ p
        alpha = 1.0
        block = None
        slack = h - G @ z
        in_work = np.zeros(G.shape[0], dtype=bool)
        in_work[work] = True
        pscale = 1e-12 * np.abs(p).max() * np.abs(G).max(axis=1)
        for i in np.flatnonzero((Gp > pscale) & ~in_work):
            step = max(slack[i], 0.0) / Gp[i]
            if step < alpha - 1e-15 or (block is not None and abs(step - alpha) <= 1e-15 and i < block):
                alpha = step
                block = int(i)
        z = z + alpha * p
        if block is not None:
            work.append(block)
    return QPResult("max_iter", z, lam, mu, max_iter)
