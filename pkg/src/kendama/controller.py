"""Output-feedback tube MPC for the catch phase."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import sets
from .dynamics import LtiModel
from .qp import QPResult, solve_qp
from .sets import Box, ConvexSet, HPolytope, Zonotope


class EmptyInitializerSet(RuntimeError):
    pass


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    P1 = "trial_failure_p1"
    P2 = "trial_failure_p2"
    CONSTRAINT_VIOLATION = "constraint_violation"


class Status(str, enum.Enum):
    RUNNING = "running"
    P1 = "trial_failure_p1"
    P2 = "trial_failure_p2"
    DONE = "done"


def gains_from_poles(dt: float, observer_poles=(0.6, 0.6), control_poles=(0.7, 0.7)):
    """Diagonal L, K placing eig(I - L) and eig(I + dt K) at the given poles."""
    L = np.diag(1.0 - np.asarray(observer_poles, dtype=float))
    K = np.diag((np.asarray(control_poles, dtype=float) - 1.0) / dt)
    return L, K


def _spectral_radius(M) -> float:
    return float(max(abs(np.linalg.eigvals(M))))


@dataclass
class ControllerConfig:
    T: int = 25
    E: Box = field(default_factory=lambda: Box.symmetric([0.349, 0.2457]))
    U: ConvexSet = field(default_factory=lambda: Box.symmetric(8.0))
    W: ConvexSet = field(default_factory=lambda: Box.symmetric(0.002))
    Vhat: ConvexSet = field(default_factory=lambda: Box.symmetric([0.012, 0.018]))
    L: np.ndarray = None
    K: np.ndarray = None
    q_e: float = 500.0
    r_u: float = 0.4
    rpi_tol: float = 1e-4
    model: LtiModel = field(default_factory=LtiModel)

    def __post_init__(self):
        L0, K0 = gains_from_poles(self.model.dt)
        self.L = L0 if self.L is None else np.asarray(self.L, dtype=float).reshape(2, 2)
        self.K = K0 if self.K is None else np.asarray(self.K, dtype=float).reshape(2, 2)
        if self.T < 1:
            raise ValueError("T must be >= 1")
        A, B = self.model.A, self.model.B
        if _spectral_radius(A - self.L) >= 1.0:
            raise ValueError("A - L is not Schur stable")
        if _spectral_radius(A + B @ self.K) >= 1.0:
            raise ValueError("A + BK is not Schur stable")
        for name in ("E", "U", "W", "Vhat"):
            if not sets.contains(getattr(self, name), np.zeros(2)):
                raise ValueError(f"{name} must contain the origin")
        if self.q_e <= 0 or self.r_u <= 0:
            raise ValueError("stage weights must be positive")


@dataclass(frozen=True)
class TightenedSets:
    R_est: Zonotope
    R_con: Zonotope
    E_bar: HPolytope
    U_bar: HPolytope
    init_set: HPolytope  # admissible observer initialisers, E minus R_est
    R_con_H: HPolytope
    empty: bool


def build_tightened_sets(cfg: ControllerConfig) -> TightenedSets:
    """Tube cross-sections and tightened constraints; emptiness is flagged, never raised."""
    A, B = cfg.model.A, cfg.model.B
    D_est = sets.minkowski_sum(cfg.W, sets.linear_map(-cfg.L, cfg.Vhat))
    R_est = sets.rpi_outer_approx(A - cfg.L, D_est, cfg.rpi_tol)
    D_con = sets.minkowski_sum(sets.linear_map(cfg.L, R_est), sets.linear_map(cfg.L, cfg.Vhat))
    R_con = sets.rpi_outer_approx(A + B @ cfg.K, D_con, cfg.rpi_tol)
    E_bar = sets.pontryagin_diff(cfg.E, sets.minkowski_sum(R_est, R_con))
    U_bar = sets.pontryagin_diff(cfg.U, sets.linear_map(cfg.K, R_con))
    init_set = sets.pontryagin_diff(cfg.E, R_est)
    return TightenedSets(
        R_est=R_est,
        R_con=R_con,
        E_bar=E_bar,
        U_bar=U_bar,
        init_set=init_set,
        R_con_H=sets.as_hpoly(R_con),
        empty=bool(E_bar.empty or U_bar.empty or init_set.empty),
    )


def observer_init(ts: TightenedSets, y0=None) -> np.ndarray:
    """Initial estimate drawn from E minus R_est.

    With a first measurement the estimate is the measurement itself, which
    must lie in the admissible set. Without one it is the bounding-box
    midpoint (the origin for symmetric sets), or the Chebyshev centre when
    the midpoint falls outside. The Chebyshev centre alone is not unique for
    elongated sets.
    """
    if ts.init_set.empty:
        raise EmptyInitializerSet("E minus R_est is empty")
    if y0 is None:
        center = sets.bounding_box(ts.init_set).center
        if not sets.contains(ts.init_set, center):
            center, _ = sets.chebyshev_center(ts.init_set)
        return np.where(np.abs(center) < 1e-12, 0.0, center)
    y0 = np.asarray(y0, dtype=float)
    if not sets.contains(ts.init_set, y0):
        raise EmptyInitializerSet("first measurement lies outside the admissible initialiser set")
    return y0.copy()


def observer_update(e_hat, u, y, L, model: LtiModel = LtiModel()) -> np.ndarray:
    e_hat = np.asarray(e_hat, dtype=float)
    return model.A @ e_hat + model.B @ np.asarray(u, dtype=float) + np.asarray(L) @ (np.asarray(y, dtype=float) - e_hat)


def control_law(u_bar, e_bar, e_hat, K) -> np.ndarray:
    return np.asarray(u_bar, dtype=float) + np.asarray(K) @ (np.asarray(e_hat, dtype=float) - np.asarray(e_bar, dtype=float))


@dataclass
class ShrinkingQP:
    """Condensed data for the problem at step t; z = (e_bar_t, u_bar_t, ..., u_bar_{T-1})."""

    P: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    horizon: int
    S: np.ndarray  # (H+1, 2, n): e_bar_k = S[k-t] @ z

    def unpack(self, z):
        e_bar = np.einsum("kij,j->ki", self.S, z)
        u_bar = z[2:].reshape(self.horizon, 2)
        return e_bar, u_bar

    def cost(self, z) -> float:
        return float(0.5 * z @ self.P @ z + self.c @ z)


def build_shrinking_qp(cfg: ControllerConfig, ts: TightenedSets, e_hat, t: int) -> ShrinkingQP:
    H = cfg.T - t
    if H < 1:
        raise ValueError("t must be < T")
    dt = cfg.model.dt
    n = 2 + 2 * H
    S = np.zeros((H + 1, 2, n))
    for k in range(H + 1):
        S[k, :, :2] = np.eye(2)
        for j in range(k):
            S[k, :, 2 + 2 * j : 4 + 2 * j] = dt * np.eye(2)
    P = np.zeros((n, n))
    for k in range(H):
        P += 2.0 * cfg.q_e * S[k].T @ S[k]
    P[2:, 2:] += 2.0 * cfg.r_u * np.eye(2 * H)
    c = np.zeros(n)
    A = S[H].copy()
    b = np.zeros(2)

    rows, rhs = [], []
    HE, hE = ts.E_bar.H, ts.E_bar.h
    for k in range(H):
        rows.append(HE @ S[k])
        rhs.append(hE)
    HU, hU = ts.U_bar.H, ts.U_bar.h
    for k in range(H):
        blk = np.zeros((HU.shape[0], n))
        blk[:, 2 + 2 * k : 4 + 2 * k] = HU
        rows.append(blk)
        rhs.append(hU)
    # e_hat - e_bar_t in R_con
    HR, hR = ts.R_con_H.H, ts.R_con_H.h
    blk = np.zeros((HR.shape[0], n))
    blk[:, :2] = -HR
    rows.append(blk)
    rhs.append(hR - HR @ np.asarray(e_hat, dtype=float))
    return ShrinkingQP(P, c, A, b, np.vstack(rows), np.concatenate(rhs), H, S)


@dataclass
class PlanResult:
    status: str  # "optimal" | "infeasible"
    e_bar: np.ndarray | None
    u_bar: np.ndarray | None
    cost: float
    kkt_residual: float
    qp: QPResult
    z: np.ndarray | None = None


def solve_shrinking_qp(cfg: ControllerConfig, ts: TightenedSets, e_hat, t: int, warm=None) -> PlanResult:
    """Nominal plan from step t to the deadline T with e_bar_T = 0."""
    if ts.empty:
        return PlanResult("infeasible", None, None, np.inf, np.inf, QPResult("infeasible", None))
    prob = build_shrinking_qp(cfg, ts, e_hat, t)
    res = solve_qp(prob.P, prob.c, prob.A, prob.b, prob.G, prob.h, z0=warm)
    if not res.ok:
        return PlanResult("infeasible", None, None, np.inf, np.inf, res)
    e_bar, u_bar = prob.unpack(res.z)
    return PlanResult("optimal", e_bar, u_bar, prob.cost(res.z), res.kkt_residual, res, res.z)


def shift_plan(z: np.ndarray, dt: float) -> np.ndarray:
    """Tail of the previous plan as a warm start for the next step."""
    e_next = z[:2] + dt * z[2:4]
    return np.concatenate([e_next, z[4:]])


@dataclass
class StepRecord:
    t: int
    y: np.ndarray
    e_hat: np.ndarray
    e_bar: np.ndarray
    u_bar: np.ndarray
    u: np.ndarray
    qp_status: str


class CatchController:
    """One shrinking-horizon episode. Status only ever moves away from RUNNING."""

    def __init__(self, cfg: ControllerConfig, ts: TightenedSets | None = None):
        self.cfg = cfg
        self.ts = ts if ts is not None else build_tightened_sets(cfg)
        self.t = 0
        self.e_hat = None
        self.status = Status.P2 if self.ts.empty else Status.RUNNING
        self._warm = None
        self.last_plan: PlanResult | None = None

    def _fail(self) -> Status:
        return Status.P2 if self.t == 0 else Status.P1

    def step(self, y) -> StepRecord:
        """Consume measurement y_t, return the applied input u_t (zero once stopped)."""
        y = np.asarray(y, dtype=float)
        zero = np.zeros(2)
        nan2 = np.full(2, np.nan)
        if self.status is not Status.RUNNING:
            rec = StepRecord(self.t, y, self.e_hat if self.e_hat is not None else nan2, nan2, nan2, zero, "skipped")
            self.t += 1
            return rec
        if self.t == 0:
            try:
                self.e_hat = observer_init(self.ts, y)
            except EmptyInitializerSet:
                self.status = Status.P2
                rec = StepRecord(0, y, nan2, nan2, nan2, zero, "infeasible")
                self.t += 1
                return rec
        plan = solve_shrinking_qp(self.cfg, self.ts, self.e_hat, self.t, warm=self._warm)
        self.last_plan = plan
        if plan.status != "optimal":
            self.status = self._fail()
            rec = StepRecord(self.t, y, self.e_hat.copy(), nan2, nan2, zero, "infeasible")
            self.t += 1
            return rec
        e_bar_t, u_bar_t = plan.e_bar[0], plan.u_bar[0]
        u = control_law(u_bar_t, e_bar_t, self.e_hat, self.cfg.K)
        rec = StepRecord(self.t, y, self.e_hat.copy(), e_bar_t.copy(), u_bar_t.copy(), u, "optimal")
        self.e_hat = observer_update(self.e_hat, u, y, self.cfg.L, self.cfg.model)
        self._warm = shift_plan(plan.z, self.cfg.model.dt) if plan.u_bar.shape[0] > 1 else None
        self.t += 1
        if self.t >= self.cfg.T:
            self.status = Status.DONE
        return rec


def classify_failure(e_true, qp_status, E: ConvexSet, setup_empty: bool = False) -> Outcome:
    """Outcome of one trace.

    ``qp_status`` lists the per-step QP status ("optimal", "infeasible",
    "skipped"). Infeasibility at t = 0 or empty tightened sets is P2, later
    infeasibility is P1, and a true error leaving E with every QP feasible is
    a constraint violation.
    """
    if setup_empty:
        return Outcome.P2
    for t, s in enumerate(qp_status):
        if s == "infeasible":
            return Outcome.P2 if t == 0 else Outcome.P1
    inside = sets.contains_points(E, np.asarray(e_true, dtype=float))
    if not np.all(inside):
        return Outcome.CONSTRAINT_VIOLATION
    return Outcome.SUCCESS
