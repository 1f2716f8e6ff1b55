"""Closed-loop Monte Carlo harness for the catch phase."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import sets
from .controller import (
    CatchController,
    ControllerConfig,
    Outcome,
    TightenedSets,
    build_tightened_sets,
    classify_failure,
    gains_from_poles,
)
from .dynamics import LtiModel
from .noise import ConfidenceSupport, NoiseModel, escalate_epsilon, fit_confidence_support, sample_noise
from .sets import Box

log = logging.getLogger(__name__)

# measured catch-phase start envelope, metres
MEASURED_E_TR = Box([-0.316, -0.2095], [0.349, 0.2457])

# SeedSequence stream tags
_NOISE_FIT, _ROLLOUT, _REFIT_SAMPLES, _REFIT_ROLLOUT = 1, 2, 3, 4


def error_box(E_tr: Box) -> Box:
    """Symmetric box whose half-widths are the largest |vertex| of E_tr per axis."""
    return Box.symmetric(np.maximum(np.abs(E_tr.lo), np.abs(E_tr.hi)))


@dataclass
class ExperimentConfig:
    n_schedule: tuple = (50, 100, 200, 400, 800, 1400, 2000)
    rollouts_per_n: int = 1000
    epsilon: float = 0.1
    T: int = 25
    seed: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel)
    W_m: Box = field(default_factory=lambda: Box.symmetric(0.002))
    W: Box = field(default_factory=lambda: Box.symmetric(0.002))
    E_tr: Box = MEASURED_E_TR
    U: Box = field(default_factory=lambda: Box.symmetric(8.0))
    dt: float = 0.01
    observer_poles: tuple = (0.6, 0.6)
    control_poles: tuple = (0.7, 0.7)
    q_e: float = 500.0
    r_u: float = 0.4
    rpi_tol: float = 1e-4
    cup_radius: float = 0.035
    max_impact_vz: float = 0.1
    hit_center_tol: float = 0.005
    workers: int = 1

    def __post_init__(self):
        sched = list(self.n_schedule)
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("n_schedule must be strictly increasing")
        if self.rollouts_per_n < 1:
            raise ValueError("rollouts_per_n must be >= 1")
        if not self.W.contains_box(self.W_m):
            raise ValueError("W_m must be a subset of W")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def E(self) -> Box:
        return error_box(self.E_tr)

    def controller_config(self, Vhat) -> ControllerConfig:
        model = LtiModel(self.dt)
        L, K = gains_from_poles(self.dt, self.observer_poles, self.control_poles)
        return ControllerConfig(
            T=self.T, E=self.E, U=self.U, W=self.W, Vhat=Vhat, L=L, K=K,
            q_e=self.q_e, r_u=self.r_u, rpi_tol=self.rpi_tol, model=model,
        )


@dataclass
class Trace:
    e_true: np.ndarray  # (T+1, 2)
    y: np.ndarray  # (T, 2)
    e_hat: np.ndarray
    e_bar: np.ndarray
    u_bar: np.ndarray
    u: np.ndarray
    qp_status: list

    def rows(self):
        for t in range(len(self.qp_status)):
            yield [t, *self.y[t], *self.e_hat[t], *self.e_bar[t], *self.u_bar[t], *self.u[t], *self.e_true[t], self.qp_status[t]]

    header = ["t", "y_x", "y_z", "ehat_x", "ehat_z", "ebar_x", "ebar_z", "ubar_x", "ubar_z", "u_x", "u_z", "e_x", "e_z", "qp_status"]


@dataclass
class RolloutRecord:
    n: int
    index: int
    seed: int
    e0: np.ndarray
    outcome: Outcome
    hit: bool
    hit_center: bool
    impact_step: int
    impact_rel_vz: float
    catch: bool
    epsilon: float
    trace: Trace | None = None

    @property
    def category(self) -> str:
        if self.catch:
            return "catch"
        if self.outcome is Outcome.P1:
            return "p1"
        if self.outcome is Outcome.P2:
            return "p2"
        if self.outcome is Outcome.CONSTRAINT_VIOLATION:
            return "constraint_violation"
        return "miss"

    csv_header = ["n", "index", "seed", "e0_x", "e0_z", "outcome", "hit", "hit_center", "impact_step", "impact_rel_vz", "catch", "epsilon"]

    def csv_row(self):
        return [
            self.n, self.index, self.seed, repr(float(self.e0[0])), repr(float(self.e0[1])), self.outcome.value,
            int(self.hit), int(self.hit_center), self.impact_step, repr(float(self.impact_rel_vz)), int(self.catch),
            repr(float(self.epsilon)),
        ]


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def detect_impact(e_true: np.ndarray, cup_radius: float) -> int:
    """First step where the ball drops through the cup plane over the cup, else T."""
    T = e_true.shape[0] - 1
    for t in range(1, T + 1):
        if e_true[t - 1, 1] < 0.0 <= e_true[t, 1] and abs(e_true[t, 0]) <= cup_radius:
            return t
    return T


def run_rollout(
    exp: ExperimentConfig,
    cfg: ControllerConfig,
    ts: TightenedSets,
    seed_key,
    e0=None,
    noise: NoiseModel | None = None,
    keep_trace: bool = False,
    n: int = 0,
    index: int = 0,
    epsilon: float = float("nan"),
) -> RolloutRecord:
    """One seeded closed-loop trial; every failure mode is returned as data."""
    seed_key = tuple(np.atleast_1d(seed_key).tolist())
    rng = _rng(*seed_key)
    noise = noise or exp.noise
    T, dt = cfg.T, cfg.model.dt
    if e0 is None:
        e0 = rng.uniform(exp.E_tr.lo, exp.E_tr.hi)
    e0 = np.asarray(e0, dtype=float)
    v = sample_noise(noise, rng, T)
    w = rng.uniform(exp.W_m.lo, exp.W_m.hi, size=(T, 2))

    ctrl = CatchController(cfg, ts)
    e = np.empty((T + 1, 2))
    e[0] = e0
    cols = {k: np.full((T, 2), np.nan) for k in ("y", "e_hat", "e_bar", "u_bar", "u")}
    status = []
    for t in range(T):
        y = e[t] + v[t]
        rec = ctrl.step(y)
        cols["y"][t] = y
        cols["e_hat"][t] = rec.e_hat
        cols["e_bar"][t] = rec.e_bar
        cols["u_bar"][t] = rec.u_bar
        cols["u"][t] = rec.u
        status.append(rec.qp_status)
        e[t + 1] = e[t] + dt * rec.u + w[t]

    outcome = classify_failure(e, status, cfg.E, setup_empty=ts.empty)
    T_im = detect_impact(e, exp.cup_radius)
    ran = outcome is not Outcome.P2
    vz = float(cols["u"][T_im - 1, 1]) if ran else float("nan")
    hit = ran and abs(e[T_im, 0]) <= exp.cup_radius and abs(e[T_im, 1]) <= exp.cup_radius
    ok = outcome is Outcome.SUCCESS
    trace = Trace(e, cols["y"], cols["e_hat"], cols["e_bar"], cols["u_bar"], cols["u"], status) if keep_trace else None
    return RolloutRecord(
        n=n,
        index=index,
        seed=int(seed_key[-1]),
        e0=e0,
        outcome=outcome,
        hit=bool(hit),
        hit_center=bool(ok and hit and abs(e[T_im, 0]) <= exp.hit_center_tol),
        impact_step=int(T_im),
        impact_rel_vz=vz,
        catch=bool(ok and hit and vz <= exp.max_impact_vz),
        epsilon=epsilon,
        trace=trace,
    )


def fit_support_with_escalation(exp: ExperimentConfig, samples):
    """Fit V_hat, raising epsilon in x1.5 steps (cap 0.5) while the tightened sets are empty."""
    last = None
    for eps in escalate_epsilon(exp.epsilon):
        cs = fit_confidence_support(samples, eps)
        cfg = exp.controller_config(cs.box)
        ts = build_tightened_sets(cfg)
        last = (cs, cfg, ts)
        if not ts.empty:
            return last
        log.info("n=%d: tightened sets empty at eps=%.4g, escalating", cs.n, eps)
    return last


def _rollout_job(args):
    exp, cfg, ts, key, n, i, eps, keep = args
    return run_rollout(exp, cfg, ts, key, keep_trace=keep, n=n, index=i, epsilon=eps)


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so the reduction never depends on completion order
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


@dataclass
class NSummary:
    n: int
    epsilon: float
    vhat_lo: list
    vhat_hi: list
    rollouts: int
    counts: dict
    hit_center_pct: float
    hit_pct: float
    catch_pct: float
    trial_failure_pct: float
    impact_vz_mean: float
    impact_vz_std: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(n: int, eps: float, box: Box, records) -> NSummary:
    m = len(records)
    counts = {k: 0 for k in ("catch", "miss", "p1", "p2", "constraint_violation")}
    for r in records:
        counts[r.category] += 1
    vz = np.array([r.impact_rel_vz for r in records if np.isfinite(r.impact_rel_vz)])
    failures = sum(r.outcome is not Outcome.SUCCESS for r in records)
    pct = lambda k: 100.0 * k / m  # noqa: E731
    return NSummary(
        n=n,
        epsilon=eps,
        vhat_lo=box.lo.tolist(),
        vhat_hi=box.hi.tolist(),
        rollouts=m,
        counts=counts,
        hit_center_pct=pct(sum(r.hit_center for r in records)),
        hit_pct=pct(sum(r.hit for r in records)),
        catch_pct=pct(counts["catch"]),
        trial_failure_pct=pct(failures),
        impact_vz_mean=float(vz.mean()) if vz.size else float("nan"),
        impact_vz_std=float(vz.std(ddof=0)) if vz.size else float("nan"),
    )


@dataclass
class SweepResult:
    summaries: list
    records: list
    supports: list

    def to_dict(self) -> dict:
        ns = [s.n for s in self.summaries]
        catch = [s.catch_pct for s in self.summaries]
        out = {"per_n": [s.to_dict() for s in self.summaries]}
        if len(ns) >= 3 and np.ptp(catch) > 0:
            rho, p = stats.spearmanr(ns, catch)
            out["spearman_n_vs_catch"] = {"rho": float(rho), "p_value": float(p)}
        return out


def run_sweep(exp: ExperimentConfig, keep_traces: bool = False) -> SweepResult:
    summaries, records, supports = [], [], []
    for n in exp.n_schedule:
        samples = sample_noise(exp.noise, _rng(exp.seed, _NOISE_FIT, n), n)
        cs, cfg, ts = fit_support_with_escalation(exp, samples)
        jobs = [
            (exp, cfg, ts, (exp.seed, _ROLLOUT, n, i), n, i, cs.epsilon, keep_traces)
            for i in range(exp.rollouts_per_n)
        ]
        recs = _map(_rollout_job, jobs, exp.workers)
        summaries.append(summarize(n, cs.epsilon, cs.box, recs))
        records.extend(recs)
        supports.append(cs)
        s = summaries[-1]
        log.info("n=%d eps=%.3g catch=%.1f%% hit_center=%.1f%% p2=%d", n, cs.epsilon, s.catch_pct, s.hit_center_pct, s.counts["p2"])
    return SweepResult(summaries, records, supports)


@dataclass
class FailureStats:
    refits: int
    failure_rate: float  # P1 or constraint violation
    feasible_rate: float  # no P1 and no P2
    beta: float
    counts: dict


def empirical_failure_rate(
    exp: ExperimentConfig, n: int, epsilon: float, refits: int, force_true_support: bool = False
) -> FailureStats:
    """Refit V_hat from fresh samples for every trial and run one roll-out with it."""
    exp = replace(exp, epsilon=epsilon)
    counts = {o.value: 0 for o in Outcome}
    for j in range(refits):
        if force_true_support:
            box = exp.noise.support
        else:
            samples = sample_noise(exp.noise, _rng(exp.seed, _REFIT_SAMPLES, n, j), n)
            box = fit_confidence_support(samples, epsilon).box
        cfg = exp.controller_config(box)
        ts = build_tightened_sets(cfg)
        rec = run_rollout(exp, cfg, ts, (exp.seed, _REFIT_ROLLOUT, n, j), n=n, index=j, epsilon=epsilon)
        counts[rec.outcome.value] += 1
    fail = counts[Outcome.P1.value] + counts[Outcome.CONSTRAINT_VIOLATION.value]
    infeasible = counts[Outcome.P1.value] + counts[Outcome.P2.value]
    return FailureStats(
        refits=refits,
        failure_rate=fail / refits,
        feasible_rate=1.0 - infeasible / refits,
        beta=(1.0 - epsilon) ** (exp.T - 1),
        counts=counts,
    )


def fixed_support_rollouts(exp: ExperimentConfig, Vhat: Box, count: int, keep_trace: bool = True, tag: int = 9):
    """Roll-outs sharing one V_hat (e.g. the true support)."""
    cfg = exp.controller_config(Vhat)
    ts = build_tightened_sets(cfg)
    recs = [run_rollout(exp, cfg, ts, (exp.seed, tag, i), keep_trace=keep_trace, index=i) for i in range(count)]
    return cfg, ts, recs


def binomial_slack(p: float, trials: int, z: float = 3.0) -> float:
    return z * math.sqrt(max(p * (1 - p), 1e-12) / trials)
