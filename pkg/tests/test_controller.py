import numpy as np
import pytest

from kendama import sets
from kendama.controller import (
    CatchController,
    ControllerConfig,
    EmptyInitializerSet,
    Outcome,
    Status,
    build_tightened_sets,
    classify_failure,
    control_law,
    gains_from_poles,
    observer_init,
    observer_update,
)
from kendama.dynamics import LtiModel
from kendama.sets import Box

DT = 0.01


def half_widths(z):
    return sets.bounding_box(z).hi


def test_gains_place_poles():
    L, K = gains_from_poles(DT, (0.6, 0.5), (0.7, 0.8))
    assert np.allclose(np.linalg.eigvals(np.eye(2) - L), [0.6, 0.5])
    assert np.allclose(np.linalg.eigvals(np.eye(2) + DT * K), [0.7, 0.8])


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(L=2.5 * np.eye(2))
    with pytest.raises(ValueError):
        ControllerConfig(K=np.zeros((2, 2)))  # A + BK = I is not Schur
    with pytest.raises(ValueError):
        ControllerConfig(Vhat=Box([0.1, 0.1], [0.2, 0.2]))
    with pytest.raises(ValueError):
        ControllerConfig(T=0)


def test_no_uncertainty_no_tightening():
    cfg = ControllerConfig(W=Box.symmetric(0.0), Vhat=Box.symmetric(0.0))
    ts = build_tightened_sets(cfg)
    assert np.allclose(half_widths(ts.R_est), 0) and np.allclose(half_widths(ts.R_con), 0)
    assert np.allclose(sets.bounding_box(ts.E_bar).hi, cfg.E.hi)
    assert np.allclose(sets.bounding_box(ts.U_bar).hi, cfg.U.hi)
    assert not ts.empty


def test_diagonal_closed_form():
    a, b, tol = 0.01, 0.02, 1e-6
    L = 0.5 * np.eye(2)
    K = -0.5 / DT * np.eye(2)  # A + BK = 0.5 I
    cfg = ControllerConfig(W=Box.symmetric(a), Vhat=Box.symmetric(b), L=L, K=K, rpi_tol=tol)
    ts = build_tightened_sets(cfg)
    r_est = (a + 0.5 * b) / 0.5
    r_con = (0.5 * r_est + 0.5 * b) / 0.5
    assert np.all(half_widths(ts.R_est) >= r_est - 1e-12) and np.all(half_widths(ts.R_est) <= r_est + 2 * tol)
    assert np.all(half_widths(ts.R_con) >= r_con - 1e-12) and np.all(half_widths(ts.R_con) <= r_con + 4 * tol)


def test_huge_vhat_empties_sets():
    cfg = ControllerConfig(Vhat=Box.symmetric(10.0))
    ts = build_tightened_sets(cfg)
    assert ts.empty
    ctrl = CatchController(cfg, ts)
    assert ctrl.status is Status.P2
    assert classify_failure(np.zeros((3, 2)), ["skipped"] * 2, cfg.E, setup_empty=ts.empty) is Outcome.P2


def test_monotone_tightening():
    small = build_tightened_sets(ControllerConfig(Vhat=Box.symmetric([0.01, 0.01])))
    big = build_tightened_sets(ControllerConfig(Vhat=Box([-0.02, -0.01], [0.012, 0.03])))
    assert np.all(small.E_bar.h >= big.E_bar.h - 1e-15)
    assert np.all(small.U_bar.h >= big.U_bar.h - 1e-15)


def test_observer_init():
    ts0 = build_tightened_sets(ControllerConfig(W=Box.symmetric(0.0), Vhat=Box.symmetric(0.0)))
    assert np.allclose(observer_init(ts0), 0)
    ts = build_tightened_sets(ControllerConfig())
    assert np.allclose(observer_init(ts), 0)
    y = np.array([0.1, -0.05])
    assert np.array_equal(observer_init(ts, y), y)
    assert sets.contains(ts.init_set, observer_init(ts, y))
    with pytest.raises(EmptyInitializerSet):
        observer_init(ts, [0.349, 0.0])


def test_observer_update_cases():
    m = LtiModel(DT)
    e = np.array([0.1, 0.2])
    assert np.allclose(observer_update(e, [0, 0], e, 0.4 * np.eye(2), m), e)
    y = np.array([0.3, -0.1])
    u = np.array([1.0, 2.0])
    assert np.allclose(observer_update(e, u, y, np.eye(2), m), y + DT * u)


def test_estimation_error_stays_in_R_est():
    cfg = ControllerConfig()
    ts = build_tightened_sets(cfg)
    rng = np.random.default_rng(0)
    e = np.zeros(2)
    e_hat = rng.uniform(-0.01, 0.01, 2)
    steps = 10_000
    W, V = cfg.W, cfg.Vhat
    bad = 0
    for _ in range(steps):
        u = rng.uniform(-1, 1, 2)
        v = rng.choice([V.lo, V.hi], axis=0) if rng.random() < 0.3 else rng.uniform(V.lo, V.hi)
        e_hat = observer_update(e_hat, u, e + v, cfg.L, cfg.model)
        e = e + DT * u + rng.uniform(W.lo, W.hi)
        bad += not sets.contains(ts.R_est, e - e_hat)
    assert bad == 0


def test_control_law_cases_and_soundness():
    K = -30 * np.eye(2)
    assert np.allclose(control_law([1, 2], [0.1, 0.1], [0.1, 0.1], K), [1, 2])
    assert np.allclose(control_law([1, 2], [0.1, 0.1], [0.5, -0.5], np.zeros((2, 2))), [1, 2])
    cfg = ControllerConfig()
    ts = build_tightened_sets(cfg)
    rng = np.random.default_rng(1)
    Ub = sets.bounding_box(ts.U_bar)
    R = ts.R_con
    for _ in range(2000):
        ub = rng.uniform(Ub.lo, Ub.hi)
        d = R.center + rng.uniform(-1, 1, R.generators.shape[0]) @ R.generators
        u = control_law(ub, np.zeros(2), d, cfg.K)
        assert sets.contains(cfg.U, u)


def test_classify_failure():
    E = Box.symmetric(1.0)
    inside = np.zeros((4, 2))
    assert classify_failure(inside, ["optimal"] * 3, E) is Outcome.SUCCESS
    assert classify_failure(inside, ["optimal", "infeasible", "skipped"], E) is Outcome.P1
    assert classify_failure(inside, ["infeasible", "skipped", "skipped"], E) is Outcome.P2
    out = inside.copy()
    out[2] = [1.5, 0]
    assert classify_failure(out, ["optimal"] * 3, E) is Outcome.CONSTRAINT_VIOLATION


def test_injected_mid_run_infeasibility_is_p1():
    cfg = ControllerConfig()
    ctrl = CatchController(cfg)
    ctrl.step([0.05, 0.02])
    # a measurement far from the estimate pushes e_hat where no plan reaches 0 in time
    ctrl.e_hat = np.array([5.0, 5.0])
    rec = ctrl.step([5.0, 5.0])
    assert rec.qp_status == "infeasible" and ctrl.status is Status.P1
    # status never returns to running and inputs freeze at zero
    rec = ctrl.step([0.0, 0.0])
    assert rec.qp_status == "skipped" and np.array_equal(rec.u, np.zeros(2))
    assert ctrl.status is Status.P1


def test_zero_start_zero_noise_is_trivial():
    cfg = ControllerConfig()
    ctrl = CatchController(cfg)
    for _ in range(cfg.T):
        rec = ctrl.step(np.zeros(2))
        assert rec.qp_status == "optimal" and np.allclose(rec.u, 0)
    assert ctrl.status is Status.DONE


def closed_loop(cfg, ts, rng, e0):
    ctrl = CatchController(cfg, ts)
    e = np.asarray(e0, dtype=float)
    es, recs = [e], []
    for _ in range(cfg.T):
        v = rng.uniform(cfg.Vhat.lo, cfg.Vhat.hi)
        rec = ctrl.step(e + v)
        recs.append(rec)
        e = e + DT * rec.u + rng.uniform(cfg.W.lo, cfg.W.hi)
        es.append(e)
    return np.array(es), recs


def test_recursive_feasibility_and_tubes():
    cfg = ControllerConfig()
    ts = build_tightened_sets(cfg)
    rng = np.random.default_rng(2)
    started = 0
    for _ in range(60):
        es, recs = closed_loop(cfg, ts, rng, rng.uniform(-0.3, 0.3, 2) * [1, 0.6])
        status = [r.qp_status for r in recs]
        if status[0] != "optimal":
            continue
        started += 1
        assert classify_failure(es, status, cfg.E) is Outcome.SUCCESS
        for t, r in enumerate(recs):
            assert sets.contains(ts.R_con, r.e_hat - r.e_bar)
            assert sets.contains(ts.R_est, es[t] - r.e_hat)
            assert sets.contains(cfg.U, r.u)
    assert started > 40
