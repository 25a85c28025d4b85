import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softmpc.exceptions import RefTooShort
from softmpc.kinematics import ee_position
from softmpc.linearization import linearize
from softmpc.mpc import (MpcConfig, TubeMpcController, build_problem, initial_state,
                         obstacle_penalty, soften_state_constraints, solve_controller_step,
                         tube_feedback)
from softmpc.opt.sqp import TrackingProblem, sqp_solve


def hold_window(q, geom, N=7):
    return np.tile(ee_position(np.asarray(q, float), geom), (N + 1, 1))


def test_bounded_steps_rounding():
    assert MpcConfig(N=7).bounded_steps == 2
    assert MpcConfig(N=7, bound_rounding="floor").bounded_steps == 1
    assert MpcConfig(N=8).bounded_steps == 2
    assert MpcConfig(N=2, bound_rounding="floor").bounded_steps == 1


def test_tube_feedback_examples():
    k = np.array([[2.0]])
    assert np.allclose(tube_feedback([1.0], k, [0.1], [0.0], 1.0, -10, 10), 1.2)
    assert np.allclose(tube_feedback([1.0], k, [1.0], [0.0], 0.5, -10, 10), 1.5)
    assert np.allclose(tube_feedback([1.0], np.zeros((1, 1)), [5.0], [0.0], 1.0, -10, 10), 1.0)
    assert np.allclose(tube_feedback([9.8], k, [1.0], [0.0], 1.0, -10, 10), 10.0)


@settings(max_examples=100)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4),
       st.lists(st.floats(-1, 1), min_size=8, max_size=8),
       st.floats(0.0, 5.0))
def test_tube_feedback_stays_within_clamp_and_bounds(u0, dev, clamp):
    rng = np.random.default_rng(0)
    k = rng.normal(size=(4, 8)) * 100
    u = tube_feedback(np.array(u0), k, np.array(dev), np.zeros(8), clamp, -60, 60)
    assert np.all(u >= -60) and np.all(u <= 60)
    assert np.all(np.abs(u - np.array(u0)) <= clamp + 1e-12)


def test_obstacle_penalty_values():
    obs = np.array([[0.0, 0.0, 0.0]])
    assert np.isclose(obstacle_penalty([0, 0, 0], obs, 3.0, 50.0), 3.0)
    point = [1 / np.sqrt(50), 0, 0]
    assert np.isclose(obstacle_penalty(point, obs, 3.0, 50.0), 3.0 / np.e)
    assert obstacle_penalty([1.0, 0, 0], obs, 3.0, 500.0) < 1e-200


def one_dof_problem(e):
    # q(k+1) = u(k); track q = 1 under a softened limit q <= 0.5
    prob = TrackingProblem(
        A_d=np.zeros((2, 2)), B_d=np.array([[1.0], [0.0]]), W_d=np.zeros(2), x0=np.zeros(2), n_q=1,
        output=lambda q: q.copy(), output_jacobian=lambda q: np.ones(q.shape + (1,)),
        ref=np.ones((3, 1)), Q=np.eye(1), Q_N=np.eye(1), S=np.zeros((1, 1)), R=np.zeros((1, 1)),
        R_delta=np.zeros((1, 1)), u_old=np.zeros(1), u_min=np.array([-10.0]),
        u_max=np.array([10.0]), du_max=np.array([10.0]), bounded_steps=2, terminal_velocity=False)
    return soften_state_constraints(prob, [[1.0]], [0.5], [[e]])


@pytest.mark.parametrize("e", [0.25, 1.0, 4.0, 100.0])
def test_soft_limit_binding_closed_form(e):
    sol = sqp_solve(one_dof_problem(e))
    q1 = (1 + 0.5 * e) / (1 + e)
    assert np.isclose(sol.q[1, 0], q1, atol=1e-5)
    assert np.isclose(sol.slack[1, 0], q1 - 0.5, atol=1e-5)
    assert abs(sol.slack[0, 0]) < 1e-6
    assert np.isclose(sol.q[2, 0], 1.0, atol=1e-5)


def test_soft_limit_unit_weight():
    sol = sqp_solve(one_dof_problem(1.0))
    assert np.isclose(sol.q[1, 0], 0.75, atol=1e-5) and np.isclose(sol.slack[1, 0], 0.25, atol=1e-5)


def test_soft_limit_not_binding_gives_zero_slack(geom, params):
    cfg = MpcConfig(soft_A=np.vstack([np.eye(4), -np.eye(4)]), soft_b=np.full(8, 2.0), soft_E=1e3)
    ctrl = initial_state(cfg)
    _, sol, _ = solve_controller_step(np.zeros(4), np.zeros(4), hold_window(np.zeros(4), geom),
                                      cfg, ctrl, geom, params)
    assert np.abs(sol.slack).max() < 1e-6


def test_hard_input_bounds_infeasible_falls_back(geom, params):
    cfg = MpcConfig(p_min=5.0, p_max=6.0, du_max=1.0)
    ctrl = initial_state(cfg)
    ctrl.u_old = np.zeros(4)
    p, sol, _ = solve_controller_step(np.zeros(4), np.zeros(4), hold_window(np.zeros(4), geom),
                                      cfg, ctrl, geom, params)
    assert sol.status == "Fallback"
    assert sol.diagnostics["family"] == "input_bounds"
    assert np.all(np.isfinite(p))


def test_zero_weight_obstacle_is_inert(geom, params):
    q = np.array([0.2, -0.1, 0.1, 0.05])
    ref = hold_window(q, geom)
    outs = []
    for cfg in (MpcConfig(), MpcConfig(obstacles=[[0.0, 0.0, -0.2]], L=0.0, l=100.0)):
        p, sol, _ = solve_controller_step(np.zeros(4), np.zeros(4), ref, cfg, initial_state(cfg), geom, params)
        outs.append((p, sol.u))
    assert np.array_equal(outs[0][0], outs[1][0]) and np.array_equal(outs[0][1], outs[1][1])


def test_warm_start_idempotent(geom, params):
    cfg = MpcConfig()
    q = np.array([0.3, 0.1, -0.2, 0.2])
    dyn, _ = linearize(np.zeros(4), np.zeros(4), geom, params, cfg.Ts, True)
    prob = build_problem(np.zeros(8), np.zeros(4), hold_window(q, geom), dyn, cfg, geom)
    cold = sqp_solve(prob, max_outer=20, tol_sqp=1e-12)
    warm = sqp_solve(prob, warm_start=cold.diagnostics["decision"], max_outer=20, tol_sqp=1e-12)
    assert np.abs(warm.u - cold.u).max() < 1e-8 * max(1.0, np.abs(cold.u).max())


def test_reference_too_short(geom, params):
    cfg = MpcConfig()
    dyn, _ = linearize(np.zeros(4), np.zeros(4), geom, params, cfg.Ts)
    with pytest.raises(RefTooShort):
        build_problem(np.zeros(8), np.zeros(4), np.zeros((cfg.N, 3)), dyn, cfg, geom)


def test_stationary_point_is_held(geom, params):
    cfg = MpcConfig()
    p, sol, info = solve_controller_step(np.zeros(4), np.zeros(4), hold_window(np.zeros(4), geom),
                                         cfg, initial_state(cfg), geom, params)
    assert np.abs(p).max() < 1e-3
    assert not info["clamp_active"]


def test_plan_satisfies_model_and_terminal_rest(geom, params):
    cfg = MpcConfig()
    q = np.array([0.3, 0.2, -0.1, 0.3])
    dyn, _ = linearize(np.zeros(4), np.zeros(4), geom, params, cfg.Ts, True)
    sol = sqp_solve(build_problem(np.zeros(8), np.zeros(4), hold_window(q, geom), dyn, cfg, geom))
    for k in range(cfg.N):
        assert np.abs(sol.x[k + 1] - dyn.step(sol.x[k], sol.u[k])).max() < 1e-6
    assert np.abs(sol.qd[-1]).max() < 1e-6
    assert np.all(np.abs(sol.u[0]) <= cfg.du_max + 1e-6)


def test_applied_inputs_respect_slew_and_bounds(geom, params):
    cfg = MpcConfig(tube_clamp=0.5, dare_Q=100.0)
    ctrl = TubeMpcController(geom, params, cfg)
    rng = np.random.default_rng(5)
    q, qd = np.zeros(4), np.zeros(4)
    prev = ctrl.state.u_old.copy()
    target = np.array([0.4, -0.3, 0.2, 0.1])
    for _ in range(6):
        p, sol, info = ctrl.step(q, qd, hold_window(target, geom))
        assert np.all(p >= cfg.p_min - 1e-9) and np.all(p <= cfg.p_max + 1e-9)
        assert np.all(np.abs(p - prev) <= cfg.du_max + cfg.tube_clamp + 1e-6)
        prev = p
        q, qd = sol.q[1] + rng.normal(0, 0.01, 4), sol.qd[1] + rng.normal(0, 0.05, 4)


def test_zero_tube_gain_applies_nominal(geom, params):
    cfg = MpcConfig(use_tube=False)
    ctrl = TubeMpcController(geom, params, cfg)
    ref = hold_window([0.2, 0, 0, 0.1], geom)
    ctrl.step(np.zeros(4), np.zeros(4), ref)
    p, sol, info = ctrl.step(np.full(4, 0.05), np.zeros(4), ref)
    assert np.array_equal(p, sol.u[0])
    assert np.allclose(info["tube_correction"], 0)


def test_large_deviation_saturates_clamp(geom, params):
    cfg = MpcConfig(tube_clamp=0.1, dare_Q=100.0)
    ctrl = TubeMpcController(geom, params, cfg)
    ref = hold_window(np.zeros(4), geom)
    ctrl.step(np.zeros(4), np.zeros(4), ref)
    p, sol, info = ctrl.step(np.array([0.05, 0, 0, 0]), np.array([1.0, 0, 0, 0]), ref)
    assert info["clamp_active"]
    assert np.all(np.abs(p - np.clip(sol.u[0], cfg.p_min, cfg.p_max)) <= 0.1 + 1e-12)


def test_deterministic_controller(geom, params):
    ref = hold_window([0.2, 0.1, 0, 0.1], geom)
    runs = []
    for _ in range(2):
        ctrl = TubeMpcController(geom, params, MpcConfig())
        runs.append([ctrl.step(np.zeros(4), np.zeros(4), ref)[0] for _ in range(3)])
    assert all(np.array_equal(a, b) for a, b in zip(*runs))


@pytest.mark.parametrize("changes", [
    dict(N=1), dict(Ts=0.0), dict(p_min=10.0, p_max=5.0), dict(du_max=0.0), dict(tube_clamp=-1.0),
    dict(R=-1.0), dict(bound_rounding="round"), dict(obstacles=[[0, 0, 0]], L=1.0, l=0.0),
    dict(observer_gain=0.0), dict(disturbance_gain=1.5), dict(disturbance_slope_gain=-0.1),
    dict(soft_A=np.eye(3), soft_b=np.zeros(3)),
])
def test_config_validation(changes):
    with pytest.raises(ValueError):
        MpcConfig(**changes)
