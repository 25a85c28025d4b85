import numpy as np
import pytest

from softmpc.kinematics import ee_position
from softmpc.sim.baseline import QuasiStaticController, damped_pinv, quasi_static_step, static_pressure


def test_damped_pinv_limits(rng):
    j = rng.normal(size=(3, 4))
    assert np.allclose(damped_pinv(j, 0.0), np.linalg.pinv(j))
    assert np.abs(damped_pinv(j, 1e3)).max() < 1e-5


def test_zero_error_holds_static_pressure(geom, params):
    q = np.array([0.2, -0.1, 0.3, 0.05])
    p, q_cmd = quasi_static_step(q, ee_position(q, geom, False), 0.5, geom, params, -60, 60)
    assert np.allclose(q_cmd, q)
    assert np.allclose(p, static_pressure(q, geom, params))


def test_static_pressure_balances_forces(geom, params):
    from softmpc.dynamics import dynamics_terms

    q = np.array([0.4, 0.1, -0.2, 0.3])
    t = dynamics_terms(q, np.zeros(4), geom, params)
    assert np.allclose(t.A_alloc @ static_pressure(q, geom, params), t.K @ q + t.g)


def test_iteration_contracts_towards_target(geom, params):
    target = ee_position(np.array([0.3, 0.2, 0.2, -0.1]), geom, False)
    q = np.zeros(4)
    errors = []
    for _ in range(8):
        _, q = quasi_static_step(q, target, 0.5, geom, params, -60, 60)
        errors.append(np.linalg.norm(ee_position(q, geom, False) - target))
    assert all(b < a for a, b in zip(errors, errors[1:]))


def test_output_clipped(geom, params):
    far = np.array([0.3, 0.0, -0.05])
    p, _ = quasi_static_step(np.zeros(4), far, 1.0, geom, params, -5.0, 5.0)
    assert np.all(np.abs(p) <= 5.0)
    with pytest.raises(ValueError):
        quasi_static_step(np.zeros(4), far, 0.0, geom, params, -5.0, 5.0)


def test_controller_uses_next_target(geom, params):
    ctrl = QuasiStaticController(geom, params)
    ref = np.array([ee_position(np.zeros(4), geom), [0.02, 0.0, -0.29]])
    p, sol, info = ctrl.step(np.zeros(4), np.zeros(4), ref)
    expected, _ = quasi_static_step(np.zeros(4), ref[1], 0.5, geom, params, -60, 60)
    assert sol is None and np.allclose(p, expected) and info["solve_time"] >= 0
