import numpy as np

from softmpc.kinematics import ArmGeometry, ee_position
from softmpc.sim.runner import clearance, run_scenario
from softmpc.sim.scenario import parse_toml, scenario_from_dict


def scenario(body, **top):
    head = {"seed": 1, "duration": 2.0, "rate": 15.0, "controller": "robust_mpc", **top}
    text = "\n".join(f"{k} = {v!r}".replace("'", '"') for k, v in head.items()) + "\n" + body
    return scenario_from_dict(parse_toml(text), text)


FIXED = """
[trajectory]
kind = "fixed"
point = {point}
"""


def test_zero_duration_gives_empty_log():
    log, metrics = run_scenario(scenario(FIXED.format(point=[0.0, 0.0, -0.28]), duration=0.0))
    assert len(log) == 0 and metrics.n_steps == 0 and np.isnan(metrics.rmse)


def test_regulates_to_fixed_point():
    target = ee_position(np.array([0.2, 0.1, 0.1, 0.0]), ArmGeometry())
    log, metrics = run_scenario(scenario(FIXED.format(point=[float(v) for v in target]), duration=3.0))
    assert metrics.final_error < 2e-3
    assert metrics.fallback_steps == 0 and metrics.constraint_violations == 0


def test_model_mismatch_hurts_tracking():
    # the controller uses the plant's exact kinematics so the only mismatch is the perturbation
    body = """
[mpc]
exact_chord = true

[trajectory]
kind = "circle"
radius = 0.03
center = [0.0, 0.0, -0.28]
period = 6.0
"""
    nominal = run_scenario(scenario(body, duration=3.0))[1]
    assert nominal.rmse < 1e-3
    for seed in (1, 2):
        perturbed = run_scenario(scenario(body + "\n[plant]\nperturbation = 0.3\n", duration=3.0, seed=seed))[1]
        assert nominal.rmse < perturbed.rmse


def test_clearance_values():
    c = clearance(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), np.array([[0.0, 0.0, 0.5]]), np.array([0.1]))
    assert np.allclose(c, [0.4, np.sqrt(1.25) - 0.1])
    assert np.isnan(clearance(np.zeros(3), np.zeros((0, 3)), np.zeros(0)))
