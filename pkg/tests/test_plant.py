import numpy as np
import pytest

from softmpc.dynamics import DynamicsParams, forward_dynamics
from softmpc.exceptions import NonFiniteInput
from softmpc.kinematics import ArmGeometry, chamber_to_pseudo, pseudo_to_chamber
from softmpc.sim.baseline import static_pressure
from softmpc.sim.plant import (PlantOptions, PlantState, chamber_moment_matrix, perturbed_model,
                               plant_step)


def test_rest_is_equilibrium(geom, params):
    state = PlantState.rest(geom)
    for _ in range(15):
        state, _ = plant_step(state, np.zeros(6), 1 / 15, geom, params)
    assert np.abs(state.q).max() < 1e-12 and np.abs(state.qd).max() < 1e-12


def test_static_pressure_holds_bent_pose(geom, params):
    q = np.array([0.3, -0.2, 0.25, 0.1])
    chambers = pseudo_to_chamber(static_pressure(q, geom, params), geom)
    state = PlantState(q, np.zeros(4), np.zeros(6))
    for _ in range(15):
        state, _ = plant_step(state, chambers, 1 / 15, geom, params)
    assert np.abs(state.q - q).max() < 1e-8


def test_moment_matrix_inverts_chamber_map(geom, rng):
    for _ in range(50):
        p = rng.uniform(-60, 60, 4)
        ch = pseudo_to_chamber(p, geom)
        assert np.all(ch >= -1e-12)
        assert np.allclose(chamber_moment_matrix(geom) @ ch, p)
        assert np.allclose(chamber_to_pseudo(ch, geom), p)


def test_pressure_lag_limits(geom, params):
    chambers = pseudo_to_chamber(np.array([20.0, 0, -10, 5]), geom)
    s0 = PlantState.rest(geom)
    instant, _ = plant_step(s0, chambers, 0.1, geom, params)
    gaps = []
    for tau in (1e-2, 1e-3, 1e-4):
        lagged, _ = plant_step(s0, chambers, 0.1, geom, params,
                               PlantOptions(substeps=max(20, int(0.2 / tau)), lag_tau=tau))
        gaps.append(np.abs(lagged.q - instant.q).max() / np.abs(instant.q).max())
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 5e-3
    slow, _ = plant_step(s0, chambers, 0.1, geom, params, PlantOptions(lag_tau=0.05))
    assert np.abs(slow.q).max() < np.abs(instant.q).max()
    assert np.all(np.abs(slow.pressure - chambers) < np.abs(chambers) + 1e-12)


def test_step_matches_one_rk4_substep(geom, params):
    q0, qd0 = np.array([0.1, 0.2, -0.1, 0.0]), np.array([0.0, 0.1, 0.0, -0.2])
    p = np.array([5.0, -3.0, 2.0, 1.0])
    chambers = pseudo_to_chamber(p, geom)
    dt = 1e-3

    def f(y):
        return np.concatenate([y[4:], forward_dynamics(y[:4], y[4:], p, geom, params)])

    y = np.concatenate([q0, qd0])
    k1 = f(y); k2 = f(y + dt / 2 * k1); k3 = f(y + dt / 2 * k2); k4 = f(y + dt * k3)
    expected = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    nxt, _ = plant_step(PlantState(q0, qd0, np.zeros(6)), chambers, dt, geom, params, PlantOptions(substeps=1))
    assert np.allclose(np.concatenate([nxt.q, nxt.qd]), expected, atol=1e-13)


def test_perturbed_model_scales(geom, params, rng):
    assert perturbed_model(geom, params, 0.0, rng) == (geom, params)
    g2, p2 = perturbed_model(geom, params, 0.1, np.random.default_rng(3))
    ratios = [g2.segment_mass / geom.segment_mass, g2.connector_mass / geom.connector_mass,
              np.asarray(p2.stiffness) / np.asarray(params.stiffness)]
    for r in ratios:
        assert np.allclose(np.abs(np.asarray(r) - 1), 0.1)


def test_noise_requires_rng_and_is_seeded(geom, params):
    opts = PlantOptions(noise_sigma=0.01)
    with pytest.raises(ValueError):
        plant_step(PlantState.rest(geom), np.zeros(6), 0.1, geom, params, opts)
    a = plant_step(PlantState.rest(geom), np.zeros(6), 0.1, geom, params, opts, np.random.default_rng(1))[1]
    b = plant_step(PlantState.rest(geom), np.zeros(6), 0.1, geom, params, opts, np.random.default_rng(1))[1]
    assert np.array_equal(a[0], b[0]) and np.abs(a[0]).max() > 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_is_reported(geom):
    stiff = DynamicsParams(stiffness=1e9)
    state = PlantState(np.full(4, 0.5), np.zeros(4), np.zeros(6))
    with pytest.raises(NonFiniteInput):
        for _ in range(50):
            state, _ = plant_step(state, np.zeros(6), 1.0, geom, stiff, PlantOptions(substeps=1))


def test_options_validation():
    with pytest.raises(ValueError):
        PlantOptions(substeps=0)
    with pytest.raises(ValueError):
        PlantOptions(noise_sigma=-1)
