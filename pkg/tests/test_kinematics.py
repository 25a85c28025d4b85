import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softmpc.exceptions import NegativePressure, NonFiniteInput
from softmpc.kinematics import (ArmGeometry, arm_points, chamber_to_pseudo, chord_length,
                                ee_position, fk_jacobian, forward_kinematics, pseudo_to_chamber,
                                theta_phi_to_xy, xy_to_theta_phi)

angles = st.floats(-np.pi / 2, np.pi / 2, allow_nan=False)


def upright(**kw):
    """Geometry with the identity base frame, so base and world axes agree."""
    return ArmGeometry(base_frame=np.eye(4), **kw)


def test_theta_phi_examples():
    assert np.allclose(theta_phi_to_xy(np.pi / 2, 0.0), (np.pi / 2, 0.0))
    assert np.allclose(theta_phi_to_xy(1.0, np.pi / 2), (0.0, 1.0), atol=1e-15)
    for phi in (0.0, 1.0, -2.5):
        assert theta_phi_to_xy(0.0, phi) == (0.0, 0.0)


def test_xy_to_theta_phi_examples():
    out = xy_to_theta_phi(np.pi / 2, 0.0)
    assert np.isclose(out.theta, np.pi / 2) and out.phi == 0.0 and not out.singular
    straight = xy_to_theta_phi(0.0, 0.0)
    assert straight.theta == 0.0 and straight.phi == 0.0 and straight.singular
    triple = xy_to_theta_phi(0.3, 0.4)
    assert np.isclose(triple.theta, 0.5) and np.isclose(triple.phi, np.arctan2(4, 3))


@given(st.floats(1e-6, np.pi), st.floats(-np.pi + 1e-9, np.pi))
def test_polar_round_trip(theta, phi):
    back = xy_to_theta_phi(*theta_phi_to_xy(theta, phi))
    assert abs(back.theta - theta) < 1e-12
    # compare angles on the circle
    assert abs(np.angle(np.exp(1j * (back.phi - phi)))) < 1e-12 / theta + 1e-12


def test_chord_length_examples():
    assert np.isclose(chord_length(np.pi, 1.0), 2 / np.pi)
    assert np.isclose(chord_length(np.pi / 2, 1.0), 2 * np.sqrt(2) / np.pi)
    assert chord_length(0.0, 0.3) == 0.3
    # both branches agree at the switch point
    assert abs(chord_length(1.0000001e-6, 1.0) - chord_length(0.9999999e-6, 1.0)) < 1e-15


@given(st.floats(-np.pi, np.pi))
def test_chord_never_exceeds_rest_length(theta):
    assert 0 < chord_length(theta, 0.2) <= 0.2


def test_straight_arm_stacks_lengths():
    g = upright(segment_rest_length=0.125, connector_offset=(0, 0, 0.02))
    pos = ee_position(np.zeros(4), g)
    assert np.allclose(pos, [0, 0, 2 * 0.125 + 2 * 0.02], atol=1e-12, rtol=0)
    markers = forward_kinematics(np.zeros(4), g).marker_positions
    assert np.allclose(markers[:, 2], [0, 0.145, 0.29], atol=1e-12, rtol=0)


def test_hanging_default_points_down(geom):
    assert np.allclose(ee_position(np.zeros(4), geom), [0, 0, -geom.total_rest_length])


def test_half_turn_single_segment():
    g = upright(n_segments=1, segment_rest_length=1.0, connector_offset=(0, 0, 0))
    q = np.array([np.pi, 0.0])
    assert np.allclose(ee_position(q, g, shrink=False), [-1, 0, 0], atol=1e-12)
    # with the chord the tip is exactly the semicircle end
    assert np.allclose(ee_position(q, g, shrink=True), [-2 / np.pi, 0, 0], atol=1e-12)


@given(st.floats(-np.pi, np.pi).filter(lambda t: abs(t) > 1e-4))
def test_planar_bend_matches_arc(theta):
    # closed-form tip of a circular arc of length l0 bent by theta about -y
    g = upright(n_segments=1, segment_rest_length=0.3, connector_offset=(0, 0, 0))
    tip = ee_position(np.array([theta, 0.0]), g, shrink=True)
    expected = 0.3 / theta * np.array([-(1 - np.cos(theta)), 0.0, np.sin(theta)])
    assert np.allclose(tip, expected, atol=1e-12)


@given(st.floats(-1.5, 1.5), st.sampled_from([2, 3, 5]))
def test_subdivided_planar_arc_is_the_same_arc(theta, pieces):
    one = upright(n_segments=1, segment_rest_length=0.2, connector_offset=(0, 0, 0))
    many = upright(n_segments=1, pcc_per_segment=pieces, segment_rest_length=0.2,
                   connector_offset=(0, 0, 0))
    q_many = np.tile([0.0, theta / pieces], pieces)
    assert np.allclose(ee_position(np.array([0.0, theta]), one),
                       ee_position(q_many, many), atol=1e-12)


@settings(max_examples=200)
@given(st.lists(angles, min_size=4, max_size=4))
def test_tip_within_total_length(q):
    g = ArmGeometry()
    markers, mids = arm_points(np.array(q), g, shrink=True)
    base = g.base_frame[:3, 3]
    assert np.linalg.norm(markers[-1] - base) <= g.total_rest_length + 1e-12
    assert mids.shape == (2, 3)


def test_batched_fk_matches_loop(geom, rng):
    q = rng.uniform(-1, 1, (7, 4))
    batched = ee_position(q, geom)
    assert np.array_equal(batched, np.array([ee_position(row, geom) for row in q]))


def test_fk_rejects_bad_input(geom):
    with pytest.raises(NonFiniteInput):
        ee_position(np.array([0, np.nan, 0, 0]), geom)
    with pytest.raises(ValueError):
        ee_position(np.zeros(3), geom)


def test_jacobian_at_rest_is_tangential():
    g = upright(n_segments=1, segment_rest_length=0.1, connector_offset=(0, 0, 0))
    jac = fk_jacobian(np.zeros(2), g)
    assert abs(jac[2, 0]) < 1e-8 and abs(jac[2, 1]) < 1e-8
    assert np.isclose(jac[0, 0], -0.05, atol=1e-8)


def test_jacobian_directional_derivatives(geom, rng):
    h = 1e-5
    for _ in range(100):
        q = rng.uniform(-1.4, 1.4, 4)
        v = rng.normal(size=4)
        v /= np.linalg.norm(v)
        fd = (ee_position(q + h * v, geom) - ee_position(q - h * v, geom)) / (2 * h)
        jv = fk_jacobian(q, geom) @ v
        assert np.linalg.norm(fd - jv) <= 1e-6 * max(np.linalg.norm(jv), 1e-3)


def test_jacobian_deterministic(geom):
    q = np.array([0.3, -0.2, 0.5, 0.1])
    assert np.array_equal(fk_jacobian(q, geom), fk_jacobian(q, geom))


def test_chamber_examples(geom):
    one = ArmGeometry(n_segments=1)
    assert np.array_equal(pseudo_to_chamber(np.zeros(2), one), np.zeros(3))
    assert np.allclose(pseudo_to_chamber(np.array([3.0, 0.0]), one), [3, 0, 0], atol=1e-12)
    assert np.allclose(chamber_to_pseudo(np.ones(3), one), 0, atol=1e-12)
    assert np.allclose(chamber_to_pseudo(np.array([3.0, 0, 0]), one), [3, 0])
    assert np.array_equal(chamber_to_pseudo(np.zeros(6), geom), np.zeros(4))
    with pytest.raises(NegativePressure):
        chamber_to_pseudo(np.array([1.0, -0.1, 0.0]), one)


def test_chamber_reconstruction_many_commands(geom, rng):
    cmds = rng.uniform(-60, 60, (10_000, 4))
    for p in cmds:
        ch = pseudo_to_chamber(p, geom)
        assert ch.min() >= 0
        assert np.abs(chamber_to_pseudo(ch, geom) - p).max() < 1e-12 * 60


@given(st.lists(st.floats(-100, 100), min_size=4, max_size=4))
def test_chamber_round_trip_property(p):
    g = ArmGeometry()
    ch = pseudo_to_chamber(np.array(p), g)
    assert ch.min() >= 0
    assert np.allclose(chamber_to_pseudo(ch, g), p, atol=1e-10)
    # the lift is the smallest one: some chamber of each segment is empty
    assert np.all(ch.reshape(2, 3).min(axis=1) < 1e-9)


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArmGeometry(chamber_angles=(0.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        ArmGeometry(segment_rest_length=0.0)
    with pytest.raises(ValueError):
        ArmGeometry(chamber_angles=(0.0, 0.1, 0.2))  # cannot push in every direction
    assert ArmGeometry(n_segments=3, pcc_per_segment=2).q_size == 12
