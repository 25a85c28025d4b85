"""Piecewise-constant-curvature kinematics of a pneumatic soft arm.

Curvature vectors are plain float arrays laid out as
``[theta_x_1, theta_y_1, theta_x_2, theta_y_2, ...]`` with one pair per PCC
section. Pseudo-pressures carry two signed values per segment, chamber
pressures three non-negative values per segment. Every function here
accepts a leading batch dimension on ``q`` so that sampling-heavy callers
(the constraint-box search, finite-difference Jacobians) stay vectorized.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import NegativePressure, NonFiniteInput

CHORD_EPS = 1e-6
FD_STEP = 1e-6


def _hanging_base():
    # arm axis (+z local) points along -z world
    frame = np.eye(4)
    frame[:3, :3] = np.diag([1.0, -1.0, -1.0])
    return frame


def _per_segment(value, n, width=None):
    arr = np.asarray(value, dtype=float)
    if width is None:
        return np.broadcast_to(arr, (n,)).copy()
    return np.broadcast_to(arr, (n, width)).copy()


@dataclass(frozen=True, eq=False)
class ArmGeometry:
    """Geometry and inertial layout of a multi-segment soft arm.

    Scalars given for per-segment fields are broadcast to every segment.
    ``length_scale`` is the constant chord factor used by the forward
    kinematics when the exact chord correction is switched off.
    """

    n_segments: int = 2
    pcc_per_segment: int = 1
    segment_rest_length: np.ndarray = 0.125
    connector_offset: np.ndarray = (0.0, 0.0, 0.02)
    chamber_angles: np.ndarray = (0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0)
    segment_mass: np.ndarray = 0.1
    connector_mass: np.ndarray = 0.02
    segment_radius: np.ndarray = 0.02
    gravity: np.ndarray = (0.0, 0.0, -9.81)
    base_frame: np.ndarray = field(default_factory=_hanging_base)
    length_scale: np.ndarray = 1.0
    theta_max: float = np.pi

    def __post_init__(self):
        n = int(self.n_segments)
        if n < 1 or int(self.pcc_per_segment) < 1:
            raise ValueError("n_segments and pcc_per_segment must be >= 1")
        conv = {
            "segment_rest_length": _per_segment(self.segment_rest_length, n),
            "connector_offset": _per_segment(self.connector_offset, n, 3),
            "chamber_angles": _per_segment(self.chamber_angles, n, 3),
            "segment_mass": _per_segment(self.segment_mass, n),
            "connector_mass": _per_segment(self.connector_mass, n),
            "segment_radius": _per_segment(self.segment_radius, n),
            "length_scale": _per_segment(self.length_scale, n),
            "gravity": np.asarray(self.gravity, dtype=float).reshape(3),
            "base_frame": np.asarray(self.base_frame, dtype=float).reshape(4, 4),
        }
        for name, value in conv.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)

        if np.any(self.segment_rest_length <= 0):
            raise ValueError("segment_rest_length must be strictly positive")
        if not np.all(np.isfinite(self.connector_offset)):
            raise ValueError("connector_offset must be finite")
        if np.any(self.segment_mass <= 0) or np.any(self.connector_mass < 0):
            raise ValueError("segment masses must be positive, connector masses non-negative")
        if np.any(self.length_scale <= 0):
            raise ValueError("length_scale must be positive")
        rot = self.base_frame[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise ValueError("base_frame rotation block is not orthonormal")
        for seg, angles in enumerate(self.chamber_angles):
            wrapped = np.mod(angles, 2 * np.pi)
            gaps = np.abs(wrapped[:, None] - wrapped[None, :])
            gaps = np.minimum(gaps, 2 * np.pi - gaps)
            if np.any(gaps[np.triu_indices(3, 1)] < 1e-9):
                raise ValueError(f"segment {seg}: chamber angles must be pairwise distinct")
            # chambers must positively span the bending plane
            if _chamber_null_vector(angles) is None:
                raise ValueError(f"segment {seg}: chambers cannot produce every bending moment")

    @property
    def n_sections(self):
        return self.n_segments * self.pcc_per_segment

    @property
    def q_size(self):
        return 2 * self.n_sections

    @property
    def n_inputs(self):
        return 2 * self.n_segments

    @property
    def section_rest_length(self):
        """Rest length of every PCC section (segments split evenly)."""
        return np.repeat(self.segment_rest_length / self.pcc_per_segment, self.pcc_per_segment)

    @property
    def section_segment(self):
        return np.repeat(np.arange(self.n_segments), self.pcc_per_segment)

    @property
    def total_rest_length(self):
        return float(self.segment_rest_length.sum()
                     + np.linalg.norm(self.connector_offset, axis=1).sum())

    def replace(self, **changes):
        kwargs = {name: getattr(self, name) for name in self.__dataclass_fields__}
        kwargs.update(changes)
        return ArmGeometry(**kwargs)


class EePose(NamedTuple):
    """End-effector position plus marker points (base, segment ends)."""

    position: np.ndarray
    marker_positions: np.ndarray


class PolarCurvature(NamedTuple):
    theta: float
    phi: float
    singular: bool


def theta_phi_to_xy(theta, phi):
    """Map bending angle and bending-plane angle to (theta_x, theta_y)."""
    return theta * np.cos(phi), theta * np.sin(phi)


def xy_to_theta_phi(theta_x, theta_y):
    """Inverse of :func:`theta_phi_to_xy`.

    At the straight configuration the bending plane is undefined; ``phi``
    is then reported as 0 and ``singular`` is set.
    """
    theta = float(np.hypot(theta_x, theta_y))
    if theta == 0.0:
        return PolarCurvature(0.0, 0.0, True)
    return PolarCurvature(theta, float(np.arctan2(theta_y, theta_x)), False)


def chord_length(theta, l0):
    """Straight-line length of a circular arc of rest length ``l0`` bent by ``theta``.

    Uses ``2 l0 sin(theta/2) / theta`` and a series expansion for
    ``|theta| <= CHORD_EPS`` where the closed form is 0/0.
    """
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) <= CHORD_EPS
    safe = np.where(small, 1.0, theta)
    exact = 2.0 * l0 * np.sin(0.5 * safe) / safe
    series = l0 * (1.0 - theta**2 / 24.0)
    out = np.where(small, series, exact)
    return out if out.ndim else float(out)


def half_rotation(theta_x, theta_y):
    """``RotY(-theta_x/2) @ RotX(-theta_y/2)`` for arrays of angles."""
    a = -0.5 * np.asarray(theta_x, dtype=float)
    b = -0.5 * np.asarray(theta_y, dtype=float)
    ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
    zero = np.zeros_like(a)
    rows = [
        [ca, sa * sb, sa * cb],
        [zero, cb, -sb],
        [-sa, ca * sb, ca * cb],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _check_q(q, geom):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != geom.q_size:
        raise ValueError(f"curvature vector must have {geom.q_size} entries, got {q.shape[-1]}")
    if not np.all(np.isfinite(q)):
        raise NonFiniteInput("curvature vector contains non-finite entries")
    return q


def section_lengths(q, geom, shrink):
    """Chord length of every section for curvature ``q`` (shape ``(..., n_sections)``)."""
    theta = np.hypot(q[..., 0::2], q[..., 1::2])
    l0 = geom.section_rest_length
    if shrink:
        return chord_length(theta, l0)
    scale = np.repeat(geom.length_scale, geom.pcc_per_segment)
    return np.broadcast_to(l0 * scale, theta.shape)


def arm_points(q, geom, shrink=True):
    """Key points along the arm, in the world frame.

    Returns
    -------
    markers : ndarray, shape (..., n_segments + 1, 3)
        Base, then the end of every segment's connector (the last one is
        the end-effector).
    chord_mid : ndarray, shape (..., n_sections, 3)
        Midpoint of every section chord.
    """
    q = _check_q(q, geom)
    batch = q.shape[:-1]
    lengths = section_lengths(q, geom, shrink)
    rot = np.broadcast_to(np.eye(3), batch + (3, 3))
    pos = np.zeros(batch + (3,))
    markers = [pos]
    mids = []
    for s in range(geom.n_sections):
        half = half_rotation(q[..., 2 * s], q[..., 2 * s + 1])
        rot = rot @ half
        axis = rot[..., :, 2]
        mids.append(pos + 0.5 * lengths[..., s, None] * axis)
        pos = pos + lengths[..., s, None] * axis
        rot = rot @ half
        if (s + 1) % geom.pcc_per_segment == 0:
            seg = s // geom.pcc_per_segment
            pos = pos + rot @ geom.connector_offset[seg]
            markers.append(pos)
    base_rot = geom.base_frame[:3, :3]
    base_pos = geom.base_frame[:3, 3]
    markers = np.stack(markers, axis=-2) @ base_rot.T + base_pos
    mids = np.stack(mids, axis=-2) @ base_rot.T + base_pos
    return markers, mids


def forward_kinematics(q, geom, shrink=True):
    """End-effector position from the chain of half-angle rotations.

    Each section contributes ``R_i (0, 0, l_s)`` after half of its bending
    rotation and each connector ``R_i l_c`` after the other half. With
    ``shrink`` the section length is the exact chord; otherwise the rest
    length times ``geom.length_scale``.
    """
    markers, _ = arm_points(q, geom, shrink)
    return EePose(markers[..., -1, :], markers)


def ee_position(q, geom, shrink=True):
    return arm_points(q, geom, shrink)[0][..., -1, :]


def fk_jacobian(q, geom, shrink=True, step=FD_STEP):
    """Central-difference Jacobian of the end-effector position, shape ``(..., 3, q_size)``."""
    q = _check_q(q, geom)
    n = geom.q_size
    offsets = step * np.eye(n)
    stacked = np.concatenate([q[..., None, :] + offsets, q[..., None, :] - offsets], axis=-2)
    pos = ee_position(stacked, geom, shrink)
    jac = (pos[..., :n, :] - pos[..., n:, :]) / (2.0 * step)
    return np.swapaxes(jac, -1, -2)


def _chamber_null_vector(angles):
    """Positive common-mode direction of a chamber triple, or ``None``."""
    moment = np.vstack([np.cos(angles), np.sin(angles)])
    _, _, vt = np.linalg.svd(moment)
    null = vt[-1]
    null = null if null.sum() > 0 else -null
    if np.any(null <= 1e-9):
        return None
    return null / null.max()


def pseudo_to_chamber(p, geom):
    """Reconstruct non-negative chamber pressures from pseudo-pressures.

    Per segment the least-norm chamber pattern reproducing the bending
    command is computed (``2/3 (px cos a_i + py sin a_i)`` for three
    symmetric chambers) and then lifted by the smallest common-mode offset
    that makes every chamber non-negative. The common mode produces no
    net bending moment, so :func:`chamber_to_pseudo` recovers ``p``.
    """
    p = np.asarray(p, dtype=float).reshape(geom.n_segments, 2)
    out = np.empty((geom.n_segments, 3))
    for seg in range(geom.n_segments):
        angles = geom.chamber_angles[seg]
        moment = np.vstack([np.cos(angles), np.sin(angles)])
        raw = np.linalg.pinv(moment) @ p[seg]
        null = _chamber_null_vector(angles)
        lift = max(0.0, float(np.max(-raw / null)))
        out[seg] = np.maximum(raw + lift * null, 0.0)
    return out.reshape(-1)


def chamber_to_pseudo(p, geom):
    """Net bending command ``sum_i p_i (cos a_i, sin a_i)`` per segment."""
    p = np.asarray(p, dtype=float).reshape(geom.n_segments, 3)
    if np.any(p < 0):
        raise NegativePressure("chamber pressures must be non-negative")
    px = np.sum(p * np.cos(geom.chamber_angles), axis=1)
    py = np.sum(p * np.sin(geom.chamber_angles), axis=1)
    return np.column_stack([px, py]).reshape(-1)
