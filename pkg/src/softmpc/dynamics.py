"""Augmented rigid-body dynamics of the PCC arm.

Each PCC section is replaced by five joints, ``RotY(-tx/2)``, ``RotX(-ty/2)``,
a prismatic slide of the chord length along the local z axis, and again
``RotY(-tx/2)``, ``RotX(-ty/2)``. The joint-space inertia and bias terms of
that chain are computed with the composite-rigid-body and recursive
Newton-Euler algorithms and pulled back to curvature space through the
mapping Jacobian::

    B(q) = Jm^T B_xi(m(q)) Jm
    c(q, qd) = Jm^T c_xi(m(q), Jm qd, dJm qd)
    g(q) = Jm^T g_xi(m(q))

Both algorithms are written in absolute (base-frame) Plücker coordinates,
where the outward and inward recursions of a serial chain reduce to
cumulative sums over joints. That keeps them vectorized, which matters
because the plant integrator calls them tens of thousands of times per run.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .exceptions import NonFiniteInput, SingularInertia
from .kinematics import chord_length

REVOLUTE, PRISMATIC = 0, 1
_SERIES_THETA = 1e-2

_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class DynamicsParams:
    """Linear spring/damper and actuation parameters of the arm.

    ``stiffness`` and ``damping`` are per-coordinate (scalars broadcast),
    ``allocation_scale`` is the generalized force per unit pseudo-pressure
    for each segment.
    """

    stiffness: float = 0.3
    damping: float = 0.015
    allocation_scale: float = 0.01
    max_inertia_condition: float = 1e10

    def stiffness_matrix(self, geom):
        return np.diag(np.broadcast_to(np.asarray(self.stiffness, float), (geom.q_size,)))

    def damping_matrix(self, geom):
        return np.diag(np.broadcast_to(np.asarray(self.damping, float), (geom.q_size,)))

    def allocation_matrix(self, geom):
        scale = np.broadcast_to(np.asarray(self.allocation_scale, float), (geom.n_segments,))
        alloc = np.zeros((geom.q_size, geom.n_inputs))
        for s, seg in enumerate(geom.section_segment):
            alloc[2 * s:2 * s + 2, 2 * seg:2 * seg + 2] = scale[seg] * np.eye(2)
        return alloc

    def scaled(self, stiffness=1.0, damping=1.0):
        return DynamicsParams(np.asarray(self.stiffness) * stiffness,
                              np.asarray(self.damping) * damping,
                              self.allocation_scale, self.max_inertia_condition)


class DynamicsTerms(NamedTuple):
    B: np.ndarray
    c: np.ndarray
    g: np.ndarray
    K: np.ndarray
    D: np.ndarray
    A_alloc: np.ndarray


@dataclass(frozen=True, eq=False)
class AugmentedChain:
    """Serial chain of revolute/prismatic joints with one body per joint.

    Attributes
    ----------
    joint_type : (nj,) int array, ``REVOLUTE`` or ``PRISMATIC``.
    axis : (nj, 3) joint axis in the parent frame.
    offset : (nj, 3) fixed translation from the parent frame to the joint.
    mass, com, inertia : inertial parameters of the body moved by each
        joint; ``com`` in body coordinates, ``inertia`` about the centre of
        mass.
    tip_offset : translation from the last body to the end-effector.
    """

    joint_type: np.ndarray
    axis: np.ndarray
    offset: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    tip_offset: np.ndarray
    gravity: np.ndarray

    @property
    def n_joints(self):
        return len(self.joint_type)


@lru_cache(maxsize=32)
def build_chain(geom):
    """Five joints per PCC section, masses lumped as documented below.

    The section mass sits on the prismatic link with its centre at the
    rest-chord midpoint (``l0/2`` behind the chord end) and the inertia of
    a solid rod of radius ``segment_radius``. Connector masses are point
    masses at the connector midpoint.
    """
    types, axes, offsets, masses, coms, inertias = [], [], [], [], [], []
    l0 = geom.section_rest_length
    prev_offset = np.zeros(3)
    for s in range(geom.n_sections):
        seg = geom.section_segment[s]
        ends_segment = (s + 1) % geom.pcc_per_segment == 0
        m_sec = geom.segment_mass[seg] / geom.pcc_per_segment
        r = geom.segment_radius[seg]
        rod = m_sec * np.diag([l0[s] ** 2 / 12 + r ** 2 / 4,
                               l0[s] ** 2 / 12 + r ** 2 / 4,
                               r ** 2 / 2])
        layout = [
            (REVOLUTE, _Y, prev_offset, 0.0, np.zeros(3), np.zeros((3, 3))),
            (REVOLUTE, _X, np.zeros(3), 0.0, np.zeros(3), np.zeros((3, 3))),
            (PRISMATIC, _Z, np.zeros(3), m_sec, np.array([0.0, 0.0, -0.5 * l0[s]]), rod),
            (REVOLUTE, _Y, np.zeros(3), 0.0, np.zeros(3), np.zeros((3, 3))),
        ]
        if ends_segment:
            lc = geom.connector_offset[seg]
            layout.append((REVOLUTE, _X, np.zeros(3), geom.connector_mass[seg],
                           0.5 * lc, np.zeros((3, 3))))
            prev_offset = lc
        else:
            layout.append((REVOLUTE, _X, np.zeros(3), 0.0, np.zeros(3), np.zeros((3, 3))))
            prev_offset = np.zeros(3)
        for jt, ax, off, m, c, inert in layout:
            types.append(jt)
            axes.append(ax)
            offsets.append(off)
            masses.append(m)
            coms.append(c)
            inertias.append(inert)
    gravity_local = geom.base_frame[:3, :3].T @ geom.gravity
    return AugmentedChain(np.array(types), np.array(axes), np.array(offsets),
                          np.array(masses), np.array(coms), np.array(inertias),
                          prev_offset.copy(), gravity_local)


def _axis_rotation(axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    if axis[0] == 1.0:
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis[1] == 1.0:
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def chain_frames(xi, chain):
    """Body rotations, joint origins and world joint axes in the base frame.

    Returns ``(rot, origin, z, tip)`` with shapes ``(nj, 3, 3)``,
    ``(nj, 3)``, ``(nj, 3)`` and ``(3,)``.
    """
    nj = chain.n_joints
    revolute = chain.joint_type == REVOLUTE
    xi = np.asarray(xi, dtype=float)
    # every local joint rotation at once (Rodrigues); prismatic joints rotate by zero
    angle = np.where(revolute, xi, 0.0)
    k = _skew(chain.axis)
    local = (np.eye(3) + np.sin(angle)[:, None, None] * k
             + (1.0 - np.cos(angle))[:, None, None] * (k @ k))
    slide = np.where(revolute, 0.0, xi)
    # parent[i] is the rotation of the frame joint i is attached to
    parent = np.empty((nj + 1, 3, 3))
    parent[0] = np.eye(3)
    for i in range(nj):
        parent[i + 1] = parent[i] @ local[i]
    z = np.einsum("nij,nj->ni", parent[:-1], chain.axis)
    steps = np.einsum("nij,nj->ni", parent[:-1], chain.offset) + z * slide[:, None]
    origin = np.cumsum(steps, axis=0)
    tip = origin[-1] + parent[-1] @ chain.tip_offset
    return parent[1:], origin, z, tip


def chain_tip(xi, chain, geom):
    """End-effector of the augmented chain, in the world frame."""
    tip = chain_frames(xi, chain)[3]
    return geom.base_frame[:3, :3] @ tip + geom.base_frame[:3, 3]


def _skew(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


_P1 = np.array([1, 2, 0])
_P2 = np.array([2, 0, 1])


def _cross(a, b):
    # np.cross carries heavy per-call overhead for tiny arrays
    return a[..., _P1] * b[..., _P2] - a[..., _P2] * b[..., _P1]


def _cross_motion(v, m):
    w, u = v[..., :3], v[..., 3:]
    a, b = m[..., :3], m[..., 3:]
    return np.concatenate([_cross(w, a), _cross(w, b) + _cross(u, a)], axis=-1)


def _cross_force(v, f):
    w, u = v[..., :3], v[..., 3:]
    n, lin = f[..., :3], f[..., 3:]
    return np.concatenate([_cross(w, n) + _cross(u, lin), _cross(w, lin)], axis=-1)


def _spatial_kinematics(xi, chain):
    """Motion subspaces and world spatial inertias of every body."""
    rot, origin, z, _ = chain_frames(xi, chain)
    revolute = (chain.joint_type == REVOLUTE)[:, None]
    subspace = np.where(revolute,
                        np.concatenate([z, _cross(origin, z)], axis=1),
                        np.concatenate([np.zeros_like(z), z], axis=1))
    m = chain.mass
    c = origin + np.einsum("nij,nj->ni", rot, chain.com)
    i_c = rot @ chain.inertia @ np.swapaxes(rot, 1, 2)
    cx = _skew(c)
    inertia = np.zeros((chain.n_joints, 6, 6))
    inertia[:, :3, :3] = i_c + m[:, None, None] * cx @ np.swapaxes(cx, 1, 2)
    inertia[:, :3, 3:] = m[:, None, None] * cx
    inertia[:, 3:, :3] = m[:, None, None] * np.swapaxes(cx, 1, 2)
    inertia[:, 3:, 3:] = m[:, None, None] * np.eye(3)
    return subspace, inertia


def _rnea(subspace, inertia, xid, xidd, gravity):
    """Inverse dynamics with absolute-coordinate recursions as cumulative sums."""
    vel = np.cumsum(subspace * xid[:, None], axis=0)
    parent_vel = np.vstack([np.zeros(6), vel[:-1]])
    acc_terms = subspace * xidd[:, None] + _cross_motion(parent_vel, subspace) * xid[:, None]
    base_acc = np.concatenate([np.zeros(3), -gravity])
    acc = base_acc + np.cumsum(acc_terms, axis=0)
    momentum = np.einsum("nij,nj->ni", inertia, vel)
    body_force = np.einsum("nij,nj->ni", inertia, acc) + _cross_force(vel, momentum)
    joint_force = np.cumsum(body_force[::-1], axis=0)[::-1]
    return np.einsum("ni,ni->n", subspace, joint_force)


def _crba(subspace, inertia):
    composite = np.cumsum(inertia[::-1], axis=0)[::-1]
    force = np.einsum("nij,nj->ni", composite, subspace)
    # H[j, i] = s_j . (I^c_i s_i) for j <= i
    upper = np.triu(subspace @ force.T)
    return upper + upper.T - np.diag(np.diag(upper))


def joint_space_terms(xi, xid, chain, xidd_bias=None):
    """Joint-space inertia, velocity-product and gravity terms of the chain.

    ``B_xi`` comes from the composite-rigid-body algorithm. ``g_xi`` is
    inverse dynamics at rest, ``c_xi`` inverse dynamics at zero applied
    acceleration minus ``g_xi``. ``xidd_bias`` is an acceleration folded
    into ``c_xi``; the curvature-space pull-back uses it for the
    ``dJm/dt qd`` term.

    Returns
    -------
    (B_xi, c_xi, g_xi)
    """
    xi = np.asarray(xi, dtype=float)
    xid = np.asarray(xid, dtype=float)
    xidd = np.zeros_like(xi) if xidd_bias is None else np.asarray(xidd_bias, dtype=float)
    subspace, inertia = _spatial_kinematics(xi, chain)
    zero = np.zeros_like(xi)
    g_xi = _rnea(subspace, inertia, zero, zero, chain.gravity)
    bias = _rnea(subspace, inertia, xid, xidd, chain.gravity)
    return _crba(subspace, inertia), bias - g_xi, g_xi


def _chord_terms(theta, l0):
    """``h``, ``h'/theta`` and ``(h'' - h'/theta)/theta^2`` for the chord length."""
    theta = np.asarray(theta, dtype=float)
    small = theta < _SERIES_THETA
    t = np.where(small, 1.0, theta)
    s, c = np.sin(0.5 * t), np.cos(0.5 * t)
    gp_over_t = (0.5 * t * c - s) / t ** 3
    curv = (-s / (4.0 * t) - 3.0 * gp_over_t) / t ** 2
    t2 = theta ** 2
    gp_over_t = np.where(small, -1 / 24 + t2 / 960 - t2 ** 2 / 107520, gp_over_t)
    curv = np.where(small, 1 / 480 - t2 / 26880, curv)
    return chord_length(theta, l0), 2 * l0 * gp_over_t, 2 * l0 * curv


def map_to_augmented(q, geom):
    """Joint vector ``m(q)`` of the augmented chain (five entries per section)."""
    q = np.asarray(q, dtype=float)
    tx, ty = q[0::2], q[1::2]
    h = chord_length(np.hypot(tx, ty), geom.section_rest_length)
    xi = np.column_stack([-0.5 * tx, -0.5 * ty, h, -0.5 * tx, -0.5 * ty])
    return xi.reshape(-1)


def mapping_jacobian(q, geom):
    """Analytic Jacobian ``dm/dq``, shape ``(5 n_sections, q_size)``."""
    q = np.asarray(q, dtype=float)
    ns = geom.n_sections
    tx, ty = q[0::2], q[1::2]
    _, dh, _ = _chord_terms(np.hypot(tx, ty), geom.section_rest_length)
    jm = np.zeros((ns, 5, ns, 2))
    idx = np.arange(ns)
    jm[idx, 0, idx, 0] = jm[idx, 3, idx, 0] = -0.5
    jm[idx, 1, idx, 1] = jm[idx, 4, idx, 1] = -0.5
    jm[idx, 2, idx, 0] = dh * tx
    jm[idx, 2, idx, 1] = dh * ty
    return jm.reshape(5 * ns, 2 * ns)


def mapping_velocity_product(q, qd, geom):
    """``(dJm/dt) qd``; only the prismatic rows are non-zero."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qs, qds = q.reshape(-1, 2), qd.reshape(-1, 2)
    _, dh, curv = _chord_terms(np.hypot(qs[:, 0], qs[:, 1]), geom.section_rest_length)
    proj = np.sum(qs * qds, axis=1)
    out = np.zeros((geom.n_sections, 5))
    out[:, 2] = dh * np.sum(qds ** 2, axis=1) + curv * proj ** 2
    return out.reshape(-1)


def _mapping_with_rates(q, qd, geom):
    """``m(q)``, ``Jm`` and ``(dJm/dt) qd`` sharing one evaluation of the chord terms."""
    qs, qds = q.reshape(-1, 2), qd.reshape(-1, 2)
    ns = len(qs)
    h, dh, curv = _chord_terms(np.hypot(qs[:, 0], qs[:, 1]), geom.section_rest_length)
    xi = np.empty((ns, 5))
    xi[:, [0, 3]] = -0.5 * qs[:, :1]
    xi[:, [1, 4]] = -0.5 * qs[:, 1:]
    xi[:, 2] = h
    jm = np.zeros((ns, 5, ns, 2))
    idx = np.arange(ns)
    jm[idx, 0, idx, 0] = jm[idx, 3, idx, 0] = -0.5
    jm[idx, 1, idx, 1] = jm[idx, 4, idx, 1] = -0.5
    jm[idx, 2, idx, 0] = dh * qs[:, 0]
    jm[idx, 2, idx, 1] = dh * qs[:, 1]
    proj = np.sum(qs * qds, axis=1)
    xidd = np.zeros((ns, 5))
    xidd[:, 2] = dh * np.sum(qds ** 2, axis=1) + curv * proj ** 2
    return xi.reshape(-1), jm.reshape(5 * ns, 2 * ns), xidd.reshape(-1)


@lru_cache(maxsize=64)
def _constant_matrices(params, geom):
    mats = (params.stiffness_matrix(geom), params.damping_matrix(geom),
            params.allocation_matrix(geom))
    for m in mats:
        m.setflags(write=False)
    return mats


def _pulled_back(q, qd, geom, split):
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise NonFiniteInput("state contains non-finite entries")
    chain = build_chain(geom)
    xi, jm, xidd = _mapping_with_rates(q, qd, geom)
    xid = jm @ qd
    subspace, inertia = _spatial_kinematics(xi, chain)
    b = jm.T @ _crba(subspace, inertia) @ jm
    b = 0.5 * (b + b.T)
    bias = _rnea(subspace, inertia, xid, xidd, chain.gravity)
    if not split:
        return b, jm.T @ bias
    zero = np.zeros_like(xi)
    g_xi = _rnea(subspace, inertia, zero, zero, chain.gravity)
    return b, jm.T @ (bias - g_xi), jm.T @ g_xi


def _check_conditioning(b, params):
    eig = np.linalg.eigvalsh(b)
    if eig[0] <= 0 or eig[-1] > params.max_inertia_condition * eig[0]:
        raise SingularInertia("curvature-space inertia matrix is ill-conditioned")


def dynamics_terms(q, qd, geom, params):
    """Curvature-space dynamics terms at ``(q, qd)``.

    Raises
    ------
    SingularInertia
        If the condition number of ``B`` exceeds
        ``params.max_inertia_condition``.
    """
    b, c, g = _pulled_back(q, qd, geom, split=True)
    _check_conditioning(b, params)
    return DynamicsTerms(b, c, g, *_constant_matrices(params, geom))


def forward_dynamics(q, qd, p, geom, params):
    """Curvature acceleration for pressure ``p``; fused fast path of
    :func:`dynamics_terms` followed by :func:`plant_accel`."""
    b, bias = _pulled_back(q, qd, geom, split=False)
    stiff, damp, alloc = _constant_matrices(params, geom)
    rhs = alloc @ np.asarray(p, float) - bias - stiff @ np.asarray(q, float) - damp @ np.asarray(qd, float)
    return _spd_solve(b, rhs)


def _spd_solve(b, rhs):
    try:
        chol = np.linalg.cholesky(b)
    except np.linalg.LinAlgError as exc:
        raise SingularInertia("inertia matrix is not positive definite") from exc
    return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))


def plant_accel(q, qd, p, terms):
    """Curvature acceleration ``B^-1 (A p - c - g - K q - D qd)`` (no external wrench)."""
    rhs = (terms.A_alloc @ np.asarray(p, float) - terms.c - terms.g
           - terms.K @ np.asarray(q, float) - terms.D @ np.asarray(qd, float))
    return _spd_solve(terms.B, rhs)


def potential_energy(q, geom, params):
    """Gravity plus spring energy, zero at the straight configuration."""
    chain = build_chain(geom)

    def gravity_energy(qq):
        rot, origin, _, _ = chain_frames(map_to_augmented(qq, geom), chain)
        com = origin + np.einsum("nij,nj->ni", rot, chain.com)
        return -float(np.sum(chain.mass * (com @ chain.gravity)))

    q = np.asarray(q, dtype=float)
    spring = 0.5 * q @ params.stiffness_matrix(geom) @ q
    return spring + gravity_energy(q) - gravity_energy(np.zeros_like(q))


def mechanical_energy(q, qd, geom, params):
    terms = dynamics_terms(q, qd, geom, params)
    qd = np.asarray(qd, dtype=float)
    return 0.5 * qd @ terms.B @ qd + potential_energy(q, geom, params)
