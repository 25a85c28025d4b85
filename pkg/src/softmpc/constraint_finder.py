"""Offline randomized search for an obstacle-free joint-space box.

A candidate box passes when none of a batch of curvature samples drawn
uniformly inside it puts an arm probe point inside an obstacle, and a
sufficient fraction of target points is reached (some sample places the
end-effector within a neighbourhood of the target). The search keeps the
widest passing box, measured by the 2-norm of its width vector.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NoFeasibleBox
from .kinematics import ArmGeometry, arm_points

STANDARD_LIMIT = np.pi / 2


@dataclass(frozen=True, eq=False)
class FinderConfig:
    """Search settings.

    Attributes
    ----------
    n_trials : int
        Random candidate boxes drawn when the standard box fails.
    n_samples : int
        Curvature samples per inclusion check.
    targets : ndarray
        ``(n_targets, 3)`` points the end-effector must still reach.
    neighborhood : float
        Reach radius around each target, meters.
    threshold : float
        Fraction of targets that must be reached, in ``(0, 1]``.
    obstacle_centers, obstacle_radii : ndarray
        Spherical obstacles.
    seed : int
    """

    n_trials: int = 200
    n_samples: int = 2000
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    neighborhood: float = 0.02
    threshold: float = 0.9
    obstacle_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    obstacle_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", np.asarray(self.targets, float).reshape(-1, 3))
        object.__setattr__(self, "obstacle_centers", np.asarray(self.obstacle_centers, float).reshape(-1, 3))
        radii = np.broadcast_to(np.asarray(self.obstacle_radii, float),
                                (len(self.obstacle_centers),)).copy()
        object.__setattr__(self, "obstacle_radii", radii)
        if self.n_trials < 1 or self.n_samples < 1:
            raise ValueError("n_trials and n_samples must be >= 1")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        if np.any(radii <= 0) or self.neighborhood <= 0:
            raise ValueError("obstacle radii and neighborhood must be positive")


@dataclass(frozen=True, eq=False)
class ConstraintBox:
    q_l: np.ndarray
    q_u: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        q_l = np.asarray(self.q_l, float)
        q_u = np.asarray(self.q_u, float)
        if q_l.shape != q_u.shape or np.any(q_l > q_u):
            raise ValueError("box needs q_l <= q_u componentwise")
        if np.any(q_l < -STANDARD_LIMIT - 1e-12) or np.any(q_u > STANDARD_LIMIT + 1e-12):
            raise ValueError("box must lie inside the standard limits")
        object.__setattr__(self, "q_l", q_l)
        object.__setattr__(self, "q_u", q_u)

    @property
    def width_norm(self):
        return float(np.linalg.norm(self.q_u - self.q_l))

    def contains(self, q):
        q = np.asarray(q, float)
        return np.all((q >= self.q_l) & (q <= self.q_u), axis=-1)

    @classmethod
    def standard(cls, q_size):
        return cls(np.full(q_size, -STANDARD_LIMIT), np.full(q_size, STANDARD_LIMIT))


def probe_points(q, geom: ArmGeometry):
    """Arm points tested against obstacles: segment ends and chord midpoints (base excluded)."""
    markers, mids = arm_points(q, geom, shrink=True)
    return np.concatenate([markers[..., 1:, :], mids], axis=-2)


def _sample_report(q_l, q_u, cfg: FinderConfig, geom: ArmGeometry, rng):
    q = rng.uniform(q_l, q_u, size=(cfg.n_samples, len(q_l)))
    probes = probe_points(q, geom)
    hits = 0
    if len(cfg.obstacle_centers):
        d = np.linalg.norm(probes[:, :, None, :] - cfg.obstacle_centers[None, None], axis=-1)
        hits = int(np.any(d < cfg.obstacle_radii, axis=(1, 2)).sum())
    if len(cfg.targets):
        ee = probes[:, geom.n_segments - 1, :]
        dist = np.linalg.norm(ee[:, None, :] - cfg.targets[None], axis=-1)
        reached = float(np.mean(np.any(dist <= cfg.neighborhood, axis=0)))
    else:
        reached = 1.0
    return hits, reached


def check_inclusion(q_l, q_u, cfg: FinderConfig, geom: ArmGeometry, rng=None):
    """True when no sample hits an obstacle and enough targets are reached.

    ``rng`` defaults to a generator seeded from ``cfg.seed``, so repeated
    calls with the same arguments agree.
    """
    q_l = np.asarray(q_l, float)
    q_u = np.asarray(q_u, float)
    if np.any(q_l > q_u):
        raise ValueError("check_inclusion needs q_l <= q_u")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    hits, reached = _sample_report(q_l, q_u, cfg, geom, rng)
    return hits == 0 and reached >= cfg.threshold - 1e-12


def find_constraint_set(cfg: FinderConfig, geom: ArmGeometry, log=None, raise_on_empty=True):
    """Widest passing box found by random search inside the standard limits.

    Parameters
    ----------
    log : list, optional
        Receives ``(trial, width_norm)`` for every accepted candidate.
    raise_on_empty : bool
        Raise :class:`NoFeasibleBox` when no candidate is accepted;
        otherwise return the zero box flagged as degenerate.
    """
    n = geom.q_size
    std = ConstraintBox.standard(n)
    # each check draws from its own stream so acceptance does not depend on history
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trials + 2)
    if check_inclusion(std.q_l, std.q_u, cfg, geom, np.random.default_rng(seeds[0])):
        return std
    draw = np.random.default_rng(seeds[1])
    best_l, best_u = np.zeros(n), np.zeros(n)
    best_norm = 0.0
    accepted = False
    for trial in range(cfg.n_trials):
        q_l_t = draw.uniform(std.q_l, std.q_u)
        q_u_t = draw.uniform(q_l_t, std.q_u)
        width = float(np.linalg.norm(q_u_t - q_l_t))
        if width <= best_norm:
            continue
        if check_inclusion(q_l_t, q_u_t, cfg, geom, np.random.default_rng(seeds[trial + 2])):
            best_l, best_u, best_norm = q_l_t, q_u_t, width
            accepted = True
            if log is not None:
                log.append((trial, width))
    if not accepted:
        if raise_on_empty:
            raise NoFeasibleBox("no candidate box passed the inclusion check")
        return ConstraintBox(best_l, best_u, degenerate=True)
    return ConstraintBox(best_l, best_u)


def box_to_polytope(box: ConstraintBox):
    """``A_I q <= b_I`` with ``A_I = [I; -I]`` and ``b_I = [q_u; -q_l]``."""
    n = box.q_l.size
    return np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([box.q_u, -box.q_l])
