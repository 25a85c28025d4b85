"""Ground-truth plant: RK4 integration of the full nonlinear arm dynamics."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..dynamics import DynamicsParams, forward_dynamics
from ..exceptions import NonFiniteInput
from ..kinematics import ArmGeometry


@dataclass(frozen=True)
class PlantOptions:
    """Integrator and disturbance settings.

    Attributes
    ----------
    substeps : int
        RK4 steps per call of :func:`plant_step`.
    lag_tau : float
        Time constant of the first-order chamber pressure lag; ``0`` applies
        commands instantly.
    noise_sigma : float
        Standard deviation of the additive Gaussian noise on observed
        ``q`` and ``qd``.
    """

    substeps: int = 20
    lag_tau: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.lag_tau < 0 or self.noise_sigma < 0:
            raise ValueError("lag_tau and noise_sigma must be non-negative")


@dataclass(frozen=True, eq=False)
class PlantState:
    q: np.ndarray
    qd: np.ndarray
    pressure: np.ndarray

    @classmethod
    def rest(cls, geom: ArmGeometry, q=None):
        q0 = np.zeros(geom.q_size) if q is None else np.asarray(q, float)
        return cls(q0, np.zeros(geom.q_size), np.zeros(3 * geom.n_segments))


def chamber_moment_matrix(geom: ArmGeometry):
    """Linear map from chamber pressures to pseudo-pressures."""
    n = geom.n_segments
    out = np.zeros((2 * n, 3 * n))
    for seg in range(n):
        out[2 * seg, 3 * seg:3 * seg + 3] = np.cos(geom.chamber_angles[seg])
        out[2 * seg + 1, 3 * seg:3 * seg + 3] = np.sin(geom.chamber_angles[seg])
    return out


def perturbed_model(geom: ArmGeometry, params: DynamicsParams, fraction, rng):
    """Scale masses and stiffness by ``1 +- fraction`` with random signs."""
    if fraction == 0:
        return geom, params
    signs = rng.choice([-1.0, 1.0], size=3)
    geom = geom.replace(segment_mass=geom.segment_mass * (1 + signs[0] * fraction),
                        connector_mass=geom.connector_mass * (1 + signs[1] * fraction))
    params = params.scaled(stiffness=1 + signs[2] * fraction)
    return geom, params


def plant_step(state: PlantState, chambers, dt, geom: ArmGeometry, params: DynamicsParams,
               options: PlantOptions = PlantOptions(), rng: Optional[np.random.Generator] = None):
    """Advance the plant by ``dt`` seconds under constant commanded chamber pressures.

    Returns
    -------
    next_state : PlantState
        Noise-free state.
    observation : tuple of ndarray
        Measured ``(q, qd)``, with noise when ``options.noise_sigma > 0``.

    Raises
    ------
    NonFiniteInput
        If the integration blows up.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cmd = np.asarray(chambers, float)
    moment = chamber_moment_matrix(geom)
    n = geom.q_size
    tau = options.lag_tau
    h = dt / options.substeps

    def deriv(y):
        q, qd, p = y[:n], y[n:2 * n], y[2 * n:]
        p_used = p if tau > 0 else cmd
        qdd = forward_dynamics(q, qd, moment @ p_used, geom, params)
        dp = (cmd - p) / tau if tau > 0 else np.zeros_like(p)
        return np.concatenate([qd, qdd, dp])

    y = np.concatenate([state.q, state.qd, state.pressure if tau > 0 else cmd])
    for _ in range(options.substeps):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * h * k1)
        k3 = deriv(y + 0.5 * h * k2)
        k4 = deriv(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteInput("plant integration produced non-finite values")
    nxt = PlantState(y[:n], y[n:2 * n], y[2 * n:])
    q_obs, qd_obs = nxt.q.copy(), nxt.qd.copy()
    if options.noise_sigma > 0:
        if rng is None:
            raise ValueError("measurement noise requires an rng")
        q_obs += rng.normal(0.0, options.noise_sigma, n)
        qd_obs += rng.normal(0.0, options.noise_sigma, n)
    return nxt, (q_obs, qd_obs)
