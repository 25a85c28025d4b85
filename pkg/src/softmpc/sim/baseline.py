"""Quasi-static baseline: inverse-kinematics increments plus static force balance."""
import time
from dataclasses import dataclass

import numpy as np

from ..dynamics import DynamicsParams, dynamics_terms
from ..kinematics import ArmGeometry, ee_position, fk_jacobian


def damped_pinv(jac, damping):
    """``J^T (J J^T + damping^2 I)^-1``."""
    jj = jac @ jac.T
    return jac.T @ np.linalg.solve(jj + damping ** 2 * np.eye(jj.shape[0]), np.eye(jj.shape[0]))


def static_pressure(q, geom: ArmGeometry, params: DynamicsParams):
    """Least-squares pressure holding ``q`` at rest: ``A p = K q + g(q)``."""
    terms = dynamics_terms(q, np.zeros_like(q), geom, params)
    rhs = terms.K @ q + terms.g
    return np.linalg.lstsq(terms.A_alloc, rhs, rcond=None)[0]


def quasi_static_step(q, target, gain, geom: ArmGeometry, params: DynamicsParams,
                      p_min, p_max, damping=0.05, shrink=False):
    """One iteration of the quasi-static controller.

    Parameters
    ----------
    q : ndarray
        Measured curvature.
    target : ndarray
        Desired end-effector position.
    gain : float
        Fraction of the damped least-squares correction applied per step.
    damping : float
        Damping of the pseudo-inverse.

    Returns
    -------
    p : ndarray
        Pseudo-pressure clipped to ``[p_min, p_max]``.
    q_cmd : ndarray
        Curvature the pressure is meant to hold.
    """
    if gain <= 0:
        raise ValueError("gain must be positive")
    q = np.asarray(q, float)
    err = np.asarray(target, float) - ee_position(q, geom, shrink)
    dq = gain * damped_pinv(fk_jacobian(q, geom, shrink), damping) @ err
    q_cmd = q + dq
    p = static_pressure(q_cmd, geom, params)
    return np.clip(p, p_min, p_max), q_cmd


@dataclass
class QuasiStaticController:
    """Stateless-per-step baseline with the same call signature as the MPC."""

    geom: ArmGeometry
    params: DynamicsParams
    gain: float = 0.5
    damping: float = 0.05
    p_min: float = -60.0
    p_max: float = 60.0
    shrink: bool = False
    name: str = "quasi_static"

    def reset(self, u0=None):
        pass

    def step(self, q, qd, ref):
        start = time.perf_counter()
        ref = np.asarray(ref, float).reshape(-1, 3)
        # no prediction: only the current target is used
        target = ref[1] if len(ref) > 1 else ref[0]
        p, q_cmd = quasi_static_step(q, target, self.gain, self.geom, self.params,
                                     self.p_min, self.p_max, self.damping, self.shrink)
        return p, None, {"q_cmd": q_cmd, "solve_time": time.perf_counter() - start}
