"""Robust tube MPC for end-effector tracking.

Every control period the controller linearizes the arm dynamics at the
measured state, discretizes them, recomputes a Riccati feedback gain,
solves the nonlinear tracking problem over the frozen model and applies the
first optimized input corrected by a clamped state-feedback term.

Pressure limits are hard constraints. Optional joint-space polytopes are
softened with penalized slack variables, and point obstacles enter the
stage cost as smooth exponential repulsion.
"""
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import DynamicsParams, dynamics_terms
from .exceptions import InfeasibleProblem, NotConverged, RefTooShort
from .kinematics import ArmGeometry, ee_position, fk_jacobian
from .linearization import DiscreteDynamics, continuous_ss, discretize
from .opt.riccati import solve_dare
from .opt.sqp import MpcSolution, TrackingProblem, sqp_solve


def as_weight(value, n):
    """Turn a scalar, a diagonal or a full matrix into an ``(n, n)`` weight."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(n)
    if arr.ndim == 1:
        if arr.size != n:
            raise ValueError(f"diagonal weight needs {n} entries, got {arr.size}")
        return np.diag(arr)
    if arr.shape != (n, n):
        raise ValueError(f"weight must be {n}x{n}, got {arr.shape}")
    return 0.5 * (arr + arr.T)


def _check_psd(name, mat, strict=False):
    low = np.linalg.eigvalsh(mat)[0]
    if low < (1e-12 if strict else -1e-9):
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Controller tuning.

    Weights accept a scalar (times identity), a diagonal or a full matrix
    and are stored as full matrices after validation. Input-related vectors
    broadcast over the pseudo-pressure channels.
    """

    n_q: int = 4
    n_u: int = 4
    N: int = 7
    Ts: float = 1.0 / 15.0
    Q: np.ndarray = 2.0e4
    Q_N: np.ndarray = 2.0e4
    S: np.ndarray = 0.5
    R: np.ndarray = 1.0e-5
    R_delta: np.ndarray = 1.0e-3
    p_min: np.ndarray = -60.0
    p_max: np.ndarray = 60.0
    du_max: np.ndarray = 15.0
    q0_halfwidth: np.ndarray = 0.05
    qd0_halfwidth: np.ndarray = 0.5
    tube_clamp: np.ndarray = 1.0
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    L: float = 0.0
    l: float = 0.0
    soft_A: Optional[np.ndarray] = None
    soft_b: Optional[np.ndarray] = None
    soft_E: Optional[np.ndarray] = None
    bound_rounding: str = "ceil"
    terminal_velocity: bool = True
    dare_Q: np.ndarray = 1.0
    dare_R: np.ndarray = 10.0
    dare_cache_tol: float = 0.0
    use_tube: bool = True
    warm_start: bool = True
    exact_drift: bool = True
    exact_chord: bool = False
    disturbance_gain: float = 0.0
    observer_gain: float = 1.0
    disturbance_slope_gain: float = 0.0
    max_outer: int = 3
    tol_sqp: float = 1e-6
    tol_feas: float = 1e-6
    tol_stat: float = 1e-6
    qp_max_iter: int = 4000

    def __post_init__(self):
        n_q, n_u = int(self.n_q), int(self.n_u)
        if self.N < 2:
            raise ValueError("horizon N must be at least 2")
        if self.Ts <= 0:
            raise ValueError("sampling time must be positive")
        if not 0.0 <= self.disturbance_slope_gain <= 1.0:
            raise ValueError("disturbance_slope_gain must lie in [0, 1]")
        if not 0.0 < self.observer_gain <= 1.0:
            raise ValueError("observer_gain must lie in (0, 1]")
        if not 0.0 <= self.disturbance_gain <= 1.0:
            raise ValueError("disturbance_gain must lie in [0, 1]")
        if self.bound_rounding not in ("ceil", "floor"):
            raise ValueError("bound_rounding must be 'ceil' or 'floor'")
        conv = {
            "Q": as_weight(self.Q, 3), "Q_N": as_weight(self.Q_N, 3),
            "S": as_weight(self.S, n_q), "R": as_weight(self.R, n_u),
            "R_delta": as_weight(self.R_delta, n_u),
            "dare_Q": as_weight(self.dare_Q, 2 * n_q), "dare_R": as_weight(self.dare_R, n_u),
            "p_min": np.broadcast_to(np.asarray(self.p_min, float), (n_u,)).copy(),
            "p_max": np.broadcast_to(np.asarray(self.p_max, float), (n_u,)).copy(),
            "du_max": np.broadcast_to(np.asarray(self.du_max, float), (n_u,)).copy(),
            "q0_halfwidth": np.broadcast_to(np.asarray(self.q0_halfwidth, float), (n_q,)).copy(),
            "qd0_halfwidth": np.broadcast_to(np.asarray(self.qd0_halfwidth, float), (n_q,)).copy(),
            "tube_clamp": np.broadcast_to(np.asarray(self.tube_clamp, float), (n_u,)).copy(),
            "obstacles": np.asarray(self.obstacles, float).reshape(-1, 3),
        }
        for key, value in conv.items():
            object.__setattr__(self, key, value)
        for name in ("Q", "Q_N", "S", "R", "R_delta", "dare_Q"):
            _check_psd(name, getattr(self, name))
        _check_psd("dare_R", self.dare_R, strict=True)
        if np.any(self.p_min >= self.p_max):
            raise ValueError("p_min must be below p_max")
        if np.any(self.du_max <= 0):
            raise ValueError("du_max must be positive")
        if np.any(self.tube_clamp < 0) or np.any(self.q0_halfwidth < 0) or np.any(self.qd0_halfwidth < 0):
            raise ValueError("tube clamp and initial-set half-widths must be non-negative")
        if len(self.obstacles) and (self.L < 0 or self.l <= 0):
            raise ValueError("obstacle penalty needs L >= 0 and l > 0")
        if self.soft_A is not None:
            a = np.atleast_2d(np.asarray(self.soft_A, float))
            if a.shape[1] != n_q:
                raise ValueError(f"soft_A must have {n_q} columns")
            b = np.asarray(self.soft_b, float).reshape(a.shape[0])
            e = as_weight(1.0 if self.soft_E is None else self.soft_E, a.shape[0])
            _check_psd("soft_E", e, strict=True)
            object.__setattr__(self, "soft_A", a)
            object.__setattr__(self, "soft_b", b)
            object.__setattr__(self, "soft_E", e)

    @property
    def bounded_steps(self):
        """Leading steps on which input bounds and inter-step slews apply."""
        raw = self.N / 4.0
        return int(math.ceil(raw)) if self.bound_rounding == "ceil" else max(1, int(math.floor(raw)))

    @property
    def soft(self):
        return self.soft_A is not None

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(eq=False)
class ControllerState:
    """Mutable per-controller memory carried between control periods."""

    u_old: np.ndarray
    K_tube: np.ndarray
    warm: Optional[np.ndarray] = None
    previous: Optional[MpcSolution] = None
    qp_warm: Optional[tuple] = None
    dare_A: Optional[np.ndarray] = None
    dare_P: Optional[np.ndarray] = None
    predicted_next: Optional[np.ndarray] = None
    disturbance: Optional[np.ndarray] = None
    disturbance_slope: Optional[np.ndarray] = None
    steps: int = 0


def initial_state(cfg: MpcConfig, u0=None):
    u = np.zeros(cfg.n_u) if u0 is None else np.asarray(u0, float).reshape(cfg.n_u)
    return ControllerState(np.clip(u, cfg.p_min, cfg.p_max), np.zeros((cfg.n_u, 2 * cfg.n_q)))


def build_problem(x0, u_old, ref, dyn: DiscreteDynamics, cfg: MpcConfig, geom: ArmGeometry,
                  shrink=False):
    """Assemble the nonlinear tracking instance for the current period.

    The nominal trajectory starts at the measured state ``x0``. The
    end-effector map uses the constant-length kinematics unless ``shrink``
    selects the exact chord model.

    Raises
    ------
    RefTooShort
        If ``ref`` holds fewer than ``N + 1`` samples.
    """
    ref = np.asarray(ref, dtype=float).reshape(-1, 3)
    if ref.shape[0] < cfg.N + 1:
        raise RefTooShort(f"reference window has {ref.shape[0]} samples, need {cfg.N + 1}")
    prob = TrackingProblem(
        A_d=dyn.A_d, B_d=dyn.B_d, W_d=dyn.W_d, x0=np.asarray(x0, float), n_q=cfg.n_q,
        output=lambda q: ee_position(q, geom, shrink),
        output_jacobian=lambda q: fk_jacobian(q, geom, shrink),
        ref=ref[: cfg.N + 1], Q=cfg.Q, Q_N=cfg.Q_N, S=cfg.S, R=cfg.R, R_delta=cfg.R_delta,
        u_old=np.asarray(u_old, float), u_min=cfg.p_min, u_max=cfg.p_max, du_max=cfg.du_max,
        bounded_steps=cfg.bounded_steps, terminal_velocity=cfg.terminal_velocity,
    )
    if len(cfg.obstacles) and cfg.L > 0:
        prob = add_obstacle_penalty(prob, cfg.obstacles, cfg.L, cfg.l)
    if cfg.soft:
        prob = soften_state_constraints(prob, cfg.soft_A, cfg.soft_b, cfg.soft_E)
    return prob


def add_obstacle_penalty(prob: TrackingProblem, obstacles, L, l):
    """Add ``sum_k sum_i L exp(-l ||E(k) - o_i||^2)`` to the stage cost."""
    if L <= 0 or l <= 0:
        raise ValueError("obstacle penalty needs L > 0 and l > 0")
    obstacles = np.asarray(obstacles, float).reshape(-1, 3)
    if len(prob.obstacles):
        obstacles = np.vstack([prob.obstacles, obstacles])
    return prob.with_changes(obstacles=obstacles, L=float(L), l=float(l))


def obstacle_penalty(points, obstacles, L, l):
    """Penalty value at each point, summed over obstacles."""
    points = np.asarray(points, float)
    d2 = np.sum((points[..., None, :] - np.asarray(obstacles, float)) ** 2, axis=-1)
    return L * np.exp(-l * d2).sum(axis=-1)


def soften_state_constraints(prob: TrackingProblem, A_I, b_I, E):
    """Add slack-relaxed joint-space limits ``A_I q(k) <= b_I + eps(k)``, ``eps >= 0``."""
    A_I = np.atleast_2d(np.asarray(A_I, float))
    E = as_weight(E, A_I.shape[0])
    _check_psd("E", E, strict=True)
    return prob.with_changes(soft_A=A_I, soft_b=np.asarray(b_I, float).reshape(-1), soft_E=E)


def tube_feedback(u0, K, measured, nominal, clamp, p_min, p_max):
    """Clamped tube correction ``u0 + K (measured - nominal)``.

    The correction is limited per channel to ``+-clamp`` around ``u0`` and
    the result is clipped to the absolute bounds.
    """
    u0 = np.asarray(u0, float)
    dev = np.asarray(measured, float) - np.asarray(nominal, float)
    corr = np.atleast_1d(np.asarray(K, float) @ np.atleast_1d(dev)).reshape(u0.shape)
    clamp = np.broadcast_to(np.asarray(clamp, float), u0.shape)
    return np.clip(u0 + np.clip(corr, -clamp, clamp), p_min, p_max)


def shifted(z, N, n_u, n_soft):
    """Shift a decision vector one step ahead, repeating the final entries."""
    u = z[: N * n_u].reshape(N, n_u)
    u = np.vstack([u[1:], u[-1:]])
    out = [u.ravel()]
    if n_soft:
        e = z[N * n_u:].reshape(N, n_soft)
        out.append(np.vstack([e[1:], e[-1:]]).ravel())
    return np.concatenate(out)


def _fallback(ctrl: ControllerState, cfg: MpcConfig, x0, dyn):
    """Previous plan shifted one step with the last input held."""
    if ctrl.previous is not None:
        u = np.vstack([ctrl.previous.u[1:], ctrl.previous.u[-1:]])
    else:
        u = np.tile(ctrl.u_old, (cfg.N, 1))
    u[0] = np.clip(u[0], np.maximum(cfg.p_min, ctrl.u_old - cfg.du_max),
                   np.minimum(cfg.p_max, ctrl.u_old + cfg.du_max))
    x = [np.asarray(x0, float)]
    for k in range(cfg.N):
        x.append(dyn.step(x[-1], u[k]))
    return u, np.array(x)


class TubeMpcController:
    """Stateful tube MPC controller bound to a model and a configuration.

    Parameters
    ----------
    geom, params : ArmGeometry, DynamicsParams
        Model used for prediction (may differ from the simulated plant).
    cfg : MpcConfig
    """

    name = "robust_mpc"

    def __init__(self, geom: ArmGeometry, params: DynamicsParams, cfg: MpcConfig):
        if cfg.n_q != geom.q_size or cfg.n_u != geom.n_inputs:
            cfg = cfg.replace(n_q=geom.q_size, n_u=geom.n_inputs)
        self.geom, self.params, self.cfg = geom, params, cfg
        self.state = initial_state(cfg)

    def reset(self, u0=None):
        self.state = initial_state(self.cfg, u0)

    def step(self, q, qd, ref):
        """One control period; returns ``(p_star, MpcSolution, info)``."""
        return solve_controller_step(q, qd, ref, self.cfg, self.state, self.geom, self.params)


def _tube_gain(ctrl, cfg, dyn, diag):
    if not cfg.use_tube:
        return np.zeros((cfg.n_u, 2 * cfg.n_q))
    if (cfg.dare_cache_tol > 0 and ctrl.dare_A is not None
            and np.abs(dyn.A_d - ctrl.dare_A).max() <= cfg.dare_cache_tol):
        diag["dare"] = "cached"
        return ctrl.K_tube
    try:
        _, K = solve_dare(dyn.A_d, dyn.B_d, cfg.dare_Q, cfg.dare_R)
        ctrl.dare_A = dyn.A_d
        diag["dare"] = "converged"
        return K
    except NotConverged as exc:
        diag["dare"] = f"open-loop tube: {exc}"
        return np.zeros((cfg.n_u, 2 * cfg.n_q))


def _blend_measurement(ctrl, cfg, measured):
    """State used by the controller: the measurement, or with ``observer_gain < 1``
    the one-step model prediction moved that fraction of the way towards it."""
    if cfg.observer_gain >= 1.0 or ctrl.predicted_next is None:
        return measured
    pred = ctrl.predicted_next
    return pred + cfg.observer_gain * (measured - pred)


def _with_disturbance(ctrl, cfg, x0, dyn):
    """Fold a filtered one-step prediction error into the model drift.

    The error between the measured state and the state predicted one period
    earlier (for the input actually applied) drives a level and slope
    tracker with gains ``cfg.disturbance_gain`` and
    ``cfg.disturbance_slope_gain``. The level is added to ``W_d``, which
    removes the offset caused by a mismatched model; the slope removes the
    lag when that offset drifts along the trajectory.
    """
    if ctrl.disturbance is None:
        ctrl.disturbance = np.zeros_like(x0)
        ctrl.disturbance_slope = np.zeros_like(x0)
    if ctrl.predicted_next is not None:
        half = np.concatenate([cfg.q0_halfwidth, cfg.qd0_halfwidth])
        innovation = np.clip(x0 - ctrl.predicted_next, -half, half)
        ctrl.disturbance_slope = ctrl.disturbance_slope + cfg.disturbance_slope_gain * innovation
        ctrl.disturbance = (ctrl.disturbance + ctrl.disturbance_slope
                            + cfg.disturbance_gain * innovation)
    return DiscreteDynamics(dyn.A_d, dyn.B_d, dyn.W_d + ctrl.disturbance, dyn.Ts)


def solve_controller_step(q, qd, ref, cfg: MpcConfig, ctrl: ControllerState,
                          geom: ArmGeometry, params: DynamicsParams):
    """Linearize, optimize and apply the clamped tube correction.

    Parameters
    ----------
    q, qd : ndarray
        Measured configuration and velocity.
    ref : ndarray
        ``(N + 1, 3)`` end-effector reference window.
    ctrl : ControllerState
        Updated in place: ``u_old`` becomes the applied input and the warm
        start becomes the shifted solution.

    Returns
    -------
    p_star : ndarray
        Applied pseudo-pressure.
    sol : MpcSolution
        Nominal plan; ``status`` is ``Fallback`` when the optimizer failed
        and the previous plan was reused.
    info : dict
        ``tube_correction``, ``clamp_active`` and the Riccati outcome.
    """
    t_start = time.perf_counter()
    measured = np.concatenate([np.asarray(q, float), np.asarray(qd, float)])
    diag = {}
    x0 = _blend_measurement(ctrl, cfg, measured)
    n_q = x0.size // 2
    terms = dynamics_terms(x0[:n_q], x0[n_q:], geom, params)
    dyn = discretize(continuous_ss(terms), cfg.Ts, cfg.exact_drift)
    ctrl.K_tube = _tube_gain(ctrl, cfg, dyn, diag)
    if cfg.disturbance_gain > 0:
        dyn = _with_disturbance(ctrl, cfg, measured, dyn)
        diag["disturbance"] = ctrl.disturbance.copy()
    prob = build_problem(x0, ctrl.u_old, ref, dyn, cfg, geom, shrink=cfg.exact_chord)

    warm = None
    if cfg.warm_start and ctrl.warm is not None and ctrl.warm.size == prob.n_dec:
        warm = ctrl.warm
    qp_warm = ctrl.qp_warm if warm is not None else None
    try:
        sol = sqp_solve(prob, warm, cfg.max_outer, cfg.tol_sqp, cfg.tol_feas, cfg.tol_stat,
                        cfg.qp_max_iter, qp_warm=qp_warm)
        z = sol.diagnostics["decision"]
        ctrl.qp_warm = sol.qp_warm
    except InfeasibleProblem as exc:
        u, x = _fallback(ctrl, cfg, x0, dyn)
        sol = MpcSolution(u, x, None, np.nan, "Fallback",
                          diagnostics={"fallback": str(exc), "family": exc.family})
        z = np.concatenate([u.ravel(), np.zeros(cfg.N * prob.n_soft)])
        ctrl.qp_warm = None

    # nominal state for "now" is what the previous plan predicted one step ahead
    if ctrl.previous is not None:
        nominal = ctrl.previous.x[1]
        half = np.concatenate([cfg.q0_halfwidth, cfg.qd0_halfwidth])
        nominal = x0 - np.clip(x0 - nominal, -half, half)
    else:
        nominal = x0
    u0 = sol.u[0]
    raw_corr = ctrl.K_tube @ (x0 - nominal)
    p_star = tube_feedback(u0, ctrl.K_tube, x0, nominal, cfg.tube_clamp, cfg.p_min, cfg.p_max)
    clamp_active = bool(np.any(np.abs(raw_corr) > cfg.tube_clamp + 1e-12))

    ctrl.u_old = p_star
    ctrl.predicted_next = dyn.step(x0, p_star)
    ctrl.previous = sol
    ctrl.warm = shifted(z, cfg.N, cfg.n_u, prob.n_soft)
    ctrl.steps += 1
    sol.solve_time = time.perf_counter() - t_start
    diag.update(tube_correction=raw_corr, clamp_active=clamp_active, nominal=nominal)
    sol.diagnostics.update(diag)
    return p_star, sol, diag
