"""Fixed-rate closed-loop simulation of a scenario and its metrics."""
import math
from dataclasses import asdict, dataclass, replace
from typing import List

import numpy as np

from ..constraint_finder import box_to_polytope, find_constraint_set
from ..exceptions import NonFiniteInput, ScenarioAbort, SingularInertia
from ..kinematics import ee_position, pseudo_to_chamber
from ..mpc import TubeMpcController
from .baseline import QuasiStaticController
from .plant import PlantState, perturbed_model, plant_step
from .scenario import Scenario


@dataclass(eq=False)
class SimLog:
    """Per-step records of one run; every array has one row per step."""

    t: np.ndarray
    ref: np.ndarray
    ee: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    u: np.ndarray
    chamber: np.ndarray
    solve_ms: np.ndarray
    status: List[str]
    slack_norm: np.ndarray
    min_clearance: np.ndarray
    nominal_u: np.ndarray = None
    clamp_active: np.ndarray = None

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls, q_size, n_inputs):
        z = np.zeros
        return cls(z(0), z((0, 3)), z((0, 3)), z((0, q_size)), z((0, q_size)), z((0, n_inputs)),
                   z((0, 3 * n_inputs // 2)), z(0), [], z(0), z(0), z((0, n_inputs)), z(0, bool))

    @classmethod
    def from_records(cls, records, q_size, n_inputs):
        if not records:
            return cls.empty(q_size, n_inputs)
        cols = {k: [r[k] for r in records] for k in records[0]}
        arrays = {k: (v if k == "status" else np.array(v)) for k, v in cols.items()}
        return cls(**arrays)


@dataclass
class Metrics:
    n_steps: int = 0
    rmse: float = math.nan
    max_error: float = math.nan
    full_max_error: float = math.nan
    min_clearance: float = math.nan
    mean_solve_ms: float = math.nan
    max_solve_ms: float = math.nan
    deadline_misses: int = 0
    constraint_violations: int = 0
    clamp_active_steps: int = 0
    max_slack_norm: float = 0.0
    fallback_steps: int = 0
    final_error: float = math.nan

    def as_dict(self):
        return asdict(self)


def clearance(points, centers, radii):
    """Smallest ``||p - c|| - r`` over obstacles, per point (``nan`` without obstacles)."""
    points = np.asarray(points, float)
    if len(centers) == 0:
        return np.full(points.shape[:-1], np.nan)
    d = np.linalg.norm(points[..., None, :] - centers, axis=-1) - radii
    return d.min(axis=-1)


def make_controller(sc: Scenario):
    """Controller instance for the scenario (soft MPC runs the box search first)."""
    if sc.controller == "quasi_static":
        return QuasiStaticController(sc.geometry, sc.params, sc.quasi_gain, sc.quasi_damping,
                                     sc.mpc.p_min, sc.mpc.p_max, sc.quasi_exact_chord)
    cfg = sc.mpc
    if sc.controller == "soft_mpc":
        box = sc.box if sc.box is not None else find_constraint_set(sc.finder, sc.geometry)
        a_i, b_i = box_to_polytope(box)
        cfg = cfg.replace(soft_A=a_i, soft_b=b_i, soft_E=sc.soft_E)
    ctrl = TubeMpcController(sc.geometry, sc.params, cfg)
    ctrl.name = sc.controller
    return ctrl


def compute_metrics(log: SimLog, sc: Scenario, cfg=None):
    m = Metrics(n_steps=len(log))
    if len(log) == 0:
        return m
    err = np.linalg.norm(log.ee - log.ref, axis=1)
    steady = log.t >= sc.transient - 1e-9
    if np.any(steady):
        m.rmse = float(np.sqrt(np.mean(err[steady] ** 2)))
        m.max_error = float(err[steady].max())
    m.full_max_error = float(err.max())
    m.final_error = float(err[-1])
    if len(sc.obstacle_centers):
        m.min_clearance = float(np.nanmin(log.min_clearance))
    timed = log.solve_ms[np.isfinite(log.solve_ms)]
    if timed.size:
        m.mean_solve_ms = float(timed.mean())
        m.max_solve_ms = float(timed.max())
        m.deadline_misses = int(np.sum(timed > 1e3 * sc.Ts))
    lo, hi = sc.mpc.p_min, sc.mpc.p_max
    bad = (np.any(log.u < lo - 1e-9, axis=1) | np.any(log.u > hi + 1e-9, axis=1)
           | np.any(log.chamber < 0, axis=1))
    m.constraint_violations = int(bad.sum())
    m.clamp_active_steps = int(np.sum(log.clamp_active))
    m.max_slack_norm = float(np.nanmax(log.slack_norm, initial=0.0))
    m.fallback_steps = int(sum(s == "Fallback" for s in log.status))
    return m


def run_scenario(sc: Scenario, timing=True, controller=None):
    """Simulate ``sc`` and return ``(SimLog, Metrics)``.

    Parameters
    ----------
    timing : bool
        Record wall-clock solve times; with ``False`` the column holds
        ``nan`` so that repeated runs are byte-identical.
    controller : object, optional
        Pre-built controller (skips :func:`make_controller`).

    Raises
    ------
    ScenarioAbort
        When the plant or the controller produces non-finite values; the
        exception carries the partial ``log`` and ``metrics``.
    """
    geom, params = sc.geometry, sc.params
    streams = np.random.SeedSequence(sc.seed).spawn(2)
    plant_geom, plant_params = perturbed_model(geom, params, sc.perturbation,
                                               np.random.default_rng(streams[0]))
    noise_rng = np.random.default_rng(streams[1])
    ctrl = controller if controller is not None else make_controller(sc)
    state = PlantState.rest(geom)
    # noise is added to observations here so the plant stays noise-free
    plant_opts = replace(sc.plant, noise_sigma=0.0)

    def observe(s):
        if sc.plant.noise_sigma > 0:
            return (s.q + noise_rng.normal(0.0, sc.plant.noise_sigma, s.q.shape),
                    s.qd + noise_rng.normal(0.0, sc.plant.noise_sigma, s.qd.shape))
        return s.q.copy(), s.qd.copy()

    obs = observe(state)
    records = []
    n_mpc = getattr(ctrl, "cfg", None)
    N = n_mpc.N if n_mpc is not None else 1
    try:
        for k in range(sc.n_steps):
            t = k / sc.rate
            ref_window = sc.trajectory.window(t, N, sc.Ts)
            p, sol, info = ctrl.step(obs[0], obs[1], ref_window)
            if not np.all(np.isfinite(p)):
                raise NonFiniteInput("controller returned a non-finite command")
            chambers = pseudo_to_chamber(p, geom)
            ee = ee_position(state.q, geom)
            slack = 0.0
            if sol is not None and sol.slack is not None:
                slack = float(np.linalg.norm(sol.slack))
            records.append(dict(
                t=t, ref=ref_window[0], ee=ee, q=obs[0], qd=obs[1], u=p, chamber=chambers,
                solve_ms=(1e3 * sol.solve_time if sol is not None else 0.0) if timing else math.nan,
                status=sol.status if sol is not None else "Baseline",
                slack_norm=slack,
                min_clearance=float(clearance(ee, sc.obstacle_centers, sc.obstacle_radii)),
                nominal_u=sol.u[0] if sol is not None else p,
                clamp_active=bool(info.get("clamp_active", False)),
            ))
            if timing and sol is None:
                records[-1]["solve_ms"] = 1e3 * info.get("solve_time", 0.0)
            state, _ = plant_step(state, chambers, sc.Ts, plant_geom, plant_params, plant_opts)
            obs = observe(state)
    except (NonFiniteInput, SingularInertia) as exc:
        log = SimLog.from_records(records, geom.q_size, geom.n_inputs)
        abort = ScenarioAbort(f"scenario aborted at step {len(records)}: {exc}")
        abort.log, abort.metrics = log, compute_metrics(log, sc)
        raise abort from exc
    log = SimLog.from_records(records, geom.q_size, geom.n_inputs)
    return log, compute_metrics(log, sc)
