"""Gauss-Newton SQP for the nonlinear end-effector tracking problem.

The affine prediction model is eliminated by substitution, so the decision
vector holds the input sequence ``U`` (and slack variables when state
constraints are softened). Predicted states are an exact affine function of
``U``, which keeps the model recursion satisfied to round-off for every
iterate. The only nonlinearity is the output map (end-effector position),
which is linearized about the current trajectory once per outer iteration.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..exceptions import InfeasibleProblem
from .qp import QpProblem, QpStatus, solve_qp


@dataclass(frozen=True, eq=False)
class TrackingProblem:
    """Nonlinear MPC instance over a frozen affine model.

    Attributes
    ----------
    A_d, B_d, W_d : ndarray
        Discrete model ``x(k+1) = A_d x(k) + B_d u(k) + W_d``.
    x0 : ndarray
        Measured initial state ``[q, qd]``.
    n_q : int
        Number of configuration coordinates (first half of the state).
    output, output_jacobian : callable
        Batched maps ``q (..., n_q) -> (..., n_y)`` and ``-> (..., n_y, n_q)``.
    ref : ndarray
        ``(N + 1, n_y)`` reference window.
    Q, Q_N, S, R, R_delta : ndarray
        Stage/terminal tracking, velocity, input and input-variation weights.
    u_old : ndarray
        Previously applied input for the variation penalty and slew limit.
    u_min, u_max, du_max : ndarray
        Absolute bounds and per-step slew limit.
    bounded_steps : int
        Number of leading steps on which bounds and slews are enforced.
    terminal_velocity : bool
        Impose ``qd(N) = 0``.
    obstacles : ndarray
        ``(n_obs, n_y)`` penalty centres with weight ``L`` and sharpness ``l``.
    soft_A, soft_b, soft_E : ndarray or None
        Softened state polytope ``soft_A q(k) <= soft_b + eps(k)``.
    """

    A_d: np.ndarray
    B_d: np.ndarray
    W_d: np.ndarray
    x0: np.ndarray
    n_q: int
    output: Callable
    output_jacobian: Callable
    ref: np.ndarray
    Q: np.ndarray
    Q_N: np.ndarray
    S: np.ndarray
    R: np.ndarray
    R_delta: np.ndarray
    u_old: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    du_max: np.ndarray
    bounded_steps: int
    terminal_velocity: bool = True
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    L: float = 0.0
    l: float = 0.0
    soft_A: Optional[np.ndarray] = None
    soft_b: Optional[np.ndarray] = None
    soft_E: Optional[np.ndarray] = None

    @property
    def N(self):
        return self.ref.shape[0] - 1

    @property
    def n_x(self):
        return self.A_d.shape[0]

    @property
    def n_u(self):
        return self.B_d.shape[1]

    @property
    def n_soft(self):
        return 0 if self.soft_A is None else self.soft_A.shape[0]

    @property
    def n_dec(self):
        return self.N * (self.n_u + self.n_soft)

    def with_changes(self, **changes):
        return replace(self, **changes)


@dataclass(eq=False)
class MpcSolution:
    """Optimized nominal trajectory and solver diagnostics."""

    u: np.ndarray
    x: np.ndarray
    slack: Optional[np.ndarray]
    objective: float
    status: str
    qp_iterations: int = 0
    outer_iterations: int = 0
    solve_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    qp_warm: Optional[tuple] = None

    @property
    def q(self):
        return self.x[:, : self.x.shape[1] // 2]

    @property
    def qd(self):
        return self.x[:, self.x.shape[1] // 2:]


def prediction_matrices(A_d, B_d, W_d, x0, N):
    """Affine map ``X = Su @ U + sx`` from stacked inputs to states 0..N.

    Returns
    -------
    Su : ndarray, shape (N + 1, n_x, N * n_u)
    sx : ndarray, shape (N + 1, n_x)
    """
    n_x, n_u = B_d.shape
    su = np.zeros((N + 1, n_x, N * n_u))
    sx = np.zeros((N + 1, n_x))
    sx[0] = x0
    for k in range(N):
        su[k + 1] = A_d @ su[k]
        su[k + 1][:, k * n_u:(k + 1) * n_u] += B_d
        sx[k + 1] = A_d @ sx[k] + W_d
    return su, sx


class _Condensed:
    """Constant (iterate-independent) pieces of the condensed problem."""

    def __init__(self, prob: TrackingProblem):
        self.prob = prob
        N, n_u, n_q, m = prob.N, prob.n_u, prob.n_q, prob.n_soft
        self.n_U = N * n_u
        self.su, self.sx = prediction_matrices(prob.A_d, prob.B_d, prob.W_d, prob.x0, N)
        self.suq = self.su[:, :n_q]
        self.sxq = self.sx[:, :n_q]
        n = prob.n_dec
        h = np.zeros((n, n))
        f = np.zeros(n)
        # velocity weight on qd(0..N-1); qd(0) is constant
        suv, sxv = self.su[:N, n_q:], self.sx[:N, n_q:]
        h[: self.n_U, : self.n_U] += 2 * np.einsum("kia,ij,kjb->ab", suv, prob.S, suv)
        f[: self.n_U] += 2 * np.einsum("kia,ij,kj->a", suv, prob.S, sxv)
        # input magnitude and variation
        h[: self.n_U, : self.n_U] += 2 * np.kron(np.eye(N), prob.R)
        diff = np.eye(self.n_U) - np.eye(self.n_U, k=-n_u)
        d0 = np.zeros(self.n_U)
        d0[:n_u] = prob.u_old
        rd = np.kron(np.eye(N), prob.R_delta)
        h[: self.n_U, : self.n_U] += 2 * diff.T @ rd @ diff
        f[: self.n_U] -= 2 * diff.T @ rd @ d0
        if m:
            h[self.n_U:, self.n_U:] += 2 * np.kron(np.eye(N), prob.soft_E)
        self.h_const, self.f_const = h, f
        self.const_offset = float(d0 @ rd @ d0 + np.einsum("ki,ij,kj->", sxv, prob.S, sxv))
        self._constraints()

    def _constraints(self):
        prob = self.prob
        N, n_u, n_q, m = prob.N, prob.n_u, prob.n_q, prob.n_soft
        n = prob.n_dec
        rows, lo, up = [], [], []

        def u_row(k):
            r = np.zeros((n_u, n))
            r[:, k * n_u:(k + 1) * n_u] = np.eye(n_u)
            return r

        rows.append(u_row(0))
        lo.append(prob.u_old - prob.du_max)
        up.append(prob.u_old + prob.du_max)
        self.input_rows = n_u
        for k in range(min(prob.bounded_steps, N)):
            rows.append(u_row(k))
            lo.append(prob.u_min)
            up.append(prob.u_max)
            if k + 1 < N:
                rows.append(u_row(k + 1) - u_row(k))
                lo.append(-prob.du_max)
                up.append(prob.du_max)
        self.input_rows = sum(r.shape[0] for r in rows)
        if m:
            for k in range(N):
                r = np.zeros((m, n))
                r[:, : self.n_U] = prob.soft_A @ self.suq[k]
                r[:, self.n_U + k * m: self.n_U + (k + 1) * m] = -np.eye(m)
                rows.append(r)
                lo.append(np.full(m, -np.inf))
                up.append(prob.soft_b - prob.soft_A @ self.sxq[k])
            eps_rows = np.zeros((N * m, n))
            eps_rows[:, self.n_U:] = np.eye(N * m)
            rows.append(eps_rows)
            lo.append(np.zeros(N * m))
            up.append(np.full(N * m, np.inf))
        self.A_in = np.vstack(rows) if rows else np.zeros((0, n))
        self.lower = np.concatenate(lo) if lo else np.zeros(0)
        self.upper = np.concatenate(up) if up else np.zeros(0)
        if prob.terminal_velocity:
            a_eq = np.zeros((n_q, n))
            a_eq[:, : self.n_U] = self.su[N, n_q:]
            self.A_eq, self.b_eq = a_eq, -self.sx[N, n_q:]
        else:
            self.A_eq, self.b_eq = np.zeros((0, n)), np.zeros(0)

    def states(self, z):
        return self.su @ z[: self.n_U] + self.sx

    def cost(self, z):
        """True nonlinear cost of the decision vector ``z``."""
        prob = self.prob
        x = self.states(z)
        y = prob.output(x[:, : prob.n_q])
        e = y - prob.ref
        track = np.einsum("ki,ij,kj->", e[:-1], prob.Q, e[:-1]) + e[-1] @ prob.Q_N @ e[-1]
        quad = 0.5 * z @ self.h_const @ z + self.f_const @ z + self.const_offset
        return float(track + quad + self._obstacle_cost(y[:-1]))

    def _obstacle_cost(self, y):
        prob = self.prob
        if prob.L == 0 or len(prob.obstacles) == 0:
            return 0.0
        d2 = np.sum((y[:, None, :] - prob.obstacles[None]) ** 2, axis=-1)
        return float(prob.L * np.exp(-prob.l * d2).sum())

    def local_qp(self, z):
        """Gauss-Newton QP about the iterate ``z`` (in absolute variables)."""
        prob = self.prob
        N, n_q = prob.N, prob.n_q
        x = self.states(z)
        q = x[:, :n_q]
        y = prob.output(q)
        jac = prob.output_jacobian(q)
        g = jac @ self.suq                              # (N+1, n_y, n_U)
        r = y - prob.ref - g @ z[: self.n_U]            # e(U) ~ g U + r
        weights = np.concatenate([np.broadcast_to(prob.Q, (N,) + prob.Q.shape), prob.Q_N[None]])
        h = self.h_const.copy()
        f = self.f_const.copy()
        h[: self.n_U, : self.n_U] += 2 * np.einsum("kia,kij,kjb->ab", g, weights, g)
        f[: self.n_U] += 2 * np.einsum("kia,kij,kj->a", g, weights, r)
        if prob.L != 0 and len(prob.obstacles):
            diff = y[:-1, None, :] - prob.obstacles[None]          # (N, n_obs, n_y)
            w = prob.L * np.exp(-prob.l * np.sum(diff ** 2, axis=-1))
            grad_y = (-2 * prob.l * w[..., None] * diff).sum(axis=1)  # (N, n_y)
            f[: self.n_U] += np.einsum("ki,kia->a", grad_y, g[:-1])
        h = 0.5 * (h + h.T)
        return QpProblem(h, f, self.A_eq, self.b_eq, self.A_in, self.lower, self.upper)

    def feasible(self, z, tol):
        ax = self.A_in @ z
        ok = np.all(ax >= self.lower - tol) and np.all(ax <= self.upper + tol)
        return bool(ok and np.all(np.abs(self.A_eq @ z - self.b_eq) <= tol))

    def diagnose(self, tol_feas, tol_stat, max_iter):
        """Name the first constraint family that is infeasible on its own."""
        n = self.prob.n_dec
        zero = QpProblem(np.eye(n), np.zeros(n), A_in=self.A_in[: self.input_rows],
                         lower=self.lower[: self.input_rows], upper=self.upper[: self.input_rows])
        if solve_qp(zero, tol_feas, tol_stat, max_iter).status is QpStatus.INFEASIBLE:
            return "input_bounds"
        with_terminal = QpProblem(np.eye(n), np.zeros(n), self.A_eq, self.b_eq,
                                  self.A_in[: self.input_rows], self.lower[: self.input_rows],
                                  self.upper[: self.input_rows])
        if solve_qp(with_terminal, tol_feas, tol_stat, max_iter).status is QpStatus.INFEASIBLE:
            return "terminal"
        return "state_constraints"


def sqp_solve(prob: TrackingProblem, warm_start=None, max_outer=5, tol_sqp=1e-6,
              tol_feas=1e-6, tol_stat=1e-6, qp_max_iter=4000, max_halvings=8, qp_warm=None):
    """Minimize the nonlinear tracking cost by iterated linearization.

    Parameters
    ----------
    prob : TrackingProblem
    warm_start : ndarray, optional
        Initial decision vector ``[U, eps]`` (or just ``U``); zeros when absent.
    max_outer : int
        Cap on outer (linearize-and-solve) iterations.
    tol_sqp : float
        Stop once an accepted step lowers the true cost by less than
        ``tol_sqp * (1 + |cost|)``.
    qp_warm : tuple, optional
        ``(x, y)`` pair from a previous QP with the same layout.

    Returns
    -------
    MpcSolution
        Best iterate found. ``outer_iterations`` counts accepted steps.

    Raises
    ------
    InfeasibleProblem
        With ``family`` naming the constraint group that cannot be met.
    """
    cond = _Condensed(prob)
    n = prob.n_dec
    z = np.zeros(n)
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float).ravel()
        z[: ws.size] = ws[:n]
    cost = cond.cost(z)
    start_feasible = cond.feasible(z, tol_feas)
    best_status = None
    qp_iters = 0
    accepted = 0
    history = [cost]
    for outer in range(max_outer):
        qp = cond.local_qp(z)
        sol = solve_qp(qp, tol_feas, tol_stat, qp_max_iter, warm_start=qp_warm)
        qp_iters += sol.iterations
        if sol.status is QpStatus.INFEASIBLE:
            family = cond.diagnose(tol_feas, tol_stat, qp_max_iter)
            raise InfeasibleProblem(f"QP infeasible ({family})", family=family)
        qp_warm = (sol.x, sol.y)
        best_status = sol.status if best_status is None else best_status
        if sol.status is not QpStatus.OPTIMAL:
            best_status = sol.status
        step = sol.x - z
        if outer == 0 and not start_feasible:
            # the starting point is not a valid comparison; take the QP answer
            z, new_cost = sol.x, cond.cost(sol.x)
            accepted += 1
            decrease = np.inf
        else:
            alpha, new_cost = 1.0, cond.cost(z + step)
            for _ in range(max_halvings):
                if new_cost <= cost:
                    break
                alpha *= 0.5
                new_cost = cond.cost(z + alpha * step)
            if new_cost > cost:
                break
            decrease = cost - new_cost
            if np.abs(alpha * step).max(initial=0.0) > 1e-9 * (1.0 + np.abs(z).max(initial=0.0)):
                accepted += 1
            z = z + alpha * step
        cost = new_cost
        history.append(cost)
        if decrease < tol_sqp * (1.0 + abs(cost)):
            break

    n_u_tot = cond.n_U
    u = z[:n_u_tot].reshape(prob.N, prob.n_u)
    slack = z[n_u_tot:].reshape(prob.N, prob.n_soft) if prob.n_soft else None
    status = "Optimal" if best_status is QpStatus.OPTIMAL else "MaxIter"
    return MpcSolution(
        u=u, x=cond.states(z), slack=slack, objective=cost, status=status,
        qp_iterations=qp_iters, outer_iterations=accepted,
        diagnostics={"cost_history": history, "decision": z},
        qp_warm=qp_warm,
    )
