"""Dense convex QP solver based on ADMM operator splitting.

Solves::

    minimize    1/2 x^T H x + f^T x
    subject to  A_eq x = b_eq
                lower <= A_in x <= upper

with the splitting of Stellato et al. (OSQP): a cached factorization of
``H + sigma I + A^T diag(rho) A``, over-relaxation, residual-balanced
``rho`` updates and a primal-infeasibility certificate. After convergence
an active-set polish solves the equality-constrained KKT system of the
detected active constraints, which tightens residuals by several orders of
magnitude for the small MPC problems this package generates.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

HESSIAN_REG = 1e-9
_INF = 1e20


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass(eq=False)
class QpProblem:
    """Problem data; ``A_eq``/``A_in`` may be ``None``."""

    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.atleast_1d(np.asarray(self.f, dtype=float))
        n = self.f.size
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.H.shape}")
        if not np.allclose(self.H, self.H.T, atol=1e-10 * max(1.0, np.abs(self.H).max())):
            raise ValueError("H must be symmetric")
        if np.linalg.eigvalsh(self.H)[0] < -1e-9 * max(1.0, np.abs(self.H).max()):
            raise ValueError("H must be positive semidefinite")
        if self.A_eq is None:
            self.A_eq, self.b_eq = np.zeros((0, n)), np.zeros(0)
        self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float)).reshape(-1, n)
        self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        if self.A_in is None:
            self.A_in = np.zeros((0, n))
        self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float)).reshape(-1, n)
        m = self.A_in.shape[0]
        self.lower = np.full(m, -np.inf) if self.lower is None else np.asarray(self.lower, float).reshape(m)
        self.upper = np.full(m, np.inf) if self.upper is None else np.asarray(self.upper, float).reshape(m)
        if self.b_eq.shape != (self.A_eq.shape[0],):
            raise ValueError("b_eq does not match A_eq")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self):
        return self.f.size

    def stacked(self):
        """All constraints as ``l <= A x <= u`` (equalities first)."""
        a = np.vstack([self.A_eq, self.A_in])
        lo = np.concatenate([self.b_eq, self.lower])
        up = np.concatenate([self.b_eq, self.upper])
        return a, lo, up

    def objective(self, x):
        return float(0.5 * x @ self.H @ x + self.f @ x)

    def residuals(self, x, y):
        """Primal (constraint violation) and stationarity residuals, inf-norm.

        ``y`` holds the multipliers of the stacked constraints with the sign
        convention ``H x + f + A^T y = 0``.
        """
        a, lo, up = self.stacked()
        ax = a @ x
        prim = np.max(np.maximum(lo - ax, 0.0) + np.maximum(ax - up, 0.0), initial=0.0)
        stat = np.max(np.abs(self.H @ x + self.f + a.T @ y), initial=0.0)
        return float(prim), float(stat)


@dataclass(eq=False)
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    active_set: tuple = ()
    polished: bool = False
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    info: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status is QpStatus.OPTIMAL


def _ruiz(h, f, a, iters=15):
    n, m = h.shape[0], a.shape[0]
    d, e, cost = np.ones(n), np.ones(m), 1.0
    hs, fs, as_ = h.copy(), f.copy(), a.copy()
    for _ in range(iters):
        col = np.maximum(np.abs(hs).max(axis=0, initial=0.0), np.abs(as_).max(axis=0, initial=0.0))
        dd = 1.0 / np.sqrt(np.where(col < 1e-4, 1.0, np.minimum(col, 1e4)))
        row = np.abs(as_).max(axis=1, initial=0.0) if m else np.zeros(0)
        de = 1.0 / np.sqrt(np.where(row < 1e-4, 1.0, np.minimum(row, 1e4)))
        hs = dd[:, None] * hs * dd[None, :]
        as_ = de[:, None] * as_ * dd[None, :]
        fs = dd * fs
        d *= dd
        e *= de
        gamma_den = max(np.mean(np.abs(hs).max(axis=0)), np.abs(fs).max(initial=0.0))
        gamma = 1.0 / np.clip(gamma_den, 1e-4, 1e4) if gamma_den > 0 else 1.0
        hs *= gamma
        fs *= gamma
        cost *= gamma
    return hs, fs, as_, d, e, cost


def _polish(prob, a, lo, up, x, y, delta=1e-9, refine=5):
    eq_rows = np.isclose(lo, up, rtol=0.0, atol=1e-12)
    lower_act = (~eq_rows) & (y < 0) & np.isfinite(lo)
    upper_act = (~eq_rows) & (y > 0) & np.isfinite(up)
    act = np.flatnonzero(eq_rows | lower_act | upper_act)
    target = np.where(upper_act, up, lo)[act]
    n, k = prob.n, act.size
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = prob.H
    kkt[:n, n:] = a[act].T
    kkt[n:, :n] = a[act]
    rhs = np.concatenate([-prob.f, target])
    reg = kkt.copy()
    reg[:n, :n] += delta * np.eye(n)
    reg[n:, n:] -= delta * np.eye(k)
    try:
        sol = np.linalg.solve(reg, rhs)
        for _ in range(refine):
            sol = sol + np.linalg.solve(reg, rhs - kkt @ sol)
    except np.linalg.LinAlgError:
        return None
    xp = sol[:n]
    yp = np.zeros_like(y)
    yp[act] = sol[n:]
    # multipliers must carry the sign of the bound they sit on
    if np.any(yp[lower_act] > 1e-9) or np.any(yp[upper_act] < -1e-9):
        return None
    return xp, yp, tuple(int(i) for i in act)


def solve_qp(prob, tol_feas=1e-6, tol_stat=1e-6, max_iter=4000, rho=0.1, sigma=1e-6,
             alpha=1.6, warm_start=None, polish=True, check_every=25):
    """Solve ``prob`` with ADMM.

    Parameters
    ----------
    prob : QpProblem
    tol_feas, tol_stat : float
        Absolute tolerances on the unscaled primal residual and on the
        stationarity residual ``||H x + f + A^T y||_inf``.
    max_iter : int
    warm_start : tuple of (x, y), optional
        Previous primal/dual pair for the same constraint layout.

    Returns
    -------
    QpSolution
        ``status`` is ``Optimal`` when both residuals are within tolerance,
        ``Infeasible`` when a primal infeasibility certificate was found and
        ``MaxIter`` otherwise (the last iterate is returned).
    """
    a, lo, up = prob.stacked()
    n, m = prob.n, a.shape[0]
    h = prob.H + HESSIAN_REG * np.eye(n)
    hs, fs, as_, d, e, cost = _ruiz(h, prob.f, a)
    los = np.where(np.isfinite(lo), lo * e, -_INF)
    ups = np.where(np.isfinite(up), up * e, _INF)
    is_eq = np.abs(ups - los) < 1e-10
    is_free = (los <= -_INF) & (ups >= _INF)

    def rho_vec(r):
        out = np.full(m, r)
        out[is_eq] = 1e3 * r
        out[is_free] = 1e-6
        return out

    def factor(rv):
        return cho_factor(hs + sigma * np.eye(n) + as_.T @ (rv[:, None] * as_))

    if warm_start is not None:
        x = np.asarray(warm_start[0], float) / d
        y = cost * np.asarray(warm_start[1], float) / e if m else np.zeros(0)
    else:
        x, y = np.zeros(n), np.zeros(m)
    z = np.clip(as_ @ x, los, ups)
    rv = rho_vec(rho)
    fac = factor(rv)

    def unscaled(xs, ys):
        return d * xs, e * ys / cost

    status = QpStatus.MAX_ITER
    it = 0
    prim = dual = np.inf
    for it in range(1, max_iter + 1):
        x_t = cho_solve(fac, sigma * x - fs + as_.T @ (rv * z - y))
        z_t = as_ @ x_t
        x = alpha * x_t + (1 - alpha) * x
        z_relax = alpha * z_t + (1 - alpha) * z
        z_new = np.clip(z_relax + y / rv, los, ups)
        y_new = y + rv * (z_relax - z_new)
        dy = y_new - y
        z, y = z_new, y_new

        if it % check_every and it != max_iter:
            continue
        xu, yu = unscaled(x, y)
        prim, dual = prob.residuals(xu, yu)
        if prim <= tol_feas and dual <= tol_stat:
            status = QpStatus.OPTIMAL
            break
        # primal infeasibility certificate on the scaled problem
        ndy = np.abs(dy).max(initial=0.0)
        if m and ndy > 1e-12:
            support = (np.sum(np.where(dy > 0, np.minimum(ups, _INF) * dy, 0.0))
                       + np.sum(np.where(dy < 0, np.maximum(los, -_INF) * dy, 0.0)))
            finite_ok = not (np.any((dy > 1e-12 * ndy) & (ups >= _INF))
                             or np.any((dy < -1e-12 * ndy) & (los <= -_INF)))
            if finite_ok and np.abs(as_.T @ dy).max() <= 1e-6 * ndy and support < -1e-6 * ndy:
                status = QpStatus.INFEASIBLE
                break
        # residual balancing
        ax = as_ @ x
        p_norm = np.abs(ax - z).max(initial=0.0) / max(np.abs(ax).max(initial=0.0), np.abs(z).max(initial=0.0), 1e-10)
        d_norm = np.abs(hs @ x + fs + as_.T @ y).max() / max(
            np.abs(hs @ x).max(), np.abs(as_.T @ y).max(initial=0.0), np.abs(fs).max(), 1e-10)
        new_rho = np.clip(rho * np.sqrt(p_norm / max(d_norm, 1e-12)), 1e-6, 1e6)
        if new_rho > 5 * rho or new_rho < rho / 5:
            rho = new_rho
            rv = rho_vec(rho)
            fac = factor(rv)

    xu, yu = unscaled(x, y)
    sol = QpSolution(xu, yu, prob.objective(xu), status, it,
                     primal_residual=prim, dual_residual=dual)
    if status is QpStatus.INFEASIBLE:
        return sol
    sol.primal_residual, sol.dual_residual = prob.residuals(xu, yu)
    if polish and m:
        polished = _polish(prob, a, lo, up, xu, yu)
        if polished is not None:
            xp, yp, act = polished
            pp, pd = prob.residuals(xp, yp)
            if pp <= max(sol.primal_residual, tol_feas) and pd <= max(sol.dual_residual, tol_stat):
                sol = QpSolution(xp, yp, prob.objective(xp), status, it, act, True, pp, pd)
    if sol.primal_residual <= tol_feas and sol.dual_residual <= tol_stat:
        sol.status = QpStatus.OPTIMAL
    if not sol.active_set:
        sol.active_set = tuple(int(i) for i in np.flatnonzero(
            (np.abs(a @ sol.x - lo) <= 10 * tol_feas) | (np.abs(a @ sol.x - up) <= 10 * tol_feas)))
    return sol
