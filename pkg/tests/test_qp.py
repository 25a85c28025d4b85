import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softmpc.opt.qp import QpProblem, QpStatus, solve_qp


def random_qp(rng, n=6, m_in=8, m_eq=2):
    g = rng.normal(size=(n, n))
    x_feas = rng.normal(size=n)
    a_in = rng.normal(size=(m_in, n))
    slack = rng.uniform(0.0, 1.0, m_in)
    a_eq = rng.normal(size=(m_eq, n))
    return QpProblem(g @ g.T + 0.1 * np.eye(n), rng.normal(size=n) * 3, a_eq, a_eq @ x_feas,
                     a_in, a_in @ x_feas - slack, a_in @ x_feas + slack)


def test_unconstrained_scalar():
    sol = solve_qp(QpProblem([[2.0]], [-4.0]))
    assert sol.optimal and np.isclose(sol.x[0], 2.0, atol=1e-6)
    assert np.isclose(sol.objective, -4.0, atol=1e-6)


def test_active_lower_bound():
    sol = solve_qp(QpProblem([[2.0]], [4.0], A_in=[[1.0]], lower=[1.0]))
    assert sol.optimal and np.isclose(sol.x[0], 1.0, atol=1e-8)
    assert sol.y[0] < 0  # sits on the lower side
    assert sol.active_set == (0,)


def test_equality_projection():
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[2.0]))
    assert np.allclose(sol.x, [1, 1], atol=1e-8)


def test_grid_oracle_two_variables():
    h = np.array([[3.0, 1.0], [1.0, 2.0]])
    f = np.array([-4.0, 1.0])
    a = np.array([[1.0, 1.0], [1.0, -1.0]])
    lo, up = np.array([-0.5, -1.0]), np.array([0.8, 0.5])
    sol = solve_qp(QpProblem(h, f, A_in=a, lower=lo, upper=up))
    grid = np.arange(-2.0, 2.0 + 1e-9, 1e-3)
    x1, x2 = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([x1.ravel(), x2.ravel()], axis=1)
    ax = pts @ a.T
    ok = np.all((ax >= lo - 1e-12) & (ax <= up + 1e-12), axis=1)
    vals = 0.5 * np.einsum("pi,ij,pj->p", pts[ok], h, pts[ok]) + pts[ok] @ f
    assert sol.optimal
    assert sol.objective <= vals.min() + 1e-9
    assert vals.min() - sol.objective < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_kkt_conditions_hold(seed):
    prob = random_qp(np.random.default_rng(seed))
    sol = solve_qp(prob)
    assert sol.status is QpStatus.OPTIMAL
    prim, stat = prob.residuals(sol.x, sol.y)
    assert prim <= 1e-6 and stat <= 1e-6
    a, lo, up = prob.stacked()
    ax = a @ sol.x
    m_eq = prob.A_eq.shape[0]
    y_in = sol.y[m_eq:]
    # complementary slackness and sign conditions on the inequality rows
    lo_in, up_in, ax_in = lo[m_eq:], up[m_eq:], ax[m_eq:]
    scale = max(1.0, np.abs(sol.y).max())
    for yi, axi, li, ui in zip(y_in, ax_in, lo_in, up_in):
        if yi > 1e-6 * scale:
            assert abs(axi - ui) < 1e-5
        if yi < -1e-6 * scale:
            assert abs(axi - li) < 1e-5


def test_infeasible_detected():
    prob = QpProblem(np.eye(1), [0.0], A_in=[[1.0], [1.0]], lower=[1.0, -np.inf], upper=[np.inf, 0.0])
    assert solve_qp(prob).status is QpStatus.INFEASIBLE


def test_iteration_cap_reports_maxiter(rng):
    sol = solve_qp(random_qp(rng), max_iter=1, polish=False, check_every=1)
    assert sol.status is QpStatus.MAX_ITER


def test_deterministic(rng):
    prob = random_qp(rng)
    a, b = solve_qp(prob), solve_qp(prob)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y) and a.iterations == b.iterations


def test_warm_start_does_not_change_answer(rng):
    prob = random_qp(rng)
    cold = solve_qp(prob)
    warm = solve_qp(prob, warm_start=(cold.x, cold.y))
    assert np.allclose(cold.x, warm.x, atol=1e-6)
    assert warm.iterations <= cold.iterations


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])
    with pytest.raises(ValueError):
        QpProblem([[-1.0]], [0.0])
    with pytest.raises(ValueError):
        QpProblem([[1.0]], [0.0], A_in=[[1.0]], lower=[1.0], upper=[0.0])
