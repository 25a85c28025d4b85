"""Per-loop affine state-space model of the arm and its exact discretization.

The state is ``x = [q, qd]``. The continuous model freezes the inertia,
stiffness and bias terms at the linearization point::

    A = [[0, I], [-B^-1 K, -B^-1 D]]
    Bu = [[0], [B^-1 A_alloc]]
    W = [[0], [-B^-1 (c + g)]]
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteInput, SingularInertia

# Higham (2005) backward-error bounds for the [m/m] Padé approximants
_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1, 7: 9.504178996162932e-1,
          9: 2.097847961257068e0, 13: 5.371920351148152e0}
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
         33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0),
}


@dataclass(frozen=True, eq=False)
class ContinuousSS:
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray


@dataclass(frozen=True, eq=False)
class DiscreteDynamics:
    """``x(k+1) = A_d x(k) + B_d u(k) + W_d`` for one sampling period ``Ts``."""

    A_d: np.ndarray
    B_d: np.ndarray
    W_d: np.ndarray
    Ts: float

    def step(self, x, u):
        return self.A_d @ x + self.B_d @ u + self.W_d


def continuous_ss(terms):
    """Assemble the affine continuous-time model from frozen dynamics terms."""
    n = terms.B.shape[0]
    try:
        chol = np.linalg.cholesky(terms.B)
    except np.linalg.LinAlgError as exc:
        raise SingularInertia("inertia matrix is not positive definite") from exc

    def solve(rhs):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))

    rhs = np.column_stack([terms.K, terms.D, terms.A_alloc, terms.c + terms.g])
    sol = solve(rhs)
    m = terms.A_alloc.shape[1]
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -sol[:, :n]
    a[n:, n:] = -sol[:, n:2 * n]
    b = np.zeros((2 * n, m))
    b[n:] = sol[:, 2 * n:2 * n + m]
    w = np.zeros(2 * n)
    w[n:] = -sol[:, -1]
    return ContinuousSS(a, b, w)


def _pade(a, m):
    coeff = _PADE[m]
    n = a.shape[0]
    ident = np.eye(n)
    a2 = a @ a
    if m != 13:
        powers = [ident, a2]
        for _ in range(2, (m + 1) // 2):
            powers.append(powers[-1] @ a2)
        u = sum(coeff[j] * powers[j // 2] for j in range(m, 0, -2))
        u = a @ u
        v = sum(coeff[j] * powers[j // 2] for j in range(m - 1, -1, -2))
    else:
        a4 = a2 @ a2
        a6 = a2 @ a4
        c = coeff
        u = a @ (a6 @ (c[13] * a6 + c[11] * a4 + c[9] * a2)
                 + c[7] * a6 + c[5] * a4 + c[3] * a2 + c[1] * ident)
        v = (a6 @ (c[12] * a6 + c[10] * a4 + c[8] * a2)
             + c[6] * a6 + c[4] * a4 + c[2] * a2 + c[0] * ident)
    return np.linalg.solve(v - u, v + u)


def matrix_exponential(m, t=1.0):
    """``exp(m t)`` by scaling and squaring with a Padé approximant.

    The approximant degree and the number of squarings follow Higham's
    1-norm thresholds, giving double-precision backward error.
    """
    a = np.asarray(m, dtype=float) * t
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix_exponential expects a square matrix")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("matrix contains non-finite entries")
    norm = np.linalg.norm(a, 1)
    for degree in (3, 5, 7, 9):
        if norm <= _THETA[degree]:
            return _pade(a, degree)
    squarings = max(0, int(np.ceil(np.log2(norm / _THETA[13]))))
    out = _pade(a / 2.0 ** squarings, 13)
    for _ in range(squarings):
        out = out @ out
    if not np.all(np.isfinite(out)):
        raise NonFiniteInput("matrix exponential overflowed")
    return out


def discretize(ss, Ts, exact_drift=False):
    """Zero-order-hold discretization of ``ss`` over ``Ts`` seconds.

    ``B_d`` is read off the exponential of the block matrix
    ``[[A, B], [0, 0]] Ts``, which equals ``A^-1 (A_d - I) B`` whenever
    ``A`` is invertible and stays defined when it is not (zero stiffness).
    The drift is held to first order, ``W_d = W Ts``, unless
    ``exact_drift`` requests the full integral of ``exp(A s) W``.
    """
    if Ts <= 0:
        raise ValueError("sampling time must be positive")
    n, m = ss.B.shape
    block = np.zeros((n + m + 1, n + m + 1))
    block[:n, :n] = ss.A
    block[:n, n:n + m] = ss.B
    block[:n, -1] = ss.W
    expo = matrix_exponential(block, Ts)
    a_d = expo[:n, :n]
    b_d = expo[:n, n:n + m]
    w_d = expo[:n, -1] if exact_drift else ss.W * Ts
    return DiscreteDynamics(a_d, b_d, w_d, float(Ts))


def linearize(q, qd, geom, params, Ts, exact_drift=False):
    """Dynamics terms at ``(q, qd)`` followed by assembly and discretization."""
    from .dynamics import dynamics_terms

    terms = dynamics_terms(q, qd, geom, params)
    return discretize(continuous_ss(terms), Ts, exact_drift), terms
