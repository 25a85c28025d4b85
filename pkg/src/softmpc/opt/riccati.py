"""Discrete algebraic Riccati equation by the structure-preserving doubling algorithm."""
import numpy as np

from ..exceptions import NotConverged


def dare_residual(P, A, B, Q, R):
    """Frobenius norm of the Riccati equation residual at ``P``."""
    bp = B.T @ P
    gain_term = (A.T @ P @ B) @ np.linalg.solve(R + bp @ B, bp @ A)
    return float(np.linalg.norm(P - (A.T @ P @ A - gain_term + Q), "fro"))


def lqr_gain(P, A, B, R):
    """``K = -(R + B^T P B)^-1 B^T P A`` so that ``u = K x``."""
    bp = B.T @ P
    return -np.linalg.solve(R + bp @ B, bp @ A)


def solve_dare(A, B, Q, R, tol=1e-8, max_iter=60, refine_steps=3):
    """Stabilizing solution of ``P = A^T P A - A^T P B (R + B^T P B)^-1 B^T P A + Q``.

    The doubling recursion squares the effective horizon every iteration
    and therefore converges quadratically for stabilizable and detectable
    pairs. A few fixed-point Riccati sweeps then polish the result.

    Parameters
    ----------
    A, B : ndarray
        System and input matrices, ``(n, n)`` and ``(n, m)``.
    Q, R : ndarray
        State weight (PSD) and input weight (PD).
    tol : float
        Required Frobenius-norm residual.
    max_iter : int
        Cap on doubling iterations.

    Returns
    -------
    P : ndarray
        Symmetric PSD solution.
    K : ndarray
        Feedback gain with ``rho(A + B K) < 1``.

    Raises
    ------
    NotConverged
        If the residual does not reach ``tol`` or the closed loop is not
        stable, which signals an unstabilizable linearization.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if not all(np.all(np.isfinite(x)) for x in (A, B, Q, R)):
        raise NotConverged("non-finite Riccati data")
    ident = np.eye(n)
    a_k = A.copy()
    g_k = B @ np.linalg.solve(R, B.T)
    h_k = Q.copy()
    converged = False
    for _ in range(max_iter):
        w = ident + g_k @ h_k
        try:
            w_a = np.linalg.solve(w, a_k)
            w_g = np.linalg.solve(w, g_k)
        except np.linalg.LinAlgError as exc:
            raise NotConverged("doubling iteration hit a singular step") from exc
        h_next = h_k + a_k.T @ h_k @ w_a
        g_k = g_k + a_k @ w_g @ a_k.T
        a_k = a_k @ w_a
        h_next = 0.5 * (h_next + h_next.T)
        g_k = 0.5 * (g_k + g_k.T)
        change = np.linalg.norm(h_next - h_k, "fro")
        h_k = h_next
        if not np.all(np.isfinite(h_k)):
            raise NotConverged("doubling iteration diverged")
        if change <= 1e-14 * max(1.0, np.linalg.norm(h_k, "fro")):
            converged = True
            break
    P = h_k
    if not np.all(np.isfinite(P)):
        raise NotConverged("doubling iteration diverged")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(refine_steps):
                if dare_residual(P, A, B, Q, R) <= 0.1 * tol:
                    break
                bp = B.T @ P
                P = A.T @ P @ A - (A.T @ P @ B) @ np.linalg.solve(R + bp @ B, bp @ A) + Q
                P = 0.5 * (P + P.T)
            residual = dare_residual(P, A, B, Q, R)
            K = lqr_gain(P, A, B, R)
            radius = np.max(np.abs(np.linalg.eigvals(A + B @ K)), initial=0.0)
    except np.linalg.LinAlgError as exc:
        raise NotConverged("Riccati refinement produced a non-finite solution") from exc
    if residual > tol or radius >= 1.0:
        raise NotConverged(
            f"Riccati residual {residual:.3e}, closed-loop spectral radius {radius:.6f}"
            + ("" if converged else " (doubling iteration cap reached)"))
    return P, K
