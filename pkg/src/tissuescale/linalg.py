"""Linear solvers for assembled systems.

``direct`` factors the bordered matrix with sparse LU.  ``cg`` is a Jacobi
preconditioned conjugate gradient for symmetric semidefinite systems whose
kernel is removed afterwards by projection.  ``minres`` handles symmetric
indefinite (saddle-point) systems.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError, ValidationError


@dataclass
class SolveResult:
    x: np.ndarray
    residual: float
    iterations: int
    method: str
    trace: list = field(default_factory=list)
    multipliers: np.ndarray | None = None


def residual_norm(system, x):
    b = system.rhs
    r = b - system.matrix @ x
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))


def project(system, x):
    """Enforce the zero-mean rows exactly by subtracting kernel vectors."""
    if not system.constraints:
        return x
    C = np.vstack(system.constraints)
    Z = np.vstack(system.nullspace).T
    G = C @ Z
    return x - Z @ np.linalg.solve(G, C @ x)


def pcg(A, b, tol=1e-10, max_iter=None, x0=None, callback=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, trace)`` where ``trace`` holds the relative residual after
    every iteration.  Raises SolverError when ``max_iter`` is exhausted.
    """
    n = len(b)
    max_iter = 10 * n if max_iter is None else int(max_iter)
    d = np.asarray(A.diagonal()).copy()
    d[d == 0] = 1.0
    Minv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros(n), [0.0]
    z = Minv * r
    p = z.copy()
    rz = r @ z
    trace = [np.linalg.norm(r) / nb]
    for _ in range(max_iter):
        if trace[-1] <= tol:
            return x, trace
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix is not positive definite on the search space", trace)
        a = rz / pAp
        x += a * p
        r -= a * Ap
        if callback is not None:
            callback(x)
        trace.append(np.linalg.norm(r) / nb)
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if trace[-1] <= tol:
        return x, trace
    raise SolverError(f"CG did not reach tol {tol:g} in {max_iter} iterations "
                      f"(residual {trace[-1]:.3e})", trace)


def solve(system, tol=1e-10, max_iter=None, method="direct"):
    """Solve ``system`` and return the solution with its relative residual."""
    if not 0 < tol < 1:
        raise ValidationError(f"tol must lie in (0, 1), got {tol}")
    A = system.matrix
    b = system.rhs
    n = system.n
    if method == "direct":
        K = system.bordered()
        k = K.shape[0] - n
        rhs = np.concatenate([b, np.zeros(k)])
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        sol = lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SolverError("factorization produced non-finite values")
        x = sol[:n]
        res = residual_norm(system, x)
        result = SolveResult(x, res, 1, method, [res], sol[n:])
    elif method == "cg":
        if not system.symmetric:
            raise ValidationError("CG needs a symmetric system")
        bb = b
        if system.nullspace:
            # remove the incompatible part so the singular system is consistent
            Z = np.vstack(system.nullspace).T
            bb = b - Z @ np.linalg.lstsq(Z, b, rcond=None)[0]
        x, trace = pcg(sp.csr_matrix(A), bb, tol=tol, max_iter=max_iter)
        x = project(system, x)
        result = SolveResult(x, residual_norm(system, x), len(trace) - 1, method, trace)
    elif method == "minres":
        K = system.bordered()
        k = K.shape[0] - n
        rhs = np.concatenate([b, np.zeros(k)])
        trace = []

        def cb(xk):
            trace.append(float(np.linalg.norm(rhs - K @ xk) / max(np.linalg.norm(rhs), 1e-300)))

        sol, info = spla.minres(K, rhs, rtol=tol, maxiter=max_iter or 20 * K.shape[0], callback=cb)
        if info != 0:
            raise SolverError(f"MINRES did not converge (info={info})", trace)
        x = sol[:n]
        result = SolveResult(x, residual_norm(system, x), len(trace), method, trace, sol[n:])
    else:
        raise ValidationError(f"unknown solver method {method!r}")
    if system.constraints:
        result.x = project(system, result.x)
    return result


class Factorized:
    """Reusable LU factorization of a bordered system for many right-hand sides."""

    def __init__(self, system):
        self.system = system
        self.n = system.n
        self.k = len(system.constraints)
        try:
            self.lu = spla.splu(system.bordered())
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc

    def __call__(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        extra = np.zeros((self.k,) + rhs.shape[1:])
        sol = self.lu.solve(np.concatenate([rhs, extra]))
        return sol[: self.n]
