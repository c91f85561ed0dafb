"""Sparse symmetric solves: direct factorization or Jacobi-CG."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveReport:
    solution: np.ndarray
    iterations: int
    residual_norm: float
    method: str


def solve(system, tol: float = 1e-10, method: str = "direct") -> SolveReport:
    """Solve ``A u = b`` for an :class:`AssembledSystem` (or anything with
    ``matrix``/``rhs``).

    The direct path factorizes with SuperLU; the CG path uses a Jacobi
    preconditioner with an iteration cap of ``10 sqrt(n)`` and falls back
    to the direct solver when it stalls.
    """
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    A = system.matrix.tocsr()
    b = np.asarray(system.rhs, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveReport(np.zeros_like(b), 0, 0.0, method)
    if method == "direct":
        u = _solve_direct(A, b)
        res = np.linalg.norm(A @ u - b) / bnorm
        if not np.isfinite(res) or res > max(tol, 1e-8):
            raise SolveError(f"direct solve residual {res:.3e} exceeds tolerance; "
                             "system may be indefinite (penalty too small?)")
        return SolveReport(u, 0, float(res), "direct")
    if method == "cg":
        n = A.shape[0]
        diag = A.diagonal()
        if np.any(diag <= 0.0):
            raise SolveError("nonpositive diagonal entry; system not positive definite")
        M = sp.diags(1.0 / diag)
        maxiter = int(10 * math.sqrt(n)) + 20
        count = [0]

        def cb(_):
            count[0] += 1

        u, info = spla.cg(A, b, rtol=tol, maxiter=maxiter, M=M, callback=cb)
        if info != 0:
            u = _solve_direct(A, b)
            res = np.linalg.norm(A @ u - b) / bnorm
            return SolveReport(u, count[0], float(res), "cg+direct-fallback")
        res = np.linalg.norm(A @ u - b) / bnorm
        return SolveReport(u, count[0], float(res), "cg")
    raise ValueError(f"unknown solver method {method!r}")


def _solve_direct(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    lu = spla.splu(A.tocsc())
    return lu.solve(b)
