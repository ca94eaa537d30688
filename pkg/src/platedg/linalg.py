"""Sparse factorization and the Schur-complement CG for the flow's saddle systems.

The flow matrix is factorized once per run (scipy SuperLU behind a thin
wrapper) and reused for every step; the saddle-point step
[A B'; B 0][dy; lam] = [F; 0] is solved by conjugate gradients on the Schur
complement S = B A^-1 B', first for the multiplier lam and then recovering
dy = A^-1 (F - B' lam).
"""

import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(RuntimeError):
    pass


class IterativeSolveError(RuntimeError):
    """CG did not reach the requested tolerance; carries the best iterate."""

    def __init__(self, message, best_x, residual, iterations):
        super().__init__(message)
        self.best_x = best_x
        self.residual = residual
        self.iterations = iterations


class Factorization:
    """Direct LU factorization of a sparse matrix, reusable across solves."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.shape = A.shape
        self.matrix = A
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        return self._lu.solve(b)


def factorize(A):
    return Factorization(A)


def schur_cg(Afact, B, rhs, tol=1e-8, max_iter=None, x0=None):
    """Solve [A B'; B 0][dy; lam] = [rhs; 0] via CG on S = B A^-1 B'.

    Returns (dy, lam, iterations).  The CG residual B dy is driven below
    ``tol`` relative to the reduced right-hand side.  A residual plateau over
    50 iterations (a symptom of dependent constraint rows) terminates with a
    warning and the best iterate; exhausting ``max_iter`` raises
    IterativeSolveError carrying the best iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, dtype=float)
    y_free = Afact.solve(rhs)
    if B is None or B.shape[0] == 0:
        return y_free, np.zeros(0), 0

    Bt = B.T.tocsr() if sp.issparse(B) else B.T
    b_s = B @ y_free
    b_norm = np.linalg.norm(b_s)
    if b_norm == 0.0:
        return y_free, np.zeros(B.shape[0]), 0

    def apply_S(v):
        return B @ Afact.solve(Bt @ v)

    if max_iter is None:
        max_iter = 10 * B.shape[0]
    lam = np.zeros(B.shape[0]) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b_s - apply_S(lam) if np.any(lam) else b_s.copy()
    p = r.copy()
    rr = r @ r
    best_lam, best_res = lam.copy(), np.sqrt(rr)
    target = tol * b_norm
    it = 0
    stall = 0
    while np.sqrt(rr) > target:
        if it >= max_iter:
            raise IterativeSolveError(
                f"Schur CG not converged after {it} iterations (residual {np.sqrt(rr):.3e})",
                best_lam, best_res, it)
        Sp = apply_S(p)
        pSp = p @ Sp
        if pSp <= 0.0:
            warnings.warn("Schur complement numerically indefinite; returning best iterate")
            lam = best_lam
            break
        alpha = rr / pSp
        lam = lam + alpha * p
        r = r - alpha * Sp
        rr_new = r @ r
        it += 1
        if np.sqrt(rr_new) < best_res:
            best_res, best_lam = np.sqrt(rr_new), lam.copy()
            stall = 0
        else:
            stall += 1
            if stall >= 50:
                warnings.warn("Schur CG stagnated; returning least-squares iterate")
                lam = best_lam
                break
        beta = rr_new / rr
        p = r + beta * p
        rr = rr_new
    dy = Afact.solve(rhs - Bt @ lam)
    return dy, lam, it
