"""Dense linear algebra kernels: regularised least squares and symmetric eig.

The least-squares path solves the normal equations with a Cholesky
factorisation, which is accurate enough for the well-conditioned regression
problems produced by correlation statistics and lets one factorisation be
reused across many right-hand sides.  A singular normal matrix triggers an
automatic, flagged ridge fallback instead of an exception.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

# fallback ridge is this factor times mean(diag(A^T A))
FALLBACK_RIDGE_SCALE = 1.0e-8
# reciprocal-condition floor below which the lambda = 0 path is abandoned
RCOND_FLOOR = 1.0e-12


@dataclass
class RegressionProblem:
    """min_u ||design @ u - target||^2 + ridge * ||u||^2."""

    design: np.ndarray
    target: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        if self.design.ndim != 2:
            raise ValueError("design must be a 2-d array")
        if self.target.shape != (self.design.shape[0],):
            raise ValueError(
                f"target shape {self.target.shape} does not match "
                f"{self.design.shape[0]} design rows"
            )
        if self.ridge < 0:
            raise ValueError(f"ridge must be non-negative, got {self.ridge}")


@dataclass
class LeastSquaresSolution:
    """Coefficients plus metadata about the regularisation actually used."""

    coefficients: np.ndarray
    ridge: float
    used_fallback: bool


def solve_gram(gram, rhs, ridge: float = 0.0):
    """Solve (G + ridge I) U = rhs for a symmetric PSD Gram matrix G.

    ``rhs`` may be a vector or a matrix of columns; the Cholesky factor is
    computed once and shared by every column.  A singular (or numerically
    singular) unregularised system triggers one automatic retry with a small
    ridge proportional to the Gram trace.

    Returns ``(solution, effective_ridge, used_fallback)``.
    """
    gram = np.asarray(gram, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(gram)):
        raise np.linalg.LinAlgError("normal matrix has non-finite entries")
    n = gram.shape[0]
    scale = float(np.trace(gram)) / max(n, 1)

    def attempt(lam):
        g = gram if lam == 0.0 else gram + lam * np.eye(n)
        factor = scipy.linalg.cho_factor(g, lower=True, check_finite=False)
        diag = np.abs(np.diag(factor[0]))
        if diag.size and (diag.min() / max(diag.max(), 1e-300)) ** 2 < RCOND_FLOOR:
            raise np.linalg.LinAlgError("normal matrix numerically singular")
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)

    try:
        return attempt(ridge), ridge, False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        if ridge > 0.0:
            raise
    fallback = FALLBACK_RIDGE_SCALE * max(scale, np.finfo(float).tiny)
    return attempt(fallback), fallback, True


def solve_normal_equations(design, targets, ridge: float = 0.0):
    """Solve (A^T A + ridge I) U = A^T B for one or many target columns.

    Thin wrapper around ``solve_gram`` that forms the normal equations from
    the design matrix.  Returns ``(solution, effective_ridge, used_fallback)``.
    """
    a = np.asarray(design, dtype=float)
    b = np.asarray(targets, dtype=float)
    return solve_gram(a.T @ a, a.T @ b, ridge)


def solve_least_squares(problem: RegressionProblem) -> LeastSquaresSolution:
    """Solve one regression problem via the normal equations.

    The solution satisfies the stationarity condition
    ``A^T (b - A u) = ridge * u`` up to roundoff; the effective ridge and
    whether the singular-fallback path was taken are reported alongside the
    coefficients.
    """
    coeffs, ridge, used_fallback = solve_normal_equations(
        problem.design, problem.target, problem.ridge
    )
    return LeastSquaresSolution(coeffs, ridge, used_fallback)


def symmetric_eig(matrix):
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    Returns ``(eigenvalues, eigenvectors)`` with orthonormal eigenvector
    columns.  Rejects matrices that are not square-symmetric within a small
    absolute tolerance scaled by the largest entry.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    tol = 1.0e-10 * max(1.0, float(np.abs(m).max()) if m.size else 1.0)
    if not np.allclose(m, m.T, rtol=0.0, atol=tol):
        raise ValueError("matrix is not symmetric within tolerance")
    eigenvalues, eigenvectors = np.linalg.eigh(m)
    return eigenvalues, eigenvectors
