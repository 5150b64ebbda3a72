"""Grid-transfer coefficients by constrained energy minimization.

Columns of the prolongator minimize their energy in a matrix norm over a
fixed sparsity pattern, subject to exact reproduction of per-component
constants (row sums equal to one).  The symmetric mode measures energy in
the A-norm and takes one or more projected CG steps; the nonsymmetric mode
uses the normal-equation (A^T A) norm.  Restrictions reuse the machinery on
the transposed pattern with the A A^T norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr

A_NORM = "anorm"
NORMAL_NORM = "normal"


@dataclass
class EminProblem:
    A: sp.csr_matrix
    pattern: sp.csr_matrix
    norm: str = A_NORM
    iterations: int = 1

    def __post_init__(self):
        self.A = as_csr(self.A)
        self.pattern = as_csr(self.pattern)
        if self.norm not in (A_NORM, NORMAL_NORM):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.A.shape[0] != self.A.shape[1] or self.A.shape[0] != self.pattern.shape[0]:
            raise ValueError(
                f"pattern rows {self.pattern.shape} do not match matrix {self.A.shape}"
            )
        if np.any(np.diff(self.pattern.indptr) == 0):
            raise ValueError("pattern has an empty row; constants are not representable")

    def chi_apply(self, X):
        if self.norm == A_NORM:
            return self.A @ X
        return self.A.T @ (self.A @ X)


@dataclass
class EminResult:
    P: sp.csr_matrix
    energies: list  # F(P_k) per iterate, including the initial guess


def initial_prolongator(pattern) -> sp.csr_matrix:
    """Feasible starting guess: each pattern row scaled to sum to one."""
    pattern = as_csr(pattern)
    counts = np.diff(pattern.indptr)
    if np.any(counts == 0):
        raise ValueError("pattern has an empty row; cannot build a feasible prolongator")
    P = pattern.copy().astype(float)
    P.data = np.repeat(1.0 / counts, counts)
    return P


def _mask_and_center(X, pattern):
    """Orthogonal projection onto {pattern support, zero row sums}."""
    masked = as_csr(X.multiply(pattern))
    counts = np.diff(pattern.indptr)
    rowsums = np.asarray(masked.sum(axis=1)).ravel()
    shift = pattern.copy().astype(float)
    shift.data = np.repeat(rowsums / counts, counts)
    out = as_csr(masked - shift)
    # keep the full pattern support so iterates stay structurally aligned
    out = as_csr(out + 0.0 * pattern)
    return out


def _dot(X, Y) -> float:
    return float(X.multiply(Y).sum())


def emin_iterate(problem: EminProblem, P0=None) -> EminResult:
    """Projected CG descent on the sum of column energies.

    The gradient is masked to the pattern and row-centered (the tangent
    projection for constant constraints), the step uses an exact line search,
    and successive directions are conjugated Fletcher-Reeves style.  Energy is
    nonincreasing and constraints are preserved to roundoff.
    """
    pattern = problem.pattern
    P = as_csr(P0) if P0 is not None else initial_prolongator(pattern)
    energies = [_dot(P, problem.chi_apply(P))]
    G_prev_norm2 = None
    D = None
    for _ in range(problem.iterations):
        G = _mask_and_center(-2.0 * problem.chi_apply(P), pattern)
        gnorm2 = _dot(G, G)
        if gnorm2 == 0.0:
            energies.append(energies[-1])
            continue
        if D is None:
            D = G
        else:
            beta = gnorm2 / G_prev_norm2
            D = as_csr(G + beta * D)
        G_prev_norm2 = gnorm2
        chi_d = problem.chi_apply(D)
        curvature = _dot(D, chi_d)
        if curvature <= 0.0:
            if problem.norm == A_NORM:
                raise ValueError("norm matrix not SPD on pattern space")
            break
        alpha = _dot(G, D) / (2.0 * curvature)
        P = as_csr(P + alpha * D)
        energies.append(_dot(P, problem.chi_apply(P)))
    return EminResult(P=P, energies=energies)


def emin_prolongator(A, pattern, iterations=1, norm=A_NORM) -> EminResult:
    problem = EminProblem(A=A, pattern=pattern, norm=norm, iterations=iterations)
    return emin_iterate(problem)


def emin_restriction(A, P, iterations=1, pattern=None) -> EminResult:
    """Petrov-Galerkin restriction: transposed pattern, A A^T energies.

    Works on Q = R^T so the row-sum-one machinery applies unchanged; the
    initial guess is the row-normalized (transposed) pattern.  The returned
    matrix is R itself.
    """
    A = as_csr(A)
    pattern = as_csr(pattern if pattern is not None else (as_csr(P) != 0).astype(float))

    class _AAT(EminProblem):
        def chi_apply(self, X):
            return self.A @ (self.A.T @ X)

    problem = _AAT(A=A, pattern=pattern, norm=NORMAL_NORM, iterations=iterations)
    result = emin_iterate(problem)
    return EminResult(P=as_csr(result.P.T), energies=result.energies)
