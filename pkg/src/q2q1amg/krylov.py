"""Right-preconditioned GMRES with modified Gram-Schmidt and Givens rotations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    converged: bool
    history: list  # residual norms, one entry per Arnoldi step plus the initial one


def _as_operator(op):
    if op is None:
        return lambda v: v
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda v: op @ v
    return op


def gmres(
    operator,
    b,
    x0=None,
    preconditioner=None,
    rel_tol: float = 1e-6,
    max_iter: int = 200,
    restart: int | None = None,
) -> GmresResult:
    """Solve ``A x = b`` with right preconditioning: ``A M^-1 y = b, x = M^-1 y``.

    Full GMRES by default (``restart=None``); the reported history holds the
    Arnoldi least-squares residual norms, which for right preconditioning
    estimate the true residual.  Convergence is declared only after the true
    residual passes ``rel_tol * ||b||``.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    apply_a = _as_operator(operator)
    apply_m = _as_operator(preconditioner)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return GmresResult(x=np.zeros(n), iterations=0, converged=True, history=[0.0])
    target = rel_tol * norm_b
    cycle = restart if restart is not None else max_iter

    history = []
    total_iters = 0
    r = b - apply_a(x)
    history.append(float(np.linalg.norm(r)))
    if history[0] <= target:
        return GmresResult(x=x, iterations=0, converged=True, history=history)

    while total_iters < max_iter:
        beta = np.linalg.norm(r)
        V = np.zeros((n, cycle + 1))
        H = np.zeros((cycle + 1, cycle))
        cs = np.zeros(cycle)
        sn = np.zeros(cycle)
        g = np.zeros(cycle + 1)
        g[0] = beta
        V[:, 0] = r / beta
        j = 0
        breakdown = False
        while j < cycle and total_iters < max_iter:
            w = apply_a(apply_m(V[:, j]))
            for i in range(j + 1):
                H[i, j] = V[:, i] @ w
                w -= H[i, j] * V[:, i]
            hj1 = np.linalg.norm(w)
            H[j + 1, j] = hj1
            if hj1 > 0.0:
                V[:, j + 1] = w / hj1
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if denom == 0.0 else (H[j, j] / denom, H[j + 1, j] / denom)
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j += 1
            total_iters += 1
            est = abs(g[j])
            history.append(float(est))
            if hj1 == 0.0:
                breakdown = True  # happy breakdown: exact solve in the current space
            if est <= target or breakdown:
                break
        y = np.linalg.lstsq(H[:j, :j], g[:j], rcond=None)[0] if j else np.zeros(0)
        x_new = x + apply_m(V[:, :j] @ y)
        r_new = b - apply_a(x_new)
        true_norm = float(np.linalg.norm(r_new))
        if true_norm <= target or breakdown:
            history[-1] = true_norm
            return GmresResult(
                x=x_new, iterations=total_iters, converged=true_norm <= target, history=history
            )
        x, r = x_new, r_new
    return GmresResult(x=x, iterations=total_iters, converged=False, history=history)
