"""Stability diagnostics: the 1D staggered-grid model problem and the
coarse-level inf-sup singular-value probe.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr, eigh_dense, smallest_nonzero_singular_value

CO_LOCATED = "co_located"
MID_POINT = "mid_point"


@dataclass
class Mac1dSystem:
    """1D staggered model: n cell pressures, n-1 interior face velocities."""

    n: int
    B: sp.csr_matrix  # n x (n-1); B @ B.T is the Neumann Laplacian

    def pressure_positions(self):
        return np.arange(self.n, dtype=float)

    def velocity_positions(self):
        return np.arange(self.n - 1, dtype=float) + 0.5

    def full_operator(self) -> sp.csr_matrix:
        nu = self.n - 1
        eye = sp.identity(nu, format="csr")
        return as_csr(sp.bmat([[eye, self.B.T], [-self.B, None]], format="csr"))


@dataclass
class InfSupReport:
    levels: list          # level indices
    rows: list            # pressure rows of the scaled divergence per level
    sigma_min: list
    lumped_p: list        # lumped pressure mass diagonals per level
    lumped_v: list


def build_mac1d(n: int) -> Mac1dSystem:
    """Bidiagonal gradient/divergence pair; velocities sit between pressures."""
    if n < 4:
        raise ValueError("need at least 4 pressures")
    rows = np.concatenate([np.arange(n - 1), np.arange(1, n)])
    cols = np.concatenate([np.arange(n - 1), np.arange(n - 1)])
    vals = np.concatenate([-np.ones(n - 1), np.ones(n - 1)])
    B = as_csr(sp.coo_matrix((vals, (rows, cols)), shape=(n, n - 1)))
    return Mac1dSystem(n=n, B=B)


def _linear_interp_matrix(fine_pos, coarse_pos, left_dirichlet=None, right_dirichlet=None):
    """Rows interpolate fine positions linearly from bracketing coarse positions.

    Positions outside the coarse range interpolate against a zero Dirichlet
    value at the given endpoint location.
    """
    fine_pos = np.asarray(fine_pos, dtype=float)
    coarse_pos = np.asarray(coarse_pos, dtype=float)
    rows, cols, vals = [], [], []
    for i, x in enumerate(fine_pos):
        if x <= coarse_pos[0]:
            if left_dirichlet is None:
                rows.append(i), cols.append(0), vals.append(1.0)
            else:
                w = (x - left_dirichlet) / (coarse_pos[0] - left_dirichlet)
                rows.append(i), cols.append(0), vals.append(w)
            continue
        if x >= coarse_pos[-1]:
            last = len(coarse_pos) - 1
            if right_dirichlet is None:
                rows.append(i), cols.append(last), vals.append(1.0)
            else:
                w = (right_dirichlet - x) / (right_dirichlet - coarse_pos[-1])
                rows.append(i), cols.append(last), vals.append(w)
            continue
        k = int(np.searchsorted(coarse_pos, x, side="right")) - 1
        xl, xr = coarse_pos[k], coarse_pos[k + 1]
        if x == xl:
            rows.append(i), cols.append(k), vals.append(1.0)
            continue
        t = (x - xl) / (xr - xl)
        rows.append(i), cols.append(k), vals.append(1.0 - t)
        rows.append(i), cols.append(k + 1), vals.append(t)
    return as_csr(sp.coo_matrix((vals, (rows, cols)), shape=(len(fine_pos), len(coarse_pos))))


def projected_mac_schur(sys: Mac1dSystem, placement: str):
    """Schur complements of the coarse-projected model operator.

    ``co_located`` places coarse velocities at coarse pressure locations (the
    unstable choice); ``mid_point`` centers them between coarse pressures.
    Returns ``(S, S_hat)`` scaled to the integer stencil convention
    (interior diagonal 2).
    """
    n = sys.n
    if n % 2 == 0:
        raise ValueError("coarsening by two needs an odd pressure count")
    if placement not in (CO_LOCATED, MID_POINT):
        raise ValueError(f"unknown placement {placement!r}")
    p_pos = sys.pressure_positions()
    v_pos = sys.velocity_positions()
    coarse_p = p_pos[::2]
    P_p = _linear_interp_matrix(p_pos, coarse_p)  # end pressures inject
    if placement == CO_LOCATED:
        # wall positions carry eliminated Dirichlet velocities, so coarse
        # velocities sit at the interior coarse pressures only
        coarse_v = coarse_p[1:-1].copy()
    else:
        coarse_v = 0.5 * (coarse_p[:-1] + coarse_p[1:])
    # eliminated Dirichlet end velocities sit half a spacing outside
    P_v = _linear_interp_matrix(v_pos, coarse_v, left_dirichlet=-0.5, right_dirichlet=n - 0.5)
    G = as_csr(P_p.T @ sys.B @ P_v)
    mass = (P_v.T @ P_v).toarray()
    s_hat = (G @ G.T).toarray()
    s = G.toarray() @ np.linalg.solve(mass, G.toarray().T)
    return 4.0 * s, 4.0 * s_hat


def eigenvector_sign_changes(matrix, which: int = 1) -> int:
    """Sign changes of the eigenvector at the ``which``-th smallest eigenvalue."""
    _, vecs = eigh_dense(matrix)
    v = vecs[:, which]
    signs = np.sign(v[np.abs(v) > 1e-12 * np.abs(v).max()])
    return int(np.sum(signs[1:] * signs[:-1] < 0))


def lump_abs(M) -> np.ndarray:
    """Diagonal lumping of the absolute values: row sums of |M|."""
    d = np.asarray(abs(as_csr(M)).sum(axis=1)).ravel()
    if np.any(d <= 0.0):
        raise ValueError("nonpositive lumped mass diagonal")
    return d


def infsup_estimate(hierarchy, m_v, m_p) -> InfSupReport:
    """Smallest nonzero singular values of the mass-scaled divergence per level.

    Mass matrices are projected level by level through the stored transfer
    blocks (velocity blockwise via the scalar component transfers).
    """
    n_vs0 = hierarchy.levels[0].n_vs
    m_v_scalar = as_csr(as_csr(m_v)[:n_vs0, :n_vs0])
    m_p = as_csr(m_p)
    report = InfSupReport(levels=[], rows=[], sigma_min=[], lumped_p=[], lumped_v=[])
    for k, lev in enumerate(hierarchy.levels):
        B = as_csr(lev.M[lev.n_v:, :lev.n_v])
        dv_scalar = lump_abs(m_v_scalar)
        dv = np.concatenate([dv_scalar, dv_scalar])
        dp = lump_abs(m_p)
        scaled = sp.diags(1.0 / np.sqrt(dp)) @ B @ sp.diags(1.0 / np.sqrt(dv))
        sigma = smallest_nonzero_singular_value(scaled, zero_tol=1e-10)
        report.levels.append(k)
        report.rows.append(B.shape[0])
        report.sigma_min.append(sigma)
        report.lumped_p.append(dp)
        report.lumped_v.append(dv)
        if lev.P_v is not None:
            m_v_scalar = as_csr(lev.R_v @ m_v_scalar @ lev.P_v)
            m_p = as_csr(lev.R_p @ m_p @ lev.P_p)
    return report
