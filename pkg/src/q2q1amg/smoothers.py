"""Saddle-point smoothers: Vanka, Braess-Sarazin, ILU(k) and Gauss-Seidel.

Every smoother is set up once against a level matrix and then applied
statelessly; ``apply(x, b, iterations)`` never mutates its inputs.
"""
from __future__ import annotations

import heapq
import logging

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .linalg import Permutation, as_csr, rcm_ordering

log = logging.getLogger(__name__)


def _split_blocks(M: sp.csr_matrix, n_v: int):
    A = as_csr(M[:n_v, :n_v])
    B = as_csr(M[n_v:, :n_v])
    Bt = as_csr(M[:n_v, n_v:])
    return A, B, Bt


class VankaSmoother:
    """Multiplicative overlapping block Gauss-Seidel over pressure patches.

    Block ``i`` couples pressure dof ``n_v + i`` with the velocity dofs in the
    structural support of row ``i`` of the divergence block; local saddle
    systems are LU-factorized once at setup.
    """

    def __init__(self, M: sp.csr_matrix, n_v: int, omega: float = 0.5):
        M = as_csr(M)
        self.M = M
        self.n_v = n_v
        self.omega = omega
        n_p = M.shape[0] - n_v
        B = as_csr(M[n_v:, :n_v])
        self.blocks = []
        self.factors = []
        self._rows_cols = []
        self._rows_vals = []
        self._rows_splits = []
        for i in range(n_p):
            vel = B.indices[B.indptr[i]:B.indptr[i + 1]]
            dofs = np.concatenate([vel, [n_v + i]]).astype(np.int64)
            self.blocks.append(dofs)
            local = M[dofs][:, dofs].toarray()
            try:
                lu, piv = scipy.linalg.lu_factor(local, check_finite=False)
            except scipy.linalg.LinAlgError as exc:
                raise ValueError(f"singular Vanka block at pressure dof {i}") from exc
            if np.any(np.abs(np.diag(lu)) < 1e-300):
                raise ValueError(f"singular Vanka block at pressure dof {i}")
            self.factors.append((lu, piv))
            rows = M[dofs]
            self._rows_cols.append(rows.indices)
            self._rows_vals.append(rows.data)
            self._rows_splits.append(rows.indptr[:-1])

    def apply(self, x, b, iterations: int = 1) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        b = np.asarray(b, dtype=float)
        omega = self.omega
        for _ in range(iterations):
            for dofs, factors, cols, vals, splits in zip(
                self.blocks, self.factors, self._rows_cols, self._rows_vals, self._rows_splits
            ):
                local_ax = np.add.reduceat(vals * x[cols], splits)
                r = b[dofs] - local_ax
                x[dofs] += omega * scipy.linalg.lu_solve(factors, r, check_finite=False)
        return x


class BraessSarazinSmoother:
    """Global relaxation with a scaled |row-sum| diagonal replacing the velocity block.

    Each step solves [[D/omega, B^T], [B, 0]] approximately by block
    elimination: a diagonal velocity solve, ``inner_sweeps`` Gauss-Seidel
    iterations on the explicit Schur complement omega * B D^-1 B^T (from a
    zero initial guess), then the velocity back-substitution.
    """

    def __init__(self, M: sp.csr_matrix, n_v: int, omega: float = 0.666, inner_sweeps: int = 5):
        M = as_csr(M)
        self.M = M
        self.n_v = n_v
        self.omega = omega
        self.inner_sweeps = inner_sweeps
        A, B, Bt = _split_blocks(M, n_v)
        d = np.asarray(abs(A).sum(axis=1)).ravel()
        if np.any(d <= 0.0):
            raise ValueError("velocity block has a zero absolute row sum")
        self.d = d
        self.B = B
        self.Bt = Bt
        self.schur = as_csr(B @ sp.diags(1.0 / d) @ B.T)
        self._gs = GaussSeidel(as_csr(self.schur * omega))

    def apply(self, x, b, iterations: int = 1) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        b = np.asarray(b, dtype=float)
        n_v = self.n_v
        for _ in range(iterations):
            r = b - self.M @ x
            r_u, r_p = r[:n_v], r[n_v:]
            yhat = self.omega * r_u / self.d
            rhs = self.B @ yhat - r_p
            q = self._gs.apply(np.zeros_like(rhs), rhs, self.inner_sweeps)
            x[:n_v] += yhat - self.omega * (self.Bt @ q) / self.d
            x[n_v:] += q
        return x


class GaussSeidel:
    """Forward Gauss-Seidel sweeps in ascending row order."""

    def __init__(self, A: sp.csr_matrix):
        A = as_csr(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("Gauss-Seidel requires a square matrix")
        diag = A.diagonal()
        if np.any(diag == 0.0):
            raise ValueError("zero diagonal entry in Gauss-Seidel")
        # plain python lists keep the row loop cheap at desk scale
        self._indptr = A.indptr.tolist()
        self._indices = A.indices.tolist()
        self._data = A.data.tolist()
        self._diag = diag.tolist()
        self.n = A.shape[0]

    def apply(self, x, b, iterations: int = 1) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        b = np.asarray(b, dtype=float)
        xs = x.tolist()
        bs = b.tolist()
        indptr, indices, data, diag = self._indptr, self._indices, self._data, self._diag
        for _ in range(iterations):
            for i in range(self.n):
                acc = bs[i]
                for k in range(indptr[i], indptr[i + 1]):
                    j = indices[k]
                    if j != i:
                        acc -= data[k] * xs[j]
                xs[i] = acc / diag[i]
        return np.asarray(xs)


def gauss_seidel(A, x, b, sweeps: int = 1) -> np.ndarray:
    return GaussSeidel(A).apply(x, b, sweeps)


class IluSmoother:
    """Level-of-fill incomplete LU with the full diagonal kept structurally.

    The zero pressure block would otherwise starve the factors of fill, so
    every diagonal position enters the level-0 pattern.  Ordering is either
    natural or reverse Cuthill-McKee.
    """

    def __init__(self, M: sp.csr_matrix, fill_level: int = 1, ordering: str = "natural"):
        M = as_csr(M)
        self.M = M
        if ordering == "rcm":
            self.perm = rcm_ordering(M)
        elif ordering == "natural":
            self.perm = Permutation.from_forward(np.arange(M.shape[0]))
        else:
            raise ValueError(f"unknown ILU ordering {ordering!r}")
        P = self.perm.apply(M)
        self.L, self.U, self.pivot_replacements = _ilu_k(P, fill_level)
        if self.pivot_replacements:
            log.warning("ILU replaced %d zero pivots", self.pivot_replacements)

    def solve(self, r) -> np.ndarray:
        rp = self.perm.permute_vector(np.asarray(r, dtype=float))
        y = _forward_unit_lower(self.L, rp)
        z = _backward_upper(self.U, y)
        return self.perm.unpermute_vector(z)

    def apply(self, x, b, iterations: int = 1) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        b = np.asarray(b, dtype=float)
        for _ in range(iterations):
            x += self.solve(b - self.M @ x)
        return x


def _ilu_k(A: sp.csr_matrix, fill_level: int):
    """Symbolic+numeric ILU(k); returns unit-lower L and upper U in CSR."""
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data
    u_cols = []   # per processed row: column ids >= row
    u_vals = []
    u_levs = []
    l_rows, l_cols, l_vals = [], [], []
    pivot_replacements = 0
    for i in range(n):
        cols = indices[indptr[i]:indptr[i + 1]]
        vals = data[indptr[i]:indptr[i + 1]]
        work = dict(zip(cols.tolist(), vals.tolist()))
        lev = dict.fromkeys(work, 0)
        if i not in work:
            work[i] = 0.0  # diagonal treated as structurally nonzero
            lev[i] = 0
        row_norm = max((abs(v) for v in work.values()), default=0.0)
        # eliminate lower columns in ascending order, including fill created
        # while this row is being processed
        pending = [c for c in work if c < i]
        heapq.heapify(pending)
        done = set()
        while pending:
            k = heapq.heappop(pending)
            if k in done:
                continue
            done.add(k)
            ucols_k, uvals_k, ulevs_k = u_cols[k], u_vals[k], u_levs[k]
            pivot = uvals_k[0]  # diagonal of row k leads its U segment
            factor = work[k] / pivot
            work[k] = factor
            lev_ik = lev[k]
            for c, v, lv in zip(ucols_k[1:], uvals_k[1:], ulevs_k[1:]):
                new_lev = lev_ik + lv + 1
                if c in work:
                    work[c] -= factor * v
                    if new_lev < lev[c]:
                        lev[c] = new_lev
                elif new_lev <= fill_level:
                    work[c] = -factor * v
                    lev[c] = new_lev
                    if c < i:
                        heapq.heappush(pending, c)
        dval = work[i]
        if dval == 0.0:
            dval = 1e-8 * (row_norm if row_norm > 0 else 1.0)
            work[i] = dval
            pivot_replacements += 1
        low = sorted(c for c in work if c < i)
        upp = sorted(c for c in work if c > i)
        l_rows.extend([i] * len(low))
        l_cols.extend(low)
        l_vals.extend(work[c] for c in low)
        u_cols.append([i] + upp)
        u_vals.append([work[i]] + [work[c] for c in upp])
        u_levs.append([lev[i]] + [lev[c] for c in upp])
    L = sp.coo_matrix((l_vals, (l_rows, l_cols)), shape=(n, n)).tocsr()
    L = as_csr(L + sp.identity(n, format="csr"))
    ur, uc, uv = [], [], []
    for i, (cols, vals) in enumerate(zip(u_cols, u_vals)):
        ur.extend([i] * len(cols))
        uc.extend(cols)
        uv.extend(vals)
    U = as_csr(sp.coo_matrix((uv, (ur, uc)), shape=(n, n)))
    return L, U, pivot_replacements


def _forward_unit_lower(L: sp.csr_matrix, b):
    x = np.array(b, dtype=float, copy=True)
    indptr, indices, data = L.indptr, L.indices, L.data
    xs = x.tolist()
    for i in range(L.shape[0]):
        acc = xs[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j < i:
                acc -= data[k] * xs[j]
        xs[i] = acc
    return np.asarray(xs)


def _backward_upper(U: sp.csr_matrix, b):
    indptr, indices, data = U.indptr, U.indices, U.data
    xs = np.array(b, dtype=float, copy=True).tolist()
    for i in range(U.shape[0] - 1, -1, -1):
        acc = xs[i]
        dval = None
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j == i:
                dval = data[k]
            elif j > i:
                acc -= data[k] * xs[j]
        xs[i] = acc / dval
    return np.asarray(xs)
