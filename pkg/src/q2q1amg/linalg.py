"""Sparse kernels, graph utilities, orderings and dense fallbacks.

Sparse matrices are scipy CSR throughout, kept in canonical form (sorted
column indices, duplicates summed).  Dense fallbacks are only meant for
desk-scale diagnostics (a few thousand rows at most).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

DENSE_FALLBACK_LIMIT = 5000


def as_csr(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical CSR matrix (sorted indices, summed dups)."""
    M = sp.csr_matrix(A)
    M.sum_duplicates()
    M.sort_indices()
    return M


def prune(A: sp.csr_matrix) -> sp.csr_matrix:
    """Drop explicitly stored zeros (tolerance 0)."""
    M = as_csr(A).copy()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def triple_product(R, A, P) -> sp.csr_matrix:
    """Sparse triple product ``R @ A @ P`` used for coarse-grid operators.

    The result is canonical CSR with structurally produced explicit zeros
    removed.  Raises ``ValueError`` on non-conformal dimensions.
    """
    R, A, P = as_csr(R), as_csr(A), as_csr(P)
    if R.shape[1] != A.shape[0] or A.shape[1] != P.shape[0]:
        raise ValueError(
            f"non-conformal triple product: R is {R.shape}, A is {A.shape}, P is {P.shape}"
        )
    return prune((R @ A) @ P)


@dataclass(frozen=True)
class Permutation:
    """Row/column reordering: ``forward[new] = old`` and ``inverse[old] = new``."""

    forward: np.ndarray
    inverse: np.ndarray

    def __len__(self):
        return len(self.forward)

    def apply(self, A: sp.csr_matrix) -> sp.csr_matrix:
        """Symmetric permutation ``A[forward][:, forward]``."""
        A = as_csr(A)
        return as_csr(A[self.forward][:, self.forward])

    def permute_vector(self, v):
        return np.asarray(v)[self.forward]

    def unpermute_vector(self, v):
        return np.asarray(v)[self.inverse]

    @staticmethod
    def from_forward(forward) -> "Permutation":
        forward = np.asarray(forward, dtype=np.int64)
        inverse = np.empty_like(forward)
        inverse[forward] = np.arange(len(forward))
        return Permutation(forward, inverse)


class Graph:
    """Undirected adjacency in CSR layout (symmetrized pattern, no self loops)."""

    __slots__ = ("n", "indptr", "indices")

    def __init__(self, n, indptr, indices):
        self.n = n
        self.indptr = indptr
        self.indices = indices

    @staticmethod
    def from_matrix(A) -> "Graph":
        A = as_csr(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"graph requires a square matrix, got {A.shape}")
        pattern = (A != 0).astype(np.int8)
        sym = ((pattern + pattern.T) != 0).astype(np.int8).tocsr()
        sym.setdiag(0)
        sym.eliminate_zeros()
        sym.sort_indices()
        return Graph(sym.shape[0], sym.indptr.copy(), sym.indices.copy())

    def neighbors(self, v) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)


def bfs_within(g: Graph, source: int, max_dist: int):
    """Breadth-first search truncated at ``max_dist`` edge traversals.

    Returns ``(vertices, dists)`` in visit order; the source comes first with
    distance 0.
    """
    if source < 0 or source >= g.n:
        raise ValueError(f"vertex {source} outside graph of size {g.n}")
    if max_dist < 0:
        raise ValueError("max_dist must be nonnegative")
    dist = {source: 0}
    verts = [source]
    dists = [0]
    frontier = deque([source])
    indptr, indices = g.indptr, g.indices
    while frontier:
        v = frontier.popleft()
        dv = dist[v]
        if dv == max_dist:
            continue
        for w in indices[indptr[v]:indptr[v + 1]]:
            w = int(w)
            if w not in dist:
                dist[w] = dv + 1
                verts.append(w)
                dists.append(dv + 1)
                frontier.append(w)
    return np.asarray(verts, dtype=np.int64), np.asarray(dists, dtype=np.int64)


def bfs_distances(g: Graph, source: int, max_dist: int) -> dict:
    """Exact graph distances of all vertices within ``max_dist`` of ``source``."""
    verts, dists = bfs_within(g, source, max_dist)
    return {int(v): int(d) for v, d in zip(verts, dists)}


def rcm_ordering(A) -> Permutation:
    """Reverse Cuthill-McKee ordering of the symmetrized graph of ``A``.

    Each connected component is seeded at its minimum-degree vertex of lowest
    index, traversed breadth-first with neighbors sorted by (degree, index),
    and reversed component-by-component.  Components appear in ascending order
    of their seed, so edge-free matrices map to the identity permutation.
    """
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("rcm_ordering requires a square matrix")
    n = A.shape[0]
    if n == 0:
        return Permutation.from_forward(np.empty(0, dtype=np.int64))
    g = Graph.from_matrix(A)
    deg = g.degrees()
    visited = np.zeros(n, dtype=bool)
    order = []
    scan = 0
    while len(order) < n:
        while visited[scan]:
            scan += 1
        # component seed: lowest index among minimum-degree unvisited vertices
        comp_best = scan
        stack = [scan]
        visited_probe = {scan}
        while stack:
            v = stack.pop()
            if deg[v] < deg[comp_best] or (deg[v] == deg[comp_best] and v < comp_best):
                comp_best = v
            for w in g.neighbors(v):
                w = int(w)
                if w not in visited_probe:
                    visited_probe.add(w)
                    stack.append(w)
        component = []
        visited[comp_best] = True
        queue = deque([comp_best])
        while queue:
            v = queue.popleft()
            component.append(v)
            nbrs = [int(w) for w in g.neighbors(v) if not visited[w]]
            nbrs.sort(key=lambda w: (deg[w], w))
            for w in nbrs:
                visited[w] = True
                queue.append(w)
        order.extend(reversed(component))
    return Permutation.from_forward(np.asarray(order, dtype=np.int64))


def bandwidth(A) -> int:
    """Maximum ``|i - j|`` over stored nonzeros (0 for diagonal/empty)."""
    A = prune(A).tocoo()
    if A.nnz == 0:
        return 0
    return int(np.max(np.abs(A.row - A.col)))


def lu_factor_dense(A):
    """Dense LU with partial pivoting; raises on exactly singular matrices."""
    A = np.asarray(A, dtype=float)
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    if np.any(np.diag(lu) == 0.0):
        raise np.linalg.LinAlgError("singular matrix in dense LU")
    return lu, piv


def lu_solve_dense(factors, b):
    return scipy.linalg.lu_solve(factors, b, check_finite=False)


def solve_dense(A, b):
    return lu_solve_dense(lu_factor_dense(A), b)


def eigh_dense(A):
    """Eigenvalues/vectors of a symmetric dense matrix, ascending."""
    return np.linalg.eigh(np.asarray(A, dtype=float))


def smallest_nonzero_singular_value(A, zero_tol: float = 1e-10) -> float:
    """Smallest singular value above ``zero_tol * sigma_max``.

    Accepts dense arrays or desk-scale sparse matrices (converted densely up
    to 5000 rows).  Raises ``ValueError`` when every singular value falls
    below the threshold.
    """
    if sp.issparse(A):
        if min(A.shape) > DENSE_FALLBACK_LIMIT:
            raise ValueError(
                f"matrix of shape {A.shape} exceeds the dense SVD fallback limit"
            )
        A = A.toarray()
    A = np.asarray(A, dtype=float)
    s = np.linalg.svd(A, compute_uv=False)
    smax = s[0] if s.size else 0.0
    kept = s[s > zero_tol * smax]
    if smax == 0.0 or kept.size == 0:
        raise ValueError("numerically zero matrix: no singular value above threshold")
    return float(kept.min())
