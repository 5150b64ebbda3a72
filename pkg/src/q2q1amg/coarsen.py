"""Coarse-point selection and grid-transfer sparsity patterns.

Pressures are coarsened greedily to pairwise graph distance four on the
filtered pressure-Poisson graph, with harmonic/graph-distance heuristics
steering the seed order and a post-pass that promotes poorly covered fine
vertices.  Coarse velocities are the co-located partners of the coarse
pressures plus mid-points between them.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import Graph, as_csr, bfs_within, prune

log = logging.getLogger(__name__)

UNASSIGNED, COARSE, FINE = 0, 1, 2


@dataclass
class CoarsenParams:
    tau1: float = 0.06
    tau2: float = math.sqrt(1.5e-3)
    omega_g: float = 0.8
    omega_o: float = 0.5
    extra_h2_threshold: float = 2.6
    extra_o_threshold: float = -0.2
    lumping: str = "rowsum"  # "rowsum" preserves row sums; "zerosum" forces them to zero


@dataclass
class AuxBlocks:
    """Filtered auxiliary operators driving coarsening and transfer energies."""

    A_v_nodal: sp.csr_matrix
    A_p: sp.csr_matrix
    tau1: float


@dataclass
class HeuristicState:
    h1: np.ndarray  # running harmonic average of Euclidean distances to nearby C-points
    h2: np.ndarray  # running average of graph distances


@dataclass
class CfSplitting:
    C: list              # coarse vertices in insertion order
    F: set
    S: list              # S[i] = coarse vertices within graph distance 3 of i
    coarse_index: dict = field(default_factory=dict)

    def finalize(self):
        self.coarse_index = {c: k for k, c in enumerate(self.C)}
        return self


def filter_matrix(M, tau, lumping="rowsum") -> sp.csr_matrix:
    """Drop off-diagonal entries with |m_ij| <= tau * sqrt(|m_ii m_jj|).

    Dropped mass is added back to the diagonal ("rowsum") so row sums are
    preserved; "zerosum" subtracts the kept row sum from the diagonal
    instead.  Entries whose drop test touches a zero diagonal are kept.
    """
    if lumping not in ("rowsum", "zerosum"):
        raise ValueError(f"unknown lumping mode {lumping!r}")
    M = as_csr(M).tocoo()
    if M.shape[0] != M.shape[1]:
        raise ValueError("filter_matrix requires a square matrix")
    d = as_csr(M).diagonal()
    offdiag = M.row != M.col
    zero_diag = (d[M.row] == 0.0) | (d[M.col] == 0.0)
    if np.any(offdiag & zero_diag & (M.data != 0.0)):
        log.warning("zero diagonal encountered in drop test; affected entries kept")
    thresh = tau * np.sqrt(np.abs(d[M.row] * d[M.col]))
    drop = offdiag & ~zero_diag & (np.abs(M.data) <= thresh)
    kept = sp.coo_matrix(
        (M.data[~drop], (M.row[~drop], M.col[~drop])), shape=M.shape
    )
    out = as_csr(kept)
    if lumping == "rowsum":
        lump = np.bincount(M.row[drop], weights=M.data[drop], minlength=M.shape[0])
        out = as_csr(out + sp.diags(lump))
    else:
        rowsums = np.asarray(out.sum(axis=1)).ravel()
        out = as_csr(out - sp.diags(rowsums) + sp.diags(out.diagonal()))
        # diag_new = diag_kept - rowsum_kept; off-diagonals untouched
    return prune(out)


def form_aux_blocks(sys, tau1: float, lumping: str = "rowsum") -> AuxBlocks:
    """Filtered scalar velocity matrix and filtered pressure Poisson Z = B Bt."""
    n_vs = sys.n_vs
    a_nodal = as_csr(sys.A[:n_vs, :n_vs])
    z = as_csr(sys.B @ sys.B.T)
    return AuxBlocks(
        A_v_nodal=filter_matrix(a_nodal, tau1, lumping),
        A_p=filter_matrix(z, tau1, lumping),
        tau1=tau1,
    )


def initial_h1(coords) -> float:
    coords = np.asarray(coords, dtype=float)
    span = coords.max(axis=0) - coords.min(axis=0) if len(coords) else np.zeros(2)
    return 1e4 * float(np.linalg.norm(span))


def update_heuristics(state: HeuristicState, S, coords, new_c, reach_verts, reach_dists):
    """Fold a freshly selected C-point into h1/h2 for every vertex within distance 4.

    ``reach_verts``/``reach_dists`` come from a radius-4 BFS around ``new_c``.
    h1 takes a harmonic-pair update with the Euclidean distance; h2 a running
    mean of graph distances weighted by the coverage count |S_j|.
    """
    h1, h2 = state.h1, state.h2
    xk = coords[new_c]
    for j, dj in zip(reach_verts, reach_dists):
        e = float(np.hypot(coords[j, 0] - xk[0], coords[j, 1] - xk[1]))
        if e == 0.0:
            h1[j] = 0.0
        else:
            h1[j] = 2.0 * h1[j] * e / (h1[j] + e)
        m = len(S[j])
        if m > 0:  # uncovered distance-4 vertices keep h2 until first coverage
            h2[j] = (h2[j] * (m - 1) + dj) / m
    return state


def _mark_coarse(g, status, S, k, F_set):
    """Classify ``k`` coarse; mark its distance-3 ball fine; return the radius-4 ball."""
    verts, dists = bfs_within(g, k, 4)
    status[k] = COARSE
    for j, dj in zip(verts, dists):
        if dj <= 3:
            S[j].add(k)
            if j != k and status[j] == UNASSIGNED:
                status[j] = FINE
                F_set.add(j)
    return verts, dists


def find_coarse_pressures(A_p, coords, params: CoarsenParams):
    """Greedy distance-4 C/F splitting of the pressure graph (with extra-point pass).

    Returns the final splitting and the heuristic state.  Disconnected
    components are handled by reseeding at the lowest unassigned index.
    """
    A_p = as_csr(A_p)
    coords = np.asarray(coords, dtype=float)
    if A_p.shape[0] != coords.shape[0]:
        raise ValueError("coordinate array does not match the matrix size")
    g = Graph.from_matrix(A_p)
    n = g.n
    state = HeuristicState(h1=np.full(n, initial_h1(coords)), h2=np.zeros(n))
    if n == 0:
        return CfSplitting(C=[], F=set(), S=[]).finalize(), state
    status = np.zeros(n, dtype=np.int8)
    S = [set() for _ in range(n)]
    C_list, F_set = [], set()
    cand = set()
    scan = 0
    k = 0  # lowest-index seed
    while True:
        C_list.append(k)
        cand.discard(k)
        verts, dists = _mark_coarse(g, status, S, k, F_set)
        cand.difference_update(int(v) for v, d in zip(verts, dists) if d <= 3)
        cand.update(int(v) for v, d in zip(verts, dists) if d == 4 and status[v] == UNASSIGNED)
        update_heuristics(state, S, coords, k, verts, dists)
        if cand:
            k = min(cand, key=lambda j: (state.h1[j], j))
        else:
            while scan < n and status[scan] != UNASSIGNED:
                scan += 1
            if scan == n:
                break
            k = scan
    splitting = CfSplitting(C=C_list, F=F_set, S=S).finalize()
    find_extra_dist3_cpoints(splitting, state, coords, g, params)
    return splitting, state


def find_extra_dist3_cpoints(splitting, state, coords, g: Graph, params: CoarsenParams):
    """Promote poorly covered F-vertices (|S| = 1, then 2) to coarse points.

    Candidates are ranked by a blend of normalized h2/h1 (plus a collinearity
    penalty for |S| = 2) and accepted when the coverage distance is still
    large and no existing C-point sits within graph distance 2.
    """
    h1, h2 = state.h1, state.h2
    coarse_set = set(splitting.C)
    for t in (1, 2):
        cand = sorted(j for j in splitting.F if len(splitting.S[j]) == t)
        if not cand:
            continue
        h1max = max(h1[j] for j in cand)
        h2max = max(h2[j] for j in cand)
        if h1max == 0.0 or h2max == 0.0:
            continue
        score = {}
        orient = {}
        for j in cand:
            h = -(params.omega_g * h2[j] / h2max + (1 - params.omega_g) * h1[j] / h1max)
            if t == 1:
                o = 1.0
            else:
                j1, j2 = sorted(splitting.S[j])
                v1 = coords[j1] - coords[j]
                v2 = coords[j2] - coords[j]
                n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
                o = 1.0 if n1 == 0.0 or n2 == 0.0 else float(v1 @ v2) / (n1 * n2)
                h = -(params.omega_o * o - (1 - params.omega_o) * h)
            score[j] = h
            orient[j] = o
        cand.sort(key=lambda j: (score[j], j))
        for k in cand:
            if len(splitting.S[k]) != t:
                continue  # coverage improved by an earlier promotion this pass
            if h2[k] < params.extra_h2_threshold or orient[k] <= params.extra_o_threshold:
                continue
            near, _ = bfs_within(g, k, 2)
            if any(int(j) in coarse_set for j in near):
                continue  # keep promoted C-points at graph distance >= 3
            splitting.F.discard(k)
            splitting.C.append(k)
            coarse_set.add(k)
            verts, dists = bfs_within(g, k, 4)
            for j, dj in zip(verts, dists):
                if dj <= 3:
                    splitting.S[j].add(k)
            update_heuristics(state, splitting.S, coords, k, verts, dists)
    splitting.finalize()
    return splitting


def pressure_pattern(splitting: CfSplitting, n: int | None = None) -> sp.csr_matrix:
    """Binary interpolation pattern: row i covers the coarse points of S_i.

    Coarse rows inject (a single one in their own column).
    """
    n = n if n is not None else len(splitting.F) + len(splitting.C)
    idx = splitting.coarse_index
    rows, cols = [], []
    coarse = set(splitting.C)
    for i in range(n):
        if i in coarse:
            rows.append(i)
            cols.append(idx[i])
            continue
        if not splitting.S[i]:
            raise ValueError(f"uncovered fine vertex {i}: empty coverage set")
        for c in sorted(splitting.S[i]):
            rows.append(i)
            cols.append(idx[c])
    data = np.ones(len(rows))
    return as_csr(sp.coo_matrix((data, (rows, cols)), shape=(n, len(splitting.C))))


def find_velocity_cpoints(splitting, coords_p, colocation, params, velocity_graph: Graph):
    """Coarse velocity node set: co-located coarse pressures plus mid-points.

    Mid-points follow the barycenter-of-coverage rule, processed in
    descending |S_i| order; the scalar velocity set is then augmented so no
    fine node sits more than graph distance 3 from every coarse node.
    Returns ``(cbar_pressures, coarse_velocity_nodes)`` in insertion order.
    """
    coords_p = np.asarray(coords_p, dtype=float)
    cbar = list(splitting.C)
    cbar_set = set(cbar)
    rows_of = {}
    f_sorted = sorted(splitting.F)
    s_frozen = {j: frozenset(splitting.S[j]) for j in f_sorted}
    for j in f_sorted:
        for c in s_frozen[j]:
            rows_of.setdefault(c, []).append(j)
    order = sorted(f_sorted, key=lambda i: (-len(s_frozen[i]), i))
    for i in order:
        s_i = s_frozen[i]
        x_target = coords_p[sorted(s_i)].mean(axis=0)
        anchor = min(s_i)
        b_i = [j for j in rows_of.get(anchor, ()) if s_i <= s_frozen[j]]
        box = coords_p[b_i]
        t_i = math.sqrt(float(np.sum(box.max(axis=0) - box.min(axis=0))))
        dists = np.linalg.norm(box - x_target, axis=1)
        m = b_i[int(np.lexsort((b_i, dists))[0])]
        nearby = [j for j in b_i if j in cbar_set]
        if nearby:
            gap = min(float(np.linalg.norm(coords_p[j] - coords_p[m])) for j in nearby)
            if gap < params.tau2 * t_i:
                continue
        if m not in cbar_set:
            cbar_set.add(m)
            cbar.append(m)
    cv = []
    cv_seen = set()
    for p in cbar:
        v = int(colocation[p])
        if v not in cv_seen:
            cv_seen.add(v)
            cv.append(v)
    # promote fine velocity nodes left uncovered at graph distance > 3
    covered = np.zeros(velocity_graph.n, dtype=bool)
    for v in cv:
        verts, _ = bfs_within(velocity_graph, v, 3)
        covered[verts] = True
    for v in range(velocity_graph.n):
        if not covered[v]:
            cv.append(v)
            verts, _ = bfs_within(velocity_graph, v, 3)
            covered[verts] = True
    return cbar, cv


def velocity_pattern_scalar(velocity_graph: Graph, coarse_nodes) -> sp.csr_matrix:
    """Scalar nodal pattern: ones where a fine node is within distance 3 of a coarse node."""
    if not len(coarse_nodes):
        raise ValueError("empty coarse velocity set")
    rows, cols = [], []
    for col, c in enumerate(coarse_nodes):
        verts, _ = bfs_within(velocity_graph, int(c), 3)
        rows.extend(int(v) for v in verts)
        cols.extend([col] * len(verts))
    pattern = as_csr(
        sp.coo_matrix(
            (np.ones(len(rows)), (rows, cols)),
            shape=(velocity_graph.n, len(coarse_nodes)),
        )
    )
    pattern.data[:] = 1.0  # overlapping balls must not accumulate
    empty = np.flatnonzero(np.diff(pattern.indptr) == 0)
    if empty.size:
        raise ValueError(f"fine velocity node {empty[0]} has no coarse node within distance 3")
    return pattern


def velocity_pattern(A_v_nodal, coarse_nodes) -> sp.csr_matrix:
    """Component-block pattern: x-velocities interpolate only from coarse x-velocities."""
    g = Graph.from_matrix(A_v_nodal)
    scalar = velocity_pattern_scalar(g, coarse_nodes)
    return as_csr(sp.block_diag([scalar, scalar], format="csr"))
