"""Multilevel setup and V-cycle application for the saddle-point AMG.

Each level couples a pressure coarsening with a consistent velocity
coarsening (co-located points plus mid-points), builds EMIN transfers per
block, and projects the full operator Petrov-Galerkin style.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .coarsen import (
    AuxBlocks,
    CoarsenParams,
    filter_matrix,
    find_coarse_pressures,
    find_velocity_cpoints,
    pressure_pattern,
    velocity_pattern_scalar,
)
from .emin import A_NORM, NORMAL_NORM, emin_prolongator, emin_restriction
from .linalg import Graph, as_csr, triple_product
from .smoothers import BraessSarazinSmoother, IluSmoother, VankaSmoother

log = logging.getLogger(__name__)

VANKA = "vanka"
BRAESS_SARAZIN = "braess-sarazin"
ILU = "ilu"
SMOOTHERS = (VANKA, BRAESS_SARAZIN, ILU)


@dataclass
class SmootherSpec:
    kind: str = VANKA
    pre: int = 1
    post: int = 1
    vanka_omega: float = 0.5
    bs_omega: float = 0.666
    bs_inner_sweeps: int = 5
    ilu_fill: int = 1
    ilu_ordering: str = "natural"

    def __post_init__(self):
        if self.kind not in SMOOTHERS:
            raise ValueError(f"unknown smoother {self.kind!r}; expected one of {SMOOTHERS}")

    def label(self):
        return f"{self.kind} ({self.pre},{self.post})"


@dataclass
class AmgParams:
    coarsen: CoarsenParams = field(default_factory=CoarsenParams)
    emin_iterations: int = 1
    petrov_galerkin: bool = False
    coarse_threshold: int = 250
    max_levels: int = 20
    coarse_vanka_sweeps: int = 20
    coarse_vanka_omega: float = 0.5
    smoother: SmootherSpec = field(default_factory=SmootherSpec)


@dataclass
class Level:
    M: sp.csr_matrix
    n_v: int
    n_p: int
    coords_v: np.ndarray
    coords_p: np.ndarray
    colocation: np.ndarray
    P: sp.csr_matrix | None = None
    R: sp.csr_matrix | None = None
    P_v: sp.csr_matrix | None = None   # scalar velocity block
    P_p: sp.csr_matrix | None = None
    R_v: sp.csr_matrix | None = None
    R_p: sp.csr_matrix | None = None
    splitting: object = None
    aux: AuxBlocks | None = None
    pattern_p: sp.csr_matrix | None = None
    pattern_v: sp.csr_matrix | None = None
    emin_energies_p: list | None = None
    emin_energies_v: list | None = None
    smoother: object = None
    nodal_raw: sp.csr_matrix | None = None  # pre-BC scalar velocity operator (finest only)

    @property
    def dofs(self):
        return self.M.shape[0]

    @property
    def n_vs(self):
        return self.n_v // 2


@dataclass
class Hierarchy:
    levels: list
    params: AmgParams
    pressure_nullspace: bool
    coarse_solver: object = None

    def as_preconditioner(self):
        def apply(v):
            return vcycle_apply(self, v, np.zeros_like(v))

        return apply

    def summary_rows(self):
        rows = []
        n0 = self.levels[0].M.shape[0]
        for k, lev in enumerate(self.levels):
            prev = self.levels[k - 1].dofs if k else lev.dofs
            rows.append(
                {
                    "level": k,
                    "rows": lev.dofs,
                    "nnz": lev.M.nnz,
                    "n_v": lev.n_v,
                    "n_p": lev.n_p,
                    "coarsening_ratio": round(prev / lev.dofs, 3),
                }
            )
        del n0
        return rows

    def summary(self) -> str:
        lines = ["level       rows        nnz      n_v      n_p   ratio"]
        for r in self.summary_rows():
            lines.append(
                f"{r['level']:>5} {r['rows']:>10} {r['nnz']:>10} {r['n_v']:>8} "
                f"{r['n_p']:>8} {r['coarsening_ratio']:>7.3f}"
            )
        lines.append(f"operator complexity: {operator_complexity(self):.3f}")
        return "\n".join(lines)


def project_coordinates(coords, coarse_vertices) -> np.ndarray:
    """Coarse coordinates by injection at the selected vertices."""
    return np.asarray(coords, dtype=float)[np.asarray(coarse_vertices, dtype=np.int64)].copy()


def _build_level_transfers(level: Level, params: AmgParams):
    """Construct P/R blocks for one level; returns the next Level or None on stagnation."""
    n_vs, n_v, n_p = level.n_vs, level.n_v, level.n_p
    M = level.M
    a_nodal = level.nodal_raw if level.nodal_raw is not None else as_csr(M[:n_vs, :n_vs])
    B = as_csr(M[n_v:, :n_v])
    aux = AuxBlocks(
        A_v_nodal=filter_matrix(a_nodal, params.coarsen.tau1, params.coarsen.lumping),
        A_p=filter_matrix(as_csr(B @ B.T), params.coarsen.tau1, params.coarsen.lumping),
        tau1=params.coarsen.tau1,
    )
    level.aux = aux
    splitting, _ = find_coarse_pressures(aux.A_p, level.coords_p, params.coarsen)
    level.splitting = splitting
    if len(splitting.C) >= n_p:
        log.warning("coarsening stagnated at %d pressures; stopping here", n_p)
        return None
    norm = NORMAL_NORM if params.petrov_galerkin else A_NORM
    pattern_p = pressure_pattern(splitting, n_p)
    level.pattern_p = pattern_p
    res_p = emin_prolongator(aux.A_p, pattern_p, params.emin_iterations, norm)
    level.emin_energies_p = res_p.energies

    vgraph = Graph.from_matrix(aux.A_v_nodal)
    cbar, cv = find_velocity_cpoints(
        splitting, level.coords_p, level.colocation, params.coarsen, vgraph
    )
    pattern_v = velocity_pattern_scalar(vgraph, cv)
    level.pattern_v = pattern_v
    res_v = emin_prolongator(aux.A_v_nodal, pattern_v, params.emin_iterations, norm)
    level.emin_energies_v = res_v.energies

    level.P_p, level.P_v = res_p.P, res_v.P
    if params.petrov_galerkin:
        level.R_p = emin_restriction(aux.A_p, res_p.P, params.emin_iterations, pattern_p).P
        level.R_v = emin_restriction(aux.A_v_nodal, res_v.P, params.emin_iterations, pattern_v).P
    else:
        level.R_p = as_csr(res_p.P.T)
        level.R_v = as_csr(res_v.P.T)
    level.P = as_csr(sp.block_diag([level.P_v, level.P_v, level.P_p], format="csr"))
    level.R = as_csr(sp.block_diag([level.R_v, level.R_v, level.R_p], format="csr"))

    M_next = triple_product(level.R, M, level.P)
    cv_index = {v: k for k, v in enumerate(cv)}
    colocation_next = np.array(
        [cv_index[int(level.colocation[c])] for c in splitting.C], dtype=np.int64
    )
    return Level(
        M=M_next,
        n_v=2 * len(cv),
        n_p=len(splitting.C),
        coords_v=project_coordinates(level.coords_v, cv),
        coords_p=project_coordinates(level.coords_p, splitting.C),
        colocation=colocation_next,
    )


def build_transfers(sys, coords_v, coords_p, params: AmgParams) -> Hierarchy:
    """Multilevel transfer construction without smoother setup."""
    finest = Level(
        M=sys.full_matrix(),
        n_v=sys.n_v,
        n_p=sys.n_p,
        coords_v=np.asarray(coords_v, dtype=float),
        coords_p=np.asarray(coords_p, dtype=float),
        colocation=np.asarray(sys.colocation, dtype=np.int64),
        nodal_raw=getattr(sys, "A_nodal_raw", None),
    )
    levels = [finest]
    while levels[-1].dofs > params.coarse_threshold and len(levels) < params.max_levels:
        nxt = _build_level_transfers(levels[-1], params)
        if nxt is None:
            break
        levels.append(nxt)
    return Hierarchy(levels=levels, params=params, pressure_nullspace=sys.pressure_nullspace)


def _make_smoother(spec: SmootherSpec, M, n_v):
    if spec.kind == VANKA:
        return VankaSmoother(M, n_v, omega=spec.vanka_omega)
    if spec.kind == BRAESS_SARAZIN:
        return BraessSarazinSmoother(M, n_v, omega=spec.bs_omega, inner_sweeps=spec.bs_inner_sweeps)
    return IluSmoother(M, fill_level=spec.ilu_fill, ordering=spec.ilu_ordering)


class _CoarseVanka:
    def __init__(self, M, n_v, sweeps, omega):
        self.vanka = VankaSmoother(M, n_v, omega=omega)
        self.sweeps = sweeps

    def solve(self, b, x0):
        return self.vanka.apply(x0, b, self.sweeps)


class _CoarseLu:
    def __init__(self, M):
        self.factors = scipy.linalg.lu_factor(M.toarray(), check_finite=False)

    def solve(self, b, x0):
        return scipy.linalg.lu_solve(self.factors, b, check_finite=False)


def attach_smoothers(hierarchy: Hierarchy, spec: SmootherSpec) -> Hierarchy:
    """Build level smoothers and the coarse solver for an existing hierarchy."""
    hierarchy.params.smoother = spec
    for lev in hierarchy.levels[:-1]:
        lev.smoother = _make_smoother(spec, lev.M, lev.n_v)
    coarsest = hierarchy.levels[-1]
    if len(hierarchy.levels) == 1:
        coarsest.smoother = None
    if hierarchy.pressure_nullspace:
        hierarchy.coarse_solver = _CoarseVanka(
            coarsest.M,
            coarsest.n_v,
            hierarchy.params.coarse_vanka_sweeps,
            hierarchy.params.coarse_vanka_omega,
        )
    else:
        hierarchy.coarse_solver = _CoarseLu(coarsest.M)
    return hierarchy


def setup_hierarchy(sys, coords_v, coords_p, params: AmgParams | None = None) -> Hierarchy:
    """Full AMG setup: transfers plus smoothers, per the configured parameters."""
    params = params or AmgParams()
    h = build_transfers(sys, coords_v, coords_p, params)
    return attach_smoothers(h, params.smoother)


def vcycle_apply(h: Hierarchy, b, x0) -> np.ndarray:
    """One V(pre, post) cycle for the configured smoother counts."""
    spec = h.params.smoother

    def cycle(k, bk, xk):
        level = h.levels[k]
        if k == len(h.levels) - 1:
            return h.coarse_solver.solve(bk, xk)
        x = level.smoother.apply(xk, bk, spec.pre)
        r = bk - level.M @ x
        ec = cycle(k + 1, level.R @ r, np.zeros(h.levels[k + 1].dofs))
        x = x + level.P @ ec
        return level.smoother.apply(x, bk, spec.post)

    return cycle(0, np.asarray(b, dtype=float), np.asarray(x0, dtype=float))


def operator_complexity(h: Hierarchy) -> float:
    """Sum of level-operator nonzeros relative to the finest level."""
    nnz0 = h.levels[0].M.nnz
    return float(sum(lev.M.nnz for lev in h.levels) / nnz0)
