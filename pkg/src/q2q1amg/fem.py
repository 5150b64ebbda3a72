"""Structured Q2-Q1 meshes and assembly of Stokes/Oseen saddle-point systems.

Velocity uses biquadratic elements, pressure bilinear, on uniform
quadrilateral grids.  Unknowns are ordered x-velocities, y-velocities,
pressures; Dirichlet velocity rows are kept in the system as identity rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linalg import as_csr

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2

LID_CAVITY = "lid_cavity"
BACKWARD_STEP = "backward_step"
OBSTACLE = "obstacle"
DOMAINS = (LID_CAVITY, BACKWARD_STEP, OBSTACLE)


@dataclass
class ProblemSpec:
    """Problem selection: geometry, refinement and viscosity.

    ``refinement`` counts elements per side for the lid cavity and elements
    per unit length for the channel problems.
    """

    domain: str
    refinement: int
    viscosity: float = 1.0
    channel_length: float | None = None
    obstacle_box: tuple | None = None
    reynolds_meta: tuple | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}; expected one of {DOMAINS}")
        if self.refinement < 1:
            raise ValueError("refinement must be >= 1")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")

    def resolved_length(self) -> float:
        if self.channel_length is not None:
            return float(self.channel_length)
        if self.domain == BACKWARD_STEP:
            return 5.0 if self.viscosity >= 0.01 else 10.0
        return 8.0


@dataclass
class Mesh:
    q2_coords: np.ndarray
    q1_coords: np.ndarray
    elements_q2: np.ndarray  # (nel, 9), tensor-ordered
    elements_q1: np.ndarray  # (nel, 4), counterclockwise from lower-left
    boundary_q2: np.ndarray  # INTERIOR / DIRICHLET / NEUMANN per velocity node
    colocation: np.ndarray   # pressure node -> co-located velocity node
    hx: float
    hy: float

    @property
    def n_q2(self):
        return self.q2_coords.shape[0]

    @property
    def n_q1(self):
        return self.q1_coords.shape[0]

    @property
    def dofs(self):
        return 2 * self.n_q2 + self.n_q1


@dataclass
class BoundaryCondition:
    """Dirichlet velocity data, both components per tagged node (Neumann data is zero)."""

    values: np.ndarray  # (n_q2, 2); meaningful only at Dirichlet nodes


@dataclass
class SaddleSystem:
    A: sp.csr_matrix           # velocity block, 2n x 2n
    B: sp.csr_matrix           # divergence block, n_p x 2n
    f_u: np.ndarray
    f_p: np.ndarray
    colocation: np.ndarray
    pressure_nullspace: bool
    dirichlet: np.ndarray | None = None  # bool over the 2n velocity dofs
    # scalar velocity operator before boundary treatment; keeps boundary
    # vertices connected in the coarsening graph
    A_nodal_raw: sp.csr_matrix | None = field(default=None, repr=False)
    _full: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n_v(self):
        return self.A.shape[0]

    @property
    def n_vs(self):
        return self.A.shape[0] // 2

    @property
    def n_p(self):
        return self.B.shape[0]

    @property
    def dofs(self):
        return self.n_v + self.n_p

    def full_matrix(self) -> sp.csr_matrix:
        if self._full is None:
            self._full = as_csr(sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr"))
        return self._full

    def full_rhs(self) -> np.ndarray:
        return np.concatenate([self.f_u, self.f_p])


class PicardError(RuntimeError):
    """Picard iteration did not reach the nonlinear tolerance."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


# ---------------------------------------------------------------------------
# reference element


@lru_cache(maxsize=None)
def _reference_tables():
    g = np.sqrt(3.0 / 5.0)
    pts1 = np.array([-g, 0.0, g])
    wts1 = np.array([5.0, 8.0, 5.0]) / 9.0
    xi = np.repeat(pts1, 3)
    eta = np.tile(pts1, 3)
    w = np.repeat(wts1, 3) * np.tile(wts1, 3)

    def n2(t):
        return np.stack([t * (t - 1) / 2, 1 - t * t, t * (t + 1) / 2], axis=-1)

    def dn2(t):
        return np.stack([t - 0.5, -2 * t, t + 0.5], axis=-1)

    nx, ny = n2(xi), n2(eta)
    dx, dy = dn2(xi), dn2(eta)
    # Q2 tensor ordering: local id = 3*b + a for (a, b) in x/y
    phi = np.einsum("qa,qb->qba", nx, ny).reshape(9, 9)
    dphi_xi = np.einsum("qa,qb->qba", dx, ny).reshape(9, 9)
    dphi_eta = np.einsum("qa,qb->qba", nx, dy).reshape(9, 9)
    # Q1 counterclockwise corner ordering
    lx = np.stack([(1 - xi) / 2, (1 + xi) / 2], axis=-1)
    ly = np.stack([(1 - eta) / 2, (1 + eta) / 2], axis=-1)
    psi = np.stack(
        [lx[:, 0] * ly[:, 0], lx[:, 1] * ly[:, 0], lx[:, 1] * ly[:, 1], lx[:, 0] * ly[:, 1]],
        axis=-1,
    )
    return w, phi, dphi_xi, dphi_eta, psi


def element_matrices(hx: float, hy: float) -> dict:
    """Exact (3x3 Gauss) element matrices on an hx-by-hy rectangle."""
    w, phi, dxi, deta, psi = _reference_tables()
    det = hx * hy / 4.0
    cx, cy = 2.0 / hx, 2.0 / hy
    wd = w * det
    stiff = cx * cx * np.einsum("q,qi,qj->ij", wd, dxi, dxi) + cy * cy * np.einsum(
        "q,qi,qj->ij", wd, deta, deta
    )
    bx = cx * np.einsum("q,qk,qi->ki", wd, psi, dxi)
    by = cy * np.einsum("q,qk,qi->ki", wd, psi, deta)
    mass_q2 = np.einsum("q,qi,qj->ij", wd, phi, phi)
    mass_q1 = np.einsum("q,qk,ql->kl", wd, psi, psi)
    return {"stiffness": stiff, "bx": bx, "by": by, "mass_q2": mass_q2, "mass_q1": mass_q1}


# ---------------------------------------------------------------------------
# mesh generation


def _grid_mesh(x0, y0, hx, hy, active) -> Mesh:
    mx, my = active.shape
    used2 = np.zeros((2 * mx + 1, 2 * my + 1), dtype=bool)
    used1 = np.zeros((mx + 1, my + 1), dtype=bool)
    for cx in range(mx):
        for cy in range(my):
            if active[cx, cy]:
                used2[2 * cx:2 * cx + 3, 2 * cy:2 * cy + 3] = True
                used1[cx:cx + 2, cy:cy + 2] = True

    def number(used):
        ids = -np.ones(used.shape, dtype=np.int64)
        count = 0
        for gy in range(used.shape[1]):
            for gx in range(used.shape[0]):
                if used[gx, gy]:
                    ids[gx, gy] = count
                    count += 1
        return ids, count

    ids2, n2 = number(used2)
    ids1, n1 = number(used1)

    q2_coords = np.zeros((n2, 2))
    for gx in range(2 * mx + 1):
        for gy in range(2 * my + 1):
            i = ids2[gx, gy]
            if i >= 0:
                q2_coords[i] = (x0 + gx * (hx / 2.0), y0 + gy * (hy / 2.0))

    colocation = np.zeros(n1, dtype=np.int64)
    for cx in range(mx + 1):
        for cy in range(my + 1):
            i = ids1[cx, cy]
            if i >= 0:
                colocation[i] = ids2[2 * cx, 2 * cy]
    q1_coords = q2_coords[colocation].copy()

    el2, el1 = [], []
    for cy in range(my):
        for cx in range(mx):
            if not active[cx, cy]:
                continue
            nodes = [ids2[2 * cx + a, 2 * cy + b] for b in range(3) for a in range(3)]
            el2.append(nodes)
            el1.append(
                [ids1[cx, cy], ids1[cx + 1, cy], ids1[cx + 1, cy + 1], ids1[cx, cy + 1]]
            )

    def cell_active(cx, cy):
        return 0 <= cx < mx and 0 <= cy < my and active[cx, cy]

    boundary = np.zeros(n2, dtype=np.int8)
    for gx in range(2 * mx + 1):
        for gy in range(2 * my + 1):
            i = ids2[gx, gy]
            if i < 0:
                continue
            ex, ox = gx // 2, gx % 2
            ey, oy = gy // 2, gy % 2
            if ox and oy:
                interior = True  # cell centers never sit on the boundary curve
            elif ox and not oy:
                interior = cell_active(ex, ey) and cell_active(ex, ey - 1)
            elif oy and not ox:
                interior = cell_active(ex, ey) and cell_active(ex - 1, ey)
            else:
                interior = all(
                    cell_active(ex + dx, ey + dy) for dx in (-1, 0) for dy in (-1, 0)
                )
            if not interior:
                boundary[i] = DIRICHLET  # refined to NEUMANN by the caller
    return Mesh(
        q2_coords=q2_coords,
        q1_coords=q1_coords,
        elements_q2=np.asarray(el2, dtype=np.int64),
        elements_q1=np.asarray(el1, dtype=np.int64),
        boundary_q2=boundary,
        colocation=colocation,
        hx=hx,
        hy=hy,
    )


def build_mesh(spec: ProblemSpec) -> Mesh:
    """Generate the uniform quadrilateral grid for the requested domain."""
    if spec.domain == LID_CAVITY:
        m = spec.refinement
        mesh = _grid_mesh(-1.0, -1.0, 2.0 / m, 2.0 / m, np.ones((m, m), dtype=bool))
        return mesh
    if spec.domain == BACKWARD_STEP:
        r = spec.refinement
        length = spec.resolved_length()
        mx = int(round((length + 1.0) * r))
        if abs(mx - (length + 1.0) * r) > 1e-9:
            raise ValueError("channel length must align with the grid at this refinement")
        my = 2 * r
        active = np.ones((mx, my), dtype=bool)
        active[:r, :r] = False  # cut the quadrant x < 0, y < 0
        mesh = _grid_mesh(-1.0, -1.0, 1.0 / r, 1.0 / r, active)
        _tag_outflow(mesh, x_out=length)
        return mesh
    # obstacle channel
    r = spec.refinement
    length = spec.resolved_length()
    box = spec.obstacle_box or (1.75, 2.25, -0.25, 0.25)
    h = 1.0 / r
    mx = int(round(length * r))
    my = 2 * r
    idx = [(box[0] - 0.0) / h, (box[1] - 0.0) / h, (box[2] + 1.0) / h, (box[3] + 1.0) / h]
    cells = [int(round(v)) for v in idx]
    if any(abs(v - c) > 1e-9 for v, c in zip(idx, cells)) or cells[0] >= cells[1] or cells[2] >= cells[3]:
        raise ValueError(
            f"obstacle footprint {box} is not aligned with grid lines at refinement {r}"
        )
    if not (0 < cells[0] and cells[1] < mx and 0 < cells[2] and cells[3] < my):
        raise ValueError(f"obstacle footprint {box} must lie strictly inside the channel")
    active = np.ones((mx, my), dtype=bool)
    active[cells[0]:cells[1], cells[2]:cells[3]] = False
    mesh = _grid_mesh(0.0, -1.0, h, h, active)
    _tag_outflow(mesh, x_out=length)
    return mesh


def _tag_outflow(mesh: Mesh, x_out: float) -> None:
    # Neumann on the outlet, excluding the wall corners at y = +-1
    xs, ys = mesh.q2_coords[:, 0], mesh.q2_coords[:, 1]
    on_exit = (mesh.boundary_q2 == DIRICHLET) & (xs == xs.max()) & (ys > ys.min()) & (ys < ys.max())
    mesh.boundary_q2[on_exit] = NEUMANN
    if abs(xs.max() - x_out) > 1e-9:
        raise ValueError("outlet coordinate mismatch")


def build_boundary_values(mesh: Mesh, spec: ProblemSpec) -> BoundaryCondition:
    """Dirichlet data for the paper's benchmark problems."""
    w = np.zeros((mesh.n_q2, 2))
    xs, ys = mesh.q2_coords[:, 0], mesh.q2_coords[:, 1]
    dirichlet = mesh.boundary_q2 == DIRICHLET
    if spec.domain == LID_CAVITY:
        lid = dirichlet & (ys == ys.max())  # leaky: the whole top edge, corners included
        w[lid, 0] = 1.0
    elif spec.domain == BACKWARD_STEP:
        inflow = dirichlet & (xs == xs.min())
        w[inflow, 0] = 4.0 * ys[inflow] * (1.0 - ys[inflow])
    else:
        inflow = dirichlet & (xs == xs.min())
        w[inflow, 0] = 1.0 - ys[inflow] ** 2
    return BoundaryCondition(values=w)


# ---------------------------------------------------------------------------
# assembly


def _scatter(rows_nodes, cols_nodes, element_matrix, shape, n_elements):
    rows = np.broadcast_to(rows_nodes[:, :, None], (n_elements,) + element_matrix.shape).ravel()
    cols = np.broadcast_to(cols_nodes[:, None, :], (n_elements,) + element_matrix.shape).ravel()
    vals = np.broadcast_to(element_matrix, (n_elements,) + element_matrix.shape).ravel()
    return as_csr(sp.coo_matrix((vals, (rows, cols)), shape=shape))


def _scatter_varying(rows_nodes, cols_nodes, element_matrices_, shape):
    nel, nr, nc = element_matrices_.shape
    rows = np.broadcast_to(rows_nodes[:, :, None], (nel, nr, nc)).ravel()
    cols = np.broadcast_to(cols_nodes[:, None, :], (nel, nr, nc)).ravel()
    return as_csr(sp.coo_matrix((element_matrices_.ravel(), (rows, cols)), shape=shape))


class _RawOperators:
    """Unconstrained scalar operators for a mesh, assembled once and reused."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        n, n_p, nel = mesh.n_q2, mesh.n_q1, mesh.elements_q2.shape[0]
        mats = element_matrices(mesh.hx, mesh.hy)
        e2, e1 = mesh.elements_q2, mesh.elements_q1
        self.stiffness = _scatter(e2, e2, mats["stiffness"], (n, n), nel)
        self.bx = _scatter(e1, e2, mats["bx"], (n_p, n), nel)
        self.by = _scatter(e1, e2, mats["by"], (n_p, n), nel)
        self.mass_q2 = _scatter(e2, e2, mats["mass_q2"], (n, n), nel)
        self.mass_q1 = _scatter(e1, e1, mats["mass_q1"], (n_p, n_p), nel)

    def divergence(self) -> sp.csr_matrix:
        return as_csr(sp.hstack([self.bx, self.by], format="csr"))

    def convection(self, u_current) -> sp.csr_matrix:
        """Scalar convection operator with the transport field frozen at ``u_current``."""
        mesh = self.mesh
        n = mesh.n_q2
        u_current = np.asarray(u_current, dtype=float)
        if u_current.shape[0] != 2 * n:
            raise ValueError(f"velocity iterate must have length {2 * n}")
        w, phi, dxi, deta, _ = _reference_tables()
        wd = w * (mesh.hx * mesh.hy / 4.0)
        dphidx = dxi * (2.0 / mesh.hx)
        dphidy = deta * (2.0 / mesh.hy)
        e2 = mesh.elements_q2
        ux_q = u_current[:n][e2] @ phi.T    # (nel, nq)
        uy_q = u_current[n:][e2] @ phi.T
        ke = np.einsum("q,qi,eq,qj->eij", wd, phi, ux_q, dphidx)
        ke += np.einsum("q,qi,eq,qj->eij", wd, phi, uy_q, dphidy)
        return _scatter_varying(e2, e2, ke, (n, n))


def _diagonal_positions(A: sp.csr_matrix, rows) -> np.ndarray:
    pos = np.empty(len(rows), dtype=np.int64)
    for k, r in enumerate(rows):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        j = lo + np.searchsorted(A.indices[lo:hi], r)
        if j >= hi or A.indices[j] != r:
            raise ValueError(f"missing structural diagonal in row {r}")
        pos[k] = j
    return pos


def _finalize_system(mesh, raw, a_hat, bc) -> SaddleSystem:
    n = mesh.n_q2
    A = as_csr(sp.block_diag([a_hat, a_hat], format="csr"))
    B = raw.divergence()
    f_u = np.zeros(2 * n)
    f_p = np.zeros(mesh.n_q1)
    pressure_nullspace = not np.any(mesh.boundary_q2 == NEUMANN)
    dirichlet2n = None
    if bc is not None:
        dmask = mesh.boundary_q2 == DIRICHLET
        dirichlet2n = np.concatenate([dmask, dmask])
        wvec = np.zeros(2 * n)
        wvec[:n][dmask] = bc.values[dmask, 0]
        wvec[n:][dmask] = bc.values[dmask, 1]
        f_u -= A @ wvec
        f_p -= B @ wvec
        # zero Dirichlet rows/columns in place so the assembled sparsity
        # pattern (incl. exact-cancellation zeros) is preserved
        A = A.copy()
        for d in np.flatnonzero(dirichlet2n):
            A.data[A.indptr[d]:A.indptr[d + 1]] = 0.0
        A.data[dirichlet2n[A.indices]] = 0.0
        diag_pos = _diagonal_positions(A, np.flatnonzero(dirichlet2n))
        A.data[diag_pos] = 1.0
        B = B.copy()
        B.data[dirichlet2n[B.indices]] = 0.0
        f_u[dirichlet2n] = wvec[dirichlet2n]
    return SaddleSystem(
        A=A,
        B=B,
        f_u=f_u,
        f_p=f_p,
        colocation=mesh.colocation.copy(),
        pressure_nullspace=pressure_nullspace,
        dirichlet=dirichlet2n,
        A_nodal_raw=as_csr(a_hat),
    )


def assemble_stokes(mesh: Mesh, bc: BoundaryCondition | None) -> SaddleSystem:
    """Assemble the Stokes saddle system; ``bc=None`` skips Dirichlet treatment."""
    raw = _RawOperators(mesh)
    return _finalize_system(mesh, raw, raw.stiffness, bc)


def assemble_oseen(mesh: Mesh, bc, nu: float, u_current) -> SaddleSystem:
    """Assemble the Picard-linearized system ``nu * A_S + K(u_current)``."""
    raw = _RawOperators(mesh)
    a_hat = as_csr(nu * raw.stiffness + raw.convection(u_current))
    return _finalize_system(mesh, raw, a_hat, bc)


def assemble_mass_matrices(mesh: Mesh):
    """Consistent velocity (block-duplicated) and pressure mass matrices, no BCs."""
    raw = _RawOperators(mesh)
    m_v = as_csr(sp.block_diag([raw.mass_q2, raw.mass_q2], format="csr"))
    return m_v, as_csr(raw.mass_q1)


# ---------------------------------------------------------------------------
# nonlinear driver


def direct_saddle_solver(sys: SaddleSystem) -> np.ndarray:
    """Sparse direct solve; enclosed flows get the first pressure dof pinned."""
    M = sys.full_matrix()
    rhs = sys.full_rhs()
    if sys.pressure_nullspace:
        M = M.copy().tolil()
        pin = sys.n_v
        M.rows[pin] = [pin]
        M.data[pin] = [1.0]
        M = M.tocsr()
        rhs = rhs.copy()
        rhs[pin] = 0.0
    return spla.spsolve(M.tocsc(), rhs)


def picard_solve(
    spec: ProblemSpec,
    linear_solver=None,
    nl_tol: float = 1e-8,
    max_picard: int = 50,
):
    """Picard iteration on the Oseen linearization.

    The first solve (zero transport field) is the Stokes initial iterate.
    Returns ``(system, solution, history)`` where ``system`` is the last
    assembled linear system and ``history`` the nonlinear residual 2-norms.
    """
    if nl_tol <= 0:
        raise ValueError("nl_tol must be positive")
    solve = linear_solver or direct_saddle_solver
    mesh = build_mesh(spec)
    bc = build_boundary_values(mesh, spec)
    raw = _RawOperators(mesh)
    n = mesh.n_q2
    x = np.zeros(2 * n + mesh.n_q1)
    history = []
    for it in range(max_picard + 1):
        a_hat = as_csr(spec.viscosity * raw.stiffness + raw.convection(x[: 2 * n]))
        sys = _finalize_system(mesh, raw, a_hat, bc)
        residual = np.linalg.norm(sys.full_rhs() - sys.full_matrix() @ x)
        history.append(float(residual))
        if residual < nl_tol:
            return sys, x, history
        if it == max_picard:
            break
        x = solve(sys)
    raise PicardError(
        f"Picard did not reach {nl_tol:g} within {max_picard} iterations "
        f"(last residual {history[-1]:.3e})",
        history,
    )
