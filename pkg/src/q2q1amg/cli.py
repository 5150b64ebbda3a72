"""Experiment runner: reproduces the benchmark tables from config files.

Modes
-----
stokes          assemble and solve the Stokes problem per refinement/smoother
navier-stokes   Picard-converge, then solve the final Oseen system
tau1-sweep      iteration counts over a range of dropping thresholds
infsup          per-level smallest nonzero singular values of the scaled divergence
mac1d           the 1D staggered-grid instability study

Each run writes a CSV and an aligned plain-text table to the output
directory; ``--dump-matrices`` exports the assembled system, masses and
coordinates, ``--dump-splitting`` the per-level C/F sets and patterns.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from . import mmio
from .config import ConfigError, ExperimentConfig, load_config
from .coarsen import CoarsenParams
from .diagnostics import (
    CO_LOCATED,
    MID_POINT,
    build_mac1d,
    eigenvector_sign_changes,
    infsup_estimate,
    projected_mac_schur,
)
from .fem import (
    SaddleSystem,
    assemble_mass_matrices,
    assemble_stokes,
    build_boundary_values,
    build_mesh,
    picard_solve,
)
from .hierarchy import attach_smoothers, build_transfers, operator_complexity, vcycle_apply
from .krylov import gmres
from .linalg import as_csr

MODES = ("stokes", "navier-stokes", "tau1-sweep", "infsup", "mac1d")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="q2q1amg", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mode", choices=MODES, required=True)
    ap.add_argument("--config", required=True, help="INI config file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--dump-matrices", action="store_true")
    ap.add_argument("--dump-splitting", action="store_true")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    runner = {
        "stokes": run_flow_experiment,
        "navier-stokes": run_flow_experiment,
        "tau1-sweep": run_tau1_sweep,
        "infsup": run_infsup,
        "mac1d": run_mac1d,
    }[args.mode]
    runner(cfg, args.out, mode=args.mode, dump_matrices=args.dump_matrices,
           dump_splitting=args.dump_splitting)
    return 0


def _assemble(cfg: ExperimentConfig, refinement: int, nonlinear: bool):
    spec = cfg.problem_spec(refinement)
    mesh = build_mesh(spec)
    if nonlinear:
        system, _, history = picard_solve(
            spec, nl_tol=cfg.solver.picard_tol, max_picard=cfg.solver.max_picard
        )
        return mesh, system, history
    system = assemble_stokes(mesh, build_boundary_values(mesh, spec))
    return mesh, system, []


def _solve_one(cfg, mesh, system, smoother, petrov_galerkin, coarsen=None):
    """Build the hierarchy for one smoother and run preconditioned GMRES."""
    params = cfg.amg_params(petrov_galerkin, smoother)
    if coarsen is not None:
        params.coarsen = coarsen
    t0 = time.perf_counter()
    h = build_transfers(system, mesh.q2_coords, mesh.q1_coords, params)
    attach_smoothers(h, smoother)
    setup_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    result = gmres(
        system.full_matrix(),
        system.full_rhs(),
        preconditioner=h.as_preconditioner(),
        rel_tol=cfg.solver.tolerance,
        max_iter=cfg.solver.max_iterations,
    )
    solve_time = time.perf_counter() - t0
    return h, result, setup_time, solve_time


def _its_label(result, max_iterations):
    return str(result.iterations) if result.converged else f"{max_iterations}+"


def run_flow_experiment(cfg, out_dir, mode, dump_matrices=False, dump_splitting=False):
    nonlinear = mode == "navier-stokes"
    rows = []
    for refinement in cfg.refinements:
        mesh, system, _ = _assemble(cfg, refinement, nonlinear)
        if dump_matrices:
            export_problem(cfg, refinement, os.path.join(out_dir, f"export_r{refinement}"),
                           mesh=mesh, system=system, nonlinear=nonlinear)
        for smoother in cfg.smoothers:
            h, result, setup_time, solve_time = _solve_one(
                cfg, mesh, system, smoother, petrov_galerkin=nonlinear
            )
            if dump_splitting:
                dump_splitting_files(h, os.path.join(out_dir, f"splitting_r{refinement}"))
            with open(os.path.join(out_dir, f"hierarchy_r{refinement}_{_slug(smoother)}.txt"), "w") as fh:
                fh.write(h.summary() + "\n")
            rows.append(
                {
                    "problem": cfg.domain,
                    "mode": mode,
                    "refinement": refinement,
                    "dofs": system.dofs,
                    "complexity": f"{operator_complexity(h):.2f}",
                    "levels": len(h.levels),
                    "smoother": smoother.label(),
                    "iterations": _its_label(result, cfg.solver.max_iterations),
                    "converged": result.converged,
                    "setup_seconds": f"{setup_time:.2f}",
                    "solve_seconds": f"{solve_time:.2f}",
                }
            )
    _write_csv(os.path.join(out_dir, "results.csv"), rows)
    _write_table(os.path.join(out_dir, "results.txt"), cfg, rows)
    return rows


def run_tau1_sweep(cfg, out_dir, mode=None, dump_matrices=False, dump_splitting=False):
    refinement = cfg.refinements[-1]
    mesh, system, _ = _assemble(cfg, refinement, nonlinear=False)
    smoother = cfg.smoothers[0]
    rows = []
    for tau1 in cfg.tau1_values:
        coarsen = CoarsenParams(
            tau1=tau1,
            tau2=cfg.coarsen.tau2,
            omega_g=cfg.coarsen.omega_g,
            omega_o=cfg.coarsen.omega_o,
            lumping=cfg.coarsen.lumping,
        )
        h, result, setup_time, solve_time = _solve_one(
            cfg, mesh, system, smoother, petrov_galerkin=False, coarsen=coarsen
        )
        rows.append(
            {
                "tau1": tau1,
                "dofs": system.dofs,
                "coarse_rows": h.levels[1].dofs if len(h.levels) > 1 else system.dofs,
                "levels": len(h.levels),
                "smoother": smoother.label(),
                "iterations": _its_label(result, cfg.solver.max_iterations),
                "setup_seconds": f"{setup_time:.2f}",
                "solve_seconds": f"{solve_time:.2f}",
            }
        )
    _write_csv(os.path.join(out_dir, "tau1_sweep.csv"), rows)
    lines = [f"{'tau1':>6}  {'iterations':>10}  {'coarse rows':>11}"]
    lines += [f"{r['tau1']:>6.2f}  {r['iterations']:>10}  {r['coarse_rows']:>11}" for r in rows]
    with open(os.path.join(out_dir, "tau1_sweep.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return rows


def run_infsup(cfg, out_dir, mode=None, dump_matrices=False, dump_splitting=False):
    rows = []
    for refinement in cfg.refinements:
        mesh, system, _ = _assemble(cfg, refinement, nonlinear=False)
        params = cfg.amg_params(petrov_galerkin=False, smoother=cfg.smoothers[0])
        h = build_transfers(system, mesh.q2_coords, mesh.q1_coords, params)
        m_v, m_p = assemble_mass_matrices(mesh)
        report = infsup_estimate(h, m_v, m_p)
        for lvl, nrows, sigma in zip(report.levels, report.rows, report.sigma_min):
            rows.append(
                {
                    "refinement": refinement,
                    "level": lvl,
                    "rows": nrows,
                    "sigma_min": f"{sigma:.6f}",
                }
            )
    _write_csv(os.path.join(out_dir, "infsup.csv"), rows)
    return rows


def run_mac1d(cfg, out_dir, mode=None, dump_matrices=False, dump_splitting=False):
    n = cfg.mac1d_n
    system = build_mac1d(n)
    rows = []
    for placement in (CO_LOCATED, MID_POINT):
        s, s_hat = projected_mac_schur(system, placement)
        mid = s_hat.shape[0] // 2
        stencil = s_hat[mid, max(mid - 2, 0):mid + 3]
        rows.append(
            {
                "placement": placement,
                "n": n,
                "sign_changes": eigenvector_sign_changes(s, 1),
                "interior_stencil": " ".join(f"{v:g}" for v in stencil),
            }
        )
    _write_csv(os.path.join(out_dir, "mac1d.csv"), rows)
    return rows


def export_problem(cfg, refinement, out_dir, mesh=None, system=None, nonlinear=False):
    """Write the assembled system, masses and coordinates for external study."""
    os.makedirs(out_dir, exist_ok=True)
    if mesh is None or system is None:
        mesh, system, _ = _assemble(cfg, refinement, nonlinear)
    try:
        mmio.write_matrix(os.path.join(out_dir, "A.mtx"), system.A)
        mmio.write_matrix(os.path.join(out_dir, "B.mtx"), system.B)
        if system.A_nodal_raw is not None:
            mmio.write_matrix(os.path.join(out_dir, "A_nodal.mtx"), system.A_nodal_raw)
        m_v, m_p = assemble_mass_matrices(mesh)
        mmio.write_matrix(os.path.join(out_dir, "Mv.mtx"), m_v)
        mmio.write_matrix(os.path.join(out_dir, "Mp.mtx"), m_p)
        mmio.write_vector(os.path.join(out_dir, "f.vec"), system.full_rhs())
        mmio.write_coordinates(os.path.join(out_dir, "coords.txt"), mesh.q2_coords, mesh.q1_coords)
    except OSError as exc:
        raise RuntimeError(f"export to {out_dir} failed: {exc}") from exc
    return out_dir


def import_problem(in_dir) -> tuple[SaddleSystem, np.ndarray, np.ndarray]:
    """Rebuild a saddle system from an export directory.

    The co-location map is recovered by exact coordinate matching and the
    pressure null space by testing B^T against the constant vector.
    """
    A = mmio.read_matrix(os.path.join(in_dir, "A.mtx"))
    B = mmio.read_matrix(os.path.join(in_dir, "B.mtx"))
    f = mmio.read_vector(os.path.join(in_dir, "f.vec"))
    n_vs = A.shape[0] // 2
    coords_v, coords_p = mmio.read_coordinates(os.path.join(in_dir, "coords.txt"), n_vs)
    lookup = {(x, y): i for i, (x, y) in enumerate(coords_v)}
    try:
        colocation = np.array([lookup[(x, y)] for x, y in coords_p], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"pressure node at {exc} has no co-located velocity node") from None
    bt_const = np.abs(B.T @ np.ones(B.shape[0]))
    nullspace = bool(bt_const.max() <= 1e-10 * max(abs(B).max(), 1.0))
    raw_path = os.path.join(in_dir, "A_nodal.mtx")
    raw = mmio.read_matrix(raw_path) if os.path.exists(raw_path) else None
    system = SaddleSystem(
        A=A,
        B=B,
        f_u=f[: 2 * n_vs],
        f_p=f[2 * n_vs:],
        colocation=colocation,
        pressure_nullspace=nullspace,
        A_nodal_raw=raw,
    )
    return system, coords_v, coords_p


def dump_splitting_files(hierarchy, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for k, lev in enumerate(hierarchy.levels):
        if lev.splitting is None:
            continue
        with open(os.path.join(out_dir, f"c_pressure_l{k}.txt"), "w") as fh:
            for c in lev.splitting.C:
                fh.write(f"{c}\n")
        if lev.pattern_p is not None:
            mmio.write_matrix(os.path.join(out_dir, f"pattern_p_l{k}.mtx"), as_csr(lev.pattern_p))
        if lev.pattern_v is not None:
            mmio.write_matrix(os.path.join(out_dir, f"pattern_v_l{k}.mtx"), as_csr(lev.pattern_v))


def _slug(smoother):
    return smoother.kind.replace("-", "_")


def _write_csv(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _write_table(path, cfg, rows):
    """Aligned text table: one row per refinement, column group per smoother."""
    smoothers = [s.label() for s in cfg.smoothers]
    by_key = {(r["refinement"], r["smoother"]): r for r in rows}
    refinements = sorted({r["refinement"] for r in rows})
    header = f"{'Dofs':>8} {'Complexity':>10} {'Levels':>6}"
    for label in smoothers:
        header += f" | {label:>20} {'Setup':>7} {'Solve':>7}"
    lines = [header]
    for refinement in refinements:
        first = next(r for r in rows if r["refinement"] == refinement)
        line = f"{first['dofs']:>8} {first['complexity']:>10} {first['levels']:>6}"
        for label in smoothers:
            r = by_key.get((refinement, label))
            if r is None:
                line += f" | {'-':>20} {'-':>7} {'-':>7}"
            else:
                line += (
                    f" | {('Its ' + r['iterations']):>20} {r['setup_seconds']:>7}"
                    f" {r['solve_seconds']:>7}"
                )
        lines.append(line)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    raise SystemExit(main())
