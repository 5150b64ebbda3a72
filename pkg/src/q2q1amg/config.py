"""Experiment configuration: INI-style files with sections and defaults.

Sections: ``[problem]``, ``[coarsening]``, ``[emin]``, ``[smoother]``,
``[solver]``.  Defaults mirror the reference experiments: tau1 = 0.06,
tau2 = sqrt(1.5e-3), GMRES tolerance 1e-6, Vanka omega 0.5, Braess-Sarazin
omega 0.666 with five inner Gauss-Seidel sweeps, Picard tolerance 1e-8.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .coarsen import CoarsenParams
from .fem import DOMAINS, ProblemSpec
from .hierarchy import SMOOTHERS, AmgParams, SmootherSpec

SMOOTHER_CYCLES = {"vanka": (1, 1), "braess-sarazin": (2, 2), "ilu": (1, 1)}


class ConfigError(ValueError):
    pass


@dataclass
class SolverConfig:
    tolerance: float = 1e-6
    max_iterations: int = 100
    picard_tol: float = 1e-8
    max_picard: int = 50
    coarse_threshold: int = 250
    max_levels: int = 20


@dataclass
class ExperimentConfig:
    domain: str = "lid_cavity"
    refinements: list = field(default_factory=lambda: [8])
    viscosity: float = 1.0
    channel_length: float | None = None
    obstacle_box: tuple | None = None
    coarsen: CoarsenParams = field(default_factory=CoarsenParams)
    emin_iterations: int = 1
    smoothers: list = field(default_factory=lambda: [SmootherSpec()])
    solver: SolverConfig = field(default_factory=SolverConfig)
    tau1_values: list = field(
        default_factory=lambda: [0.0, 0.05, 0.10, 0.15, 0.20, 0.25]
    )
    mac1d_n: int = 17

    def problem_spec(self, refinement) -> ProblemSpec:
        return ProblemSpec(
            domain=self.domain,
            refinement=refinement,
            viscosity=self.viscosity,
            channel_length=self.channel_length,
            obstacle_box=self.obstacle_box,
        )

    def amg_params(self, petrov_galerkin: bool, smoother: SmootherSpec) -> AmgParams:
        return AmgParams(
            coarsen=self.coarsen,
            emin_iterations=self.emin_iterations,
            petrov_galerkin=petrov_galerkin,
            coarse_threshold=self.solver.coarse_threshold,
            max_levels=self.solver.max_levels,
            smoother=smoother,
        )


def _get(parser, section, option, conv, default):
    if not parser.has_option(section, option):
        return default
    raw = parser.get(section, option)
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {option}: cannot parse {raw!r}: {exc}") from None


def _floats(raw):
    return [float(tok) for tok in raw.split()]


def _ints(raw):
    return [int(tok) for tok in raw.split()]


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    known = {"problem", "coarsening", "emin", "smoother", "solver"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    cfg = ExperimentConfig()
    cfg.domain = _get(parser, "problem", "domain", str, cfg.domain).strip()
    if cfg.domain not in DOMAINS:
        raise ConfigError(f"[problem] domain: unknown domain {cfg.domain!r}; expected one of {DOMAINS}")
    cfg.refinements = _get(parser, "problem", "refinements", _ints, cfg.refinements)
    cfg.viscosity = _get(parser, "problem", "viscosity", float, cfg.viscosity)
    cfg.channel_length = _get(parser, "problem", "channel_length", float, cfg.channel_length)
    if parser.has_option("problem", "obstacle_box"):
        box = _floats(parser.get("problem", "obstacle_box"))
        if len(box) != 4:
            raise ConfigError("[problem] obstacle_box: expected 'x0 x1 y0 y1'")
        cfg.obstacle_box = tuple(box)

    cfg.coarsen = CoarsenParams(
        tau1=_get(parser, "coarsening", "tau1", float, 0.06),
        tau2=_get(parser, "coarsening", "tau2", float, math.sqrt(1.5e-3)),
        omega_g=_get(parser, "coarsening", "omega_g", float, 0.8),
        omega_o=_get(parser, "coarsening", "omega_o", float, 0.5),
        lumping=_get(parser, "coarsening", "lumping", str, "rowsum").strip(),
    )
    if cfg.coarsen.lumping not in ("rowsum", "zerosum"):
        raise ConfigError(f"[coarsening] lumping: expected rowsum or zerosum, got {cfg.coarsen.lumping!r}")

    cfg.emin_iterations = _get(parser, "emin", "iterations", int, 1)

    kinds = _get(parser, "smoother", "types", str, "vanka").split()
    smoothers = []
    for kind in kinds:
        if kind not in SMOOTHERS:
            raise ConfigError(f"[smoother] types: unknown smoother name {kind!r}; expected one of {SMOOTHERS}")
        pre, post = SMOOTHER_CYCLES[kind]
        smoothers.append(
            SmootherSpec(
                kind=kind,
                pre=_get(parser, "smoother", f"{_key(kind)}_pre", int, pre),
                post=_get(parser, "smoother", f"{_key(kind)}_post", int, post),
                vanka_omega=_get(parser, "smoother", "vanka_omega", float, 0.5),
                bs_omega=_get(parser, "smoother", "bs_omega", float, 0.666),
                bs_inner_sweeps=_get(parser, "smoother", "bs_inner_sweeps", int, 5),
                ilu_fill=_get(parser, "smoother", "ilu_fill", int, 1),
                ilu_ordering=_get(parser, "smoother", "ilu_ordering", str, "natural").strip(),
            )
        )
    cfg.smoothers = smoothers

    cfg.solver = SolverConfig(
        tolerance=_get(parser, "solver", "tolerance", float, 1e-6),
        max_iterations=_get(parser, "solver", "max_iterations", int, 100),
        picard_tol=_get(parser, "solver", "picard_tol", float, 1e-8),
        max_picard=_get(parser, "solver", "max_picard", int, 50),
        coarse_threshold=_get(parser, "solver", "coarse_threshold", int, 250),
        max_levels=_get(parser, "solver", "max_levels", int, 20),
    )
    cfg.tau1_values = _get(parser, "solver", "tau1_values", _floats, cfg.tau1_values)
    cfg.mac1d_n = _get(parser, "problem", "mac1d_n", int, cfg.mac1d_n)
    return cfg


def _key(kind: str) -> str:
    return kind.replace("-", "_")
