# follower_agnostic/planning.py
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Optional, Tuple, Union

import numpy as np

from .config import ExperimentConfig, read_config
from .core import LeaderProblem, ScheduleParams, default_eta_bar
from .errors import ConfigError, ScheduleError
from .lower_level import FollowerSystem
from .problems import RoutingGame, build_problem
from .solver import SolverConfig

KValue = Union[int, str]


@dataclass(frozen=True)
class PlannedRun:
    T: int
    K: KValue
    seed: int
    d: Optional[int] = None
    rho: Optional[float] = None
    lam: Optional[float] = None

    @property
    def cell(self) -> str:
        parts = [f"T{self.T}", f"K{self.K}"]
        if self.d is not None:
            parts.append(f"d{self.d}")
        if self.rho is not None:
            parts.append(f"rho{self.rho!r}")
        if self.lam is not None:
            parts.append(f"lambda{self.lam!r}")
        return "_".join(parts)

    @property
    def run_id(self) -> str:
        return f"{self.cell}/seed_{self.seed}"

    def sort_key(self) -> Tuple[Any, ...]:
        return (
            self.T,
            0 if self.K == "auto" else int(self.K),
            -1 if self.d is None else self.d,
            -1.0 if self.rho is None else self.rho,
            -1.0 if self.lam is None else self.lam,
            self.seed,
        )


def plan_runs(cfg: ExperimentConfig, seed_base: Optional[int] = None, use_sweep: bool = True) -> List[PlannedRun]:
    """Cartesian product of sweep values and seeds, sorted by (sweep key, seed)."""
    sweep = cfg.sweep if use_sweep else None
    Ts = (sweep.T if sweep and sweep.T else None) or [cfg.solver.T]
    Ks = (sweep.K if sweep and sweep.K else None) or [cfg.solver.K]
    ds = (sweep.d if sweep and sweep.d else None) or [None]
    rhos = (sweep.rho if sweep and sweep.rho else None) or [None]
    lams = (sweep.lambda_ if sweep and sweep.lambda_ else None) or [None]
    seeds = cfg.seed_list(seed_base)
    runs = [
        PlannedRun(T=T, K=K, seed=s, d=d, rho=rho, lam=lam)
        for T, K, d, rho, lam, s in itertools.product(Ts, Ks, ds, rhos, lams, seeds)
    ]
    return sorted(runs, key=PlannedRun.sort_key)


# ==============================================================================
# Problem + solver setup
# ==============================================================================
def default_follower_start(problem: LeaderProblem, followers: FollowerSystem) -> np.ndarray:
    if isinstance(problem, RoutingGame):
        return problem.instance.even_split()
    return followers.projection(np.zeros(followers.follower_dim))


def build_run_problem(cfg: ExperimentConfig, run: PlannedRun, base_dir: Path) -> LeaderProblem:
    return build_problem(cfg.problem, base_dir, d=run.d, rho=run.rho, lambda_reg=run.lam)


def prepare(cfg: ExperimentConfig, run: PlannedRun, base_dir: Path) -> Tuple[LeaderProblem, FollowerSystem, SolverConfig]:
    problem = build_run_problem(cfg, run, base_dir)
    followers = problem.follower_system()
    d = problem.leader_dim
    eta_bar = cfg.solver.eta_bar if cfg.solver.eta_bar is not None else default_eta_bar(d, problem.constants)
    schedule = ScheduleParams(eta_bar=eta_bar, delta_bar=cfg.solver.delta_bar, d=d)
    x0 = np.zeros(d) if cfg.solver.x0 is None else np.asarray(cfg.solver.x0, dtype=np.float64)
    y0 = default_follower_start(problem, followers) if cfg.solver.y0 is None else np.asarray(cfg.solver.y0, dtype=np.float64)
    solver_cfg = SolverConfig(
        T=run.T,
        schedule=schedule,
        x0=x0,
        y0=y0,
        K=run.K,
        seed=run.seed,
        record_inner=cfg.solver.record_inner,
        log_every=cfg.solver.log_every,
    )
    return problem, followers, solver_cfg


def check_runnable(cfg: ExperimentConfig, base_dir: Path) -> None:
    """Build every distinct problem variant once and check dimensions, feasibility and the η̄ condition."""
    variants = {(r.d, r.rho, r.lam): r for r in plan_runs(cfg, use_sweep=True)}
    for run in variants.values():
        try:
            problem, followers, solver_cfg = prepare(cfg, run, base_dir)
            if solver_cfg.x0.shape != (problem.leader_dim,):
                raise ConfigError(f"solver.x0: length {solver_cfg.x0.shape[0]}, expected {problem.leader_dim}")
            if solver_cfg.y0.shape != (followers.follower_dim,):
                raise ConfigError(f"solver.y0: length {solver_cfg.y0.shape[0]}, expected {followers.follower_dim}")
            if not followers.is_feasible(solver_cfg.y0):
                raise ConfigError(f"solver.y0: not in the follower feasible set: {solver_cfg.y0.tolist()}")
            solver_cfg.schedule.validate_against(problem.constants)
        except ScheduleError as e:
            raise ConfigError(f"solver.eta_bar: {e}") from e
        except ConfigError as e:
            msg = str(e)
            raise ConfigError(msg if msg.startswith(("solver.", "problem.")) else f"problem.{msg}") from e
        except ValueError as e:
            raise ConfigError(f"problem: {e}") from e


def parse_config(path: Path) -> Tuple[ExperimentConfig, Path]:
    """read_config plus problem construction, so dimension and instance errors surface as ConfigError."""
    cfg, base_dir = read_config(path)
    check_runnable(cfg, base_dir)
    return cfg, base_dir
