from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np

from .core import (
    FollowerProfile,
    LeaderProblem,
    LeaderStrategy,
    ScheduleParams,
    Vector,
    as_vector,
    choose_inner_iterations,
    delta_t,
    eta_t,
    inner_step_condition,
)
from .errors import BoundaryRegimeError, MissingStructureError, NonFiniteFollowerError, RunAbortedError
from .estimator import Perturbation, RngStream, sample_unit_sphere, two_point_estimator
from .lower_level import FollowerSystem, run_inner

log = logging.getLogger(__name__)


# ==============================================================================
# Types
# ==============================================================================
@dataclass(frozen=True)
class SolverConfig:
    T: int
    schedule: ScheduleParams
    x0: LeaderStrategy
    y0: FollowerProfile
    K: Union[int, Literal["auto"]] = "auto"
    seed: int = 0
    record_inner: bool = False
    log_every: int = 0
    stream_id: int = 0

    def __post_init__(self) -> None:
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if self.K != "auto" and (isinstance(self.K, str) or int(self.K) != self.K or self.K < 1):
            raise ValueError(f"K must be a positive integer or 'auto', got {self.K!r}")
        if self.log_every < 0:
            raise ValueError(f"log_every must be nonnegative, got {self.log_every}")
        object.__setattr__(self, "x0", as_vector(self.x0, name="x0"))
        object.__setattr__(self, "y0", as_vector(self.y0, name="y0"))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "T": self.T,
            "K": self.K,
            "eta_bar": self.schedule.eta_bar,
            "delta_bar": self.schedule.delta_bar,
            "d": self.schedule.d,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "x0": self.x0.tolist(),
            "y0": self.y0.tolist(),
            "record_inner": self.record_inner,
        }


@dataclass(frozen=True)
class RoundRecord:
    t: int
    x_t: LeaderStrategy
    v_t: Vector
    delta_t: float
    eta_t: float
    x_hat_t: LeaderStrategy
    f_hat: float
    f_base: float
    estimate: Vector
    # follower responses are not stored in CSV traces, so reloaded rounds leave them unset
    y_hat_K: Optional[FollowerProfile] = None
    y_base_K: Optional[FollowerProfile] = None
    grad_norm_sq: Optional[float] = None
    inner_hat: Optional[Tuple[FollowerProfile, ...]] = None
    inner_base: Optional[Tuple[FollowerProfile, ...]] = None


@dataclass
class RunTrace:
    config: Dict[str, Any]
    rounds: List[RoundRecord]
    final_x: LeaderStrategy
    K: int
    warnings: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rounds)

    def leader_iterate(self, i: int) -> LeaderStrategy:
        """x_i for i in [0, T]; x_T is the iterate after the last round."""
        if not 0 <= i <= len(self.rounds):
            raise IndexError(f"leader iterate index {i} outside [0, {len(self.rounds)}]")
        return self.final_x if i == len(self.rounds) else self.rounds[i].x_t

    def leader_iterates(self) -> np.ndarray:
        return np.vstack([r.x_t for r in self.rounds] + [self.final_x])


# ==============================================================================
# Outer loop
# ==============================================================================
def _resolve_K(problem: LeaderProblem, followers: FollowerSystem, cfg: SolverConfig) -> Tuple[int, List[str]]:
    warnings: List[str] = []
    if cfg.K != "auto":
        return int(cfg.K), warnings
    K = choose_inner_iterations(followers.rate, cfg.T, problem.leader_dim)
    L_S = problem.constants.L_S if problem.constants else None
    if followers.rate.kind == "exponential" and L_S:
        ceiling = inner_step_condition(L_S, K)
        if followers.step_size > ceiling:
            warnings.append(
                f"inner step size {followers.step_size} exceeds log(sqrt(2 L_S))/(2 K L_S) = {ceiling:.6g} (L_S={L_S}, K={K})"
            )
    return K, warnings


def run_algorithm(problem: LeaderProblem, followers: FollowerSystem, cfg: SolverConfig) -> RunTrace:
    """Zeroth-order leader loop: query followers at x_t + δ_t v_t and at x_t, step on the difference."""
    d = problem.leader_dim
    if cfg.schedule.d != d:
        raise ValueError(f"schedule d={cfg.schedule.d} does not match leader dimension {d}")
    if cfg.x0.shape != (d,):
        raise ValueError(f"x0 has length {cfg.x0.shape[0]}, expected {d}")
    if followers.follower_dim != problem.follower_dim or cfg.y0.shape != (followers.follower_dim,):
        raise ValueError(
            f"follower dimensions disagree: problem {problem.follower_dim}, system {followers.follower_dim}, y0 {cfg.y0.shape[0]}"
        )
    if not followers.is_feasible(cfg.y0):
        raise ValueError(f"y0 is not feasible for the follower system: {cfg.y0.tolist()}")

    warnings = list(cfg.schedule.validate_against(problem.constants))
    K, k_warnings = _resolve_K(problem, followers, cfg)
    warnings.extend(k_warnings)
    for w in warnings:
        log.debug("seed %d: %s", cfg.seed, w)

    rng = RngStream(cfg.seed, cfg.stream_id)
    grad_fn = problem.hypergradient if problem.has_hypergradient else None
    boundary_warned = False

    x = cfg.x0.copy()
    warm = cfg.y0.copy()
    rounds: List[RoundRecord] = []
    for t in range(cfg.T):
        eta = eta_t(cfg.schedule, t)
        delta = delta_t(cfg.schedule, t)
        v = sample_unit_sphere(rng, d)
        x_hat = Perturbation(v, delta).apply(x)

        try:
            hat = run_inner(followers, x_hat, warm, K, keep_iterates=cfg.record_inner)
            base = run_inner(followers, x, warm, K, keep_iterates=cfg.record_inner)
        except NonFiniteFollowerError as e:
            raise RunAbortedError(f"round {t}: follower update failed: {e}", round_index=t) from e

        f_hat = float(problem.evaluate_f(x_hat, hat.y_final))
        f_base = float(problem.evaluate_f(x, base.y_final))
        if not (math.isfinite(f_hat) and math.isfinite(f_base)):
            raise RunAbortedError(f"round {t}: non-finite leader objective ({f_hat}, {f_base})", round_index=t)
        estimate = two_point_estimator(d, delta, v, f_hat, f_base)

        grad_norm_sq = None
        if grad_fn is not None:
            try:
                g = grad_fn(x)
                grad_norm_sq = float(g @ g)
            except BoundaryRegimeError as e:
                if not boundary_warned:
                    warnings.append(f"round {t}: hypergradient unavailable ({e}); grad_norm_sq left empty")
                    boundary_warned = True

        rounds.append(
            RoundRecord(
                t=t,
                x_t=x,
                v_t=v,
                delta_t=delta,
                eta_t=eta,
                x_hat_t=x_hat,
                f_hat=f_hat,
                f_base=f_base,
                estimate=estimate,
                y_hat_K=hat.y_final,
                y_base_K=base.y_final,
                grad_norm_sq=grad_norm_sq,
                inner_hat=hat.iterates,
                inner_base=base.iterates,
            )
        )

        x_next = x - eta * estimate
        if not np.all(np.isfinite(x_next)):
            raise RunAbortedError(f"round {t}: leader iterate became non-finite", round_index=t)
        if cfg.log_every and t % cfg.log_every == 0:
            log.debug(
                "seed=%d t=%d |x|=%.6g f_hat=%.6g f_base=%.6g", cfg.seed, t, float(np.linalg.norm(x)), f_hat, f_base
            )
        x = x_next
        warm = base.y_final

    config = dict(cfg.to_dict(), K_resolved=K)
    return RunTrace(config=config, rounds=rounds, final_x=x, K=K, warnings=warnings)


# ==============================================================================
# Metrics
# ==============================================================================
def min_grad_stationarity(
    trace: RunTrace,
    problem: LeaderProblem,
    grad_fn: Optional[Callable[[LeaderStrategy], Vector]] = None,
) -> Tuple[Optional[int], Optional[float]]:
    """(best_t, min_t ||∇f̃(x_t)||²) over the rounds where the gradient is available.

    Rounds whose gradient raises BoundaryRegimeError are skipped; (None, None) when none is left.
    """
    if not trace.rounds:
        raise ValueError("trace has no rounds")
    use_recorded = grad_fn is None
    if grad_fn is None:
        if not problem.has_hypergradient:
            raise MissingStructureError(
                f"{type(problem).__name__} has no analytic hypergradient; pass a finite-difference grad_fn"
            )
        grad_fn = problem.hypergradient
    best_t: Optional[int] = None
    best = math.inf
    skipped = 0
    for t, r in enumerate(trace.rounds):
        if use_recorded and r.grad_norm_sq is not None:
            value = r.grad_norm_sq
        else:
            try:
                g = grad_fn(r.x_t)
            except BoundaryRegimeError:
                skipped += 1
                continue
            value = float(g @ g)
        if value < best:
            best_t, best = t, value
    if skipped:
        log.warning("min-stationarity skipped %d of %d rounds with no gradient", skipped, len(trace.rounds))
    if best_t is None:
        return None, None
    return best_t, float(best)


def final_hyper_objective(trace: RunTrace, problem: LeaderProblem) -> float:
    if problem.has_solution_map:
        return float(problem.hyper_objective(trace.final_x))
    last = trace.rounds[-1].y_base_K
    if last is None:
        raise MissingStructureError("trace carries no follower response and the problem has no closed-form S(x)")
    return float(problem.evaluate_f(trace.final_x, last))
