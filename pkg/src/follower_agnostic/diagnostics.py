"""Empirical instruments: finite-difference hypergradients, estimator error split,
shadow gradient-descent trajectories, Hessian eigenvalues and rate fits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import LeaderProblem, LeaderStrategy, Vector, as_vector
from .errors import ConvergenceError, MissingStructureError
from .estimator import RngStream, oracle_estimator, smoothed_gradient_mc
from .lower_level import REFERENCE_RESIDUAL, FollowerSystem, run_inner
from .solver import RunTrace

log = logging.getLogger(__name__)

GradFn = Callable[[LeaderStrategy], Vector]


def exact_follower_system(problem: LeaderProblem, followers: FollowerSystem) -> FollowerSystem:
    """Same follower system, with every inner run replaced by the closed-form S(x)."""
    if not problem.has_solution_map:
        raise MissingStructureError(f"{type(problem).__name__} has no closed-form solution map")
    return followers.with_exact_response(problem.solution_map)


# ==============================================================================
# Finite-difference hypergradient
# ==============================================================================
def fd_hypergradient(
    problem: LeaderProblem,
    followers: FollowerSystem,
    x: LeaderStrategy,
    h: float = 1e-5,
    K_ref: int = 2000,
    y0: Optional[Vector] = None,
) -> Vector:
    """Central differences of x ↦ f(x, y^(K_ref)(x)), each evaluation warm-started from the converged base."""
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    if K_ref < 1:
        raise ValueError(f"K_ref must be >= 1, got {K_ref}")
    x = as_vector(x, problem.leader_dim, "x")
    start = followers.projection(np.zeros(followers.follower_dim)) if y0 is None else np.asarray(y0, dtype=np.float64)

    def converged(point: Vector, y_start: Vector) -> Vector:
        res = run_inner(followers, point, y_start, K_ref)
        if res.residual > REFERENCE_RESIDUAL:
            raise ConvergenceError(f"inner run of {K_ref} steps did not converge (residual {res.residual:.3e})")
        return res.y_final

    base = converged(x, start)
    grad = np.empty(problem.leader_dim)
    for i in range(problem.leader_dim):
        step = np.zeros(problem.leader_dim)
        step[i] = h
        up = problem.evaluate_f(x + step, converged(x + step, base))
        down = problem.evaluate_f(x - step, converged(x - step, base))
        grad[i] = (up - down) / (2.0 * h)
    return grad


# ==============================================================================
# Error decomposition of the practical estimator
# ==============================================================================
@dataclass(frozen=True)
class ErrorDecomposition:
    rounds: np.ndarray
    deltas: np.ndarray
    grad: np.ndarray
    estimate: np.ndarray
    e1: np.ndarray  # smoothing bias: E[F_orig | x_t] - ∇f̃(x_t)
    e2: np.ndarray  # direction noise: F_orig - E[F_orig | x_t]
    e3: np.ndarray  # follower error: F - F_orig
    mc_stderr: np.ndarray
    d: int

    @staticmethod
    def _sq(rows: np.ndarray) -> np.ndarray:
        return np.sum(rows * rows, axis=1)

    @property
    def e1_sq(self) -> np.ndarray:
        return self._sq(self.e1)

    @property
    def e2_sq(self) -> np.ndarray:
        return self._sq(self.e2)

    @property
    def e3_sq(self) -> np.ndarray:
        return self._sq(self.e3)

    def identity_residual(self) -> float:
        return float(np.max(np.abs(self.e1 + self.e2 + self.e3 + self.grad - self.estimate), initial=0.0))

    def summary(self) -> Dict[str, float]:
        return {
            "rounds": int(self.rounds.size),
            "e1_sq_mean": float(self.e1_sq.mean()),
            "e2_sq_mean": float(self.e2_sq.mean()),
            "e3_sq_mean": float(self.e3_sq.mean()),
            "identity_residual": self.identity_residual(),
        }


def error_decomposition(
    problem: LeaderProblem,
    followers: Optional[FollowerSystem],
    trace: RunTrace,
    n_mc: int,
    rng: RngStream,
    rounds: Optional[Sequence[int]] = None,
    grad_fn: Optional[GradFn] = None,
) -> ErrorDecomposition:
    """Split F̂ - ∇f̃(x_t) into smoothing bias, direction noise and follower error per round.

    The conditional mean of the oracle estimator is taken over n_mc fresh sphere draws at frozen x_t.
    """
    if not problem.has_solution_map:
        raise MissingStructureError(f"{type(problem).__name__} has no closed-form S(x); cannot form f̃ values")
    if grad_fn is None:
        if not problem.has_hypergradient:
            raise MissingStructureError(f"{type(problem).__name__} has no analytic hypergradient")
        grad_fn = problem.hypergradient
    else:
        log.warning("error decomposition with a substitute gradient: e1 absorbs its approximation error")
    del followers  # the trace already carries the follower responses used by F̂

    d = problem.leader_dim
    picked = list(range(len(trace.rounds))) if rounds is None else list(rounds)
    if not picked:
        raise ValueError("no rounds selected for the error decomposition")

    cols: Dict[str, List[Vector]] = {k: [] for k in ("grad", "estimate", "e1", "e2", "e3", "se")}
    deltas = []
    for t in picked:
        r = trace.rounds[t]
        grad = np.asarray(grad_fn(r.x_t), dtype=np.float64)
        f_orig = oracle_estimator(d, r.delta_t, r.v_t, problem.hyper_objective(r.x_hat_t), problem.hyper_objective(r.x_t))
        mc = smoothed_gradient_mc(problem.hyper_objective_many, r.x_t, r.delta_t, n_mc, rng, vectorized=True)
        cols["grad"].append(grad)
        cols["estimate"].append(r.estimate)
        cols["e1"].append(mc.mean - grad)
        cols["e2"].append(f_orig - mc.mean)
        cols["e3"].append(r.estimate - f_orig)
        cols["se"].append(mc.stderr)
        deltas.append(r.delta_t)

    return ErrorDecomposition(
        rounds=np.array(picked, dtype=np.int64),
        deltas=np.array(deltas),
        grad=np.vstack(cols["grad"]),
        estimate=np.vstack(cols["estimate"]),
        e1=np.vstack(cols["e1"]),
        e2=np.vstack(cols["e2"]),
        e3=np.vstack(cols["e3"]),
        mc_stderr=np.vstack(cols["se"]),
        d=d,
    )


@dataclass(frozen=True)
class ErrorBoundCheck:
    e1_sq_max_excess: float
    e1_holds: bool
    e2_sq_mean: float
    e2_bound: float
    e2_holds: bool


def estimator_error_bounds(
    dec: ErrorDecomposition,
    ell_ftilde: float,
    L_ftilde: float,
    clt_sigmas: float = 3.0,
) -> ErrorBoundCheck:
    """Check ||e1|| ≤ ℓδd/2 per round (plus CLT slack) and mean ||e2||² ≤ 4d²L²."""
    d = dec.d
    e1_norm = np.sqrt(dec.e1_sq)
    allowed = ell_ftilde * dec.deltas * d / 2.0 + clt_sigmas * np.linalg.norm(dec.mc_stderr, axis=1)
    e2_mean = float(dec.e2_sq.mean())
    e2_bound = 4.0 * d * d * L_ftilde * L_ftilde
    return ErrorBoundCheck(
        e1_sq_max_excess=float(np.max(e1_norm**2 - allowed**2)),
        e1_holds=bool(np.all(e1_norm <= allowed)),
        e2_sq_mean=e2_mean,
        e2_bound=e2_bound,
        e2_holds=e2_mean <= e2_bound,
    )


# ==============================================================================
# Shadow trajectories
# ==============================================================================
@dataclass(frozen=True)
class ShadowTrajectory:
    anchor: int
    horizon: int
    z: np.ndarray  # (horizon + 1, d); z[0] = x̂_anchor


def shadow_trajectory(
    problem: LeaderProblem, trace: RunTrace, t: int, S: int, grad_fn: Optional[GradFn] = None
) -> ShadowTrajectory:
    """Exact gradient descent from x̂_t with the run's own step sizes η_t, ..., η_{t+S-1}."""
    if S < 0 or t < 0:
        raise ValueError(f"anchor and horizon must be nonnegative, got t={t} S={S}")
    if t + S > len(trace.rounds) or t >= len(trace.rounds):
        raise ValueError(f"horizon overflow: t + S = {t + S} exceeds T = {len(trace.rounds)}")
    if grad_fn is None:
        if not problem.has_hypergradient:
            raise MissingStructureError(f"{type(problem).__name__} has no analytic hypergradient")
        grad_fn = problem.hypergradient

    z = [trace.rounds[t].x_hat_t]
    for s in range(S):
        z.append(z[-1] - trace.rounds[t + s].eta_t * grad_fn(z[-1]))
    return ShadowTrajectory(anchor=t, horizon=S, z=np.vstack(z))


def shadow_trajectory_gap(
    problem: LeaderProblem, trace: RunTrace, t: int, S: int, grad_fn: Optional[GradFn] = None
) -> Vector:
    """g_s = ||x_{t+s} - z_s(x̂_t)|| for s = 0..S."""
    shadow = shadow_trajectory(problem, trace, t, S, grad_fn)
    return np.array([float(np.linalg.norm(trace.leader_iterate(t + s) - shadow.z[s])) for s in range(S + 1)])


# ==============================================================================
# Hessian eigenvalue
# ==============================================================================
def min_hessian_eigenvalue(
    grad_fn: GradFn,
    x: LeaderStrategy,
    probe_h: Optional[float] = None,
    iters: int = 1000,
    tol: float = 1e-10,
    residual_tol: float = 1e-6,
) -> float:
    """λ_min(∇²f̃(x)) via finite-difference Hessian-vector products and shifted power iteration.

    Stops once the Rayleigh quotient settles to within tol and ||Hu - λu|| is below residual_tol,
    both relative to the spectral-norm bound.
    """
    x = as_vector(x, name="x")
    d = x.shape[0]
    h = 1e-4 * (1.0 + float(np.linalg.norm(x))) if probe_h is None else float(probe_h)
    if not h > 0:
        raise ValueError(f"probe_h must be positive, got {h}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")

    def hvp(u: Vector) -> Vector:
        return (np.asarray(grad_fn(x + h * u)) - np.asarray(grad_fn(x - h * u))) / (2.0 * h)

    # Frobenius norm of the sampled columns bounds the spectral norm
    shift = float(np.sqrt(sum(float(np.sum(hvp(e) ** 2)) for e in np.eye(d))))
    if shift == 0.0:
        return 0.0
    scale = max(1.0, shift)

    u = np.linspace(1.0, 2.0, d)
    u /= np.linalg.norm(u)
    lam_prev = math.inf
    for k in range(iters):
        Hu = hvp(u)
        lam = float(u @ Hu)
        residual = float(np.linalg.norm(Hu - lam * u))
        if abs(lam - lam_prev) <= tol * scale and residual <= residual_tol * scale:
            log.debug("power iteration converged after %d steps (residual %.3g)", k + 1, residual)
            return lam
        w = shift * u - Hu
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return shift
        u = w / norm
        lam_prev = lam
    raise ConvergenceError(f"power iteration did not converge in {iters} iterations")


# ==============================================================================
# Rate fits and multi-seed reports
# ==============================================================================
def loglog_slope(values: Sequence[Tuple[float, float]]) -> float:
    pts = np.asarray(values, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError(f"need at least 3 (T, y) pairs, got {pts.shape}")
    if np.any(pts <= 0):
        raise ValueError("log-log fit needs positive T and y values")
    return float(np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)[0])


@dataclass(frozen=True)
class RateFit:
    slope: float
    lo: float
    hi: float

    @property
    def within(self) -> bool:
        return self.lo <= self.slope <= self.hi


def rate_fit(values: Sequence[Tuple[float, float]], lo: float = -0.7, hi: float = -0.3) -> RateFit:
    return RateFit(slope=loglog_slope(values), lo=lo, hi=hi)


def _hyper_values(problem: LeaderProblem, X: np.ndarray) -> Vector:
    return np.asarray(problem.hyper_objective_many(X), dtype=np.float64)


def expected_descent(traces: Sequence[RunTrace], problem: LeaderProblem) -> Tuple[float, float]:
    """Seed means of f̃(x_0) and f̃(x_T)."""
    if not traces:
        raise ValueError("no traces given")
    first = _hyper_values(problem, np.vstack([tr.leader_iterate(0) for tr in traces]))
    last = _hyper_values(problem, np.vstack([tr.final_x for tr in traces]))
    return float(first.mean()), float(last.mean())


def stationarity_plateau(
    traces: Sequence[RunTrace], problem: LeaderProblem, tail_fraction: float = 0.25, grad_fn: Optional[GradFn] = None
) -> float:
    """Seed mean of the late-round average of ||∇f̃(x_t)||.

    The inner-solver bias in the estimator scales with ρ^K, so the norm (not its square)
    is the quantity whose floor tracks ρ^K.
    """
    if not traces:
        raise ValueError("no traces given")
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    if grad_fn is None:
        if not problem.has_hypergradient:
            raise MissingStructureError(f"{type(problem).__name__} has no analytic hypergradient")
        grad_fn = problem.hypergradient
    levels = []
    for tr in traces:
        start = len(tr.rounds) - max(1, int(math.ceil(tail_fraction * len(tr.rounds))))
        levels.append(np.mean([np.linalg.norm(grad_fn(r.x_t)) for r in tr.rounds[start:]]))
    return float(np.mean(levels))


def plateau_ratio(high_K_level: float, low_K_level: float) -> float:
    if not low_K_level > 0:
        raise ValueError(f"reference plateau must be positive, got {low_K_level}")
    return high_K_level / low_K_level


@dataclass(frozen=True)
class SaddleEscapeReport:
    n_runs: int
    n_escaped: int
    escape_times: List[Optional[int]]
    eps: float

    @property
    def fraction(self) -> float:
        return self.n_escaped / self.n_runs if self.n_runs else 0.0


def saddle_escape_report(
    traces: Sequence[RunTrace], saddle: LeaderStrategy, eps: float = 0.01, tail_fraction: float = 0.25
) -> SaddleEscapeReport:
    """A run escapes when ||x_t - x*||² > eps for every iterate in its final tail_fraction.

    escape_times[i] is the first t after which the run stays outside the eps-ball (None if it ends inside).
    """
    saddle = np.asarray(saddle, dtype=np.float64)
    times: List[Optional[int]] = []
    escaped = 0
    for tr in traces:
        dist_sq = np.sum((tr.leader_iterates() - saddle) ** 2, axis=1)
        T = len(tr.rounds)
        tail_start = T - int(math.ceil(tail_fraction * T))
        if np.all(dist_sq[tail_start:] > eps):
            escaped += 1
        inside = np.nonzero(dist_sq <= eps)[0]
        if inside.size == 0:
            times.append(0)
        elif inside[-1] == T:
            times.append(None)
        else:
            times.append(int(inside[-1]) + 1)
    return SaddleEscapeReport(n_runs=len(traces), n_escaped=escaped, escape_times=times, eps=eps)
