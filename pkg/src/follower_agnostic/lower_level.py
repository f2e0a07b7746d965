from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import FEASIBILITY_TOL, FollowerProfile, LeaderStrategy, RateCertificate, Vector
from .errors import ConvergenceError, MissingStructureError, NonFiniteFollowerError

log = logging.getLogger(__name__)

REFERENCE_MULTIPLIER = 10
REFERENCE_RESIDUAL = 1e-8


# ==============================================================================
# Types
# ==============================================================================
@dataclass(frozen=True)
class FollowerConstants:
    L_gx: float
    ell_gy: float

    def __post_init__(self) -> None:
        for name in ("L_gx", "ell_gy"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"FollowerConstants.{name} must be finite and nonnegative, got {value}")


@dataclass(frozen=True)
class FollowerSystem:
    """Followers as seen through their update rule: projected gradient on a potential g(x, ·)."""

    follower_dim: int
    potential_gradient: Callable[[LeaderStrategy, FollowerProfile], Vector]
    projection: Callable[[FollowerProfile], FollowerProfile]
    step_size: float
    rate: RateCertificate
    constants: Optional[FollowerConstants] = None
    potential: Optional[Callable[[LeaderStrategy, FollowerProfile], float]] = None
    feasible: Optional[Callable[[FollowerProfile, float], bool]] = None
    # when set, every inner run returns exact_response(x) instead of iterating
    exact_response: Optional[Callable[[LeaderStrategy], FollowerProfile]] = None

    def __post_init__(self) -> None:
        if self.follower_dim < 1:
            raise ValueError(f"follower_dim must be >= 1, got {self.follower_dim}")
        if not (self.step_size >= 0 and math.isfinite(self.step_size)):
            raise ValueError(f"step_size must be finite and nonnegative, got {self.step_size}")

    def is_feasible(self, y: FollowerProfile, tol: float = FEASIBILITY_TOL) -> bool:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.follower_dim,) or not np.all(np.isfinite(y)):
            return False
        if self.feasible is not None:
            return bool(self.feasible(y, tol))
        return bool(np.max(np.abs(self.projection(y) - y), initial=0.0) <= tol)

    def with_step_size(self, step_size: float, rate: Optional[RateCertificate] = None) -> "FollowerSystem":
        return replace(self, step_size=step_size, rate=rate or self.rate)

    def with_exact_response(self, response: Callable[[LeaderStrategy], FollowerProfile]) -> "FollowerSystem":
        return replace(self, exact_response=response)


@dataclass(frozen=True)
class InnerRunResult:
    y_final: FollowerProfile
    residual: float
    iterates: Optional[Tuple[FollowerProfile, ...]] = None


@dataclass(frozen=True)
class SensitivityCheck:
    measured: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound * (1.0 + 1e-12) + 1e-15


# ==============================================================================
# Projections
# ==============================================================================
def project_box(y: Vector, lo: Vector, hi: Vector) -> Vector:
    y = np.asarray(y, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if y.shape != lo.shape or y.shape != hi.shape:
        raise ValueError(f"dimension mismatch: y {y.shape}, lo {lo.shape}, hi {hi.shape}")
    if np.any(lo > hi):
        raise ValueError("box bounds must satisfy lo <= hi componentwise")
    return np.minimum(np.maximum(y, lo), hi)


def project_simplex(y: Vector, mass: float = 1.0) -> Vector:
    """Euclidean projection onto {q >= 0, sum q = mass} (sort-based, ties broken by index)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("cannot project an empty vector onto the simplex")
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    order = np.argsort(-y, kind="stable")
    u = y[order]
    css = np.cumsum(u) - mass
    ranks = np.arange(1, y.size + 1)
    active = np.nonzero(u - css / ranks > 0)[0]
    k = active[-1]
    theta = css[k] / (k + 1)
    return np.maximum(y - theta, 0.0)


def project_product_simplex(y: Vector, blocks: Sequence[slice], masses: Sequence[float]) -> Vector:
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    for block, mass in zip(blocks, masses):
        out[block] = project_simplex(y[block], mass)
    return out


# ==============================================================================
# Inner loop
# ==============================================================================
def projected_gradient_step(sys: FollowerSystem, x: LeaderStrategy, y: FollowerProfile) -> FollowerProfile:
    grad = np.asarray(sys.potential_gradient(x, y), dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteFollowerError(f"non-finite potential gradient at y={y}")
    return sys.projection(y - sys.step_size * grad)


def run_inner(
    sys: FollowerSystem,
    x: LeaderStrategy,
    y0: FollowerProfile,
    K: int,
    *,
    keep_iterates: bool = False,
) -> InnerRunResult:
    """Apply K projected-gradient steps at leader strategy x starting from y0."""
    if K < 0:
        raise ValueError(f"K must be nonnegative, got {K}")
    if sys.exact_response is not None and K > 0:
        y = np.asarray(sys.exact_response(x), dtype=np.float64)
        return InnerRunResult(y_final=y, residual=0.0, iterates=(np.array(y0, dtype=np.float64), y) if keep_iterates else None)
    y = np.array(y0, dtype=np.float64)
    kept: List[FollowerProfile] = [y.copy()] if keep_iterates else []
    prev = y
    for _ in range(K):
        prev = y
        y = projected_gradient_step(sys, x, y)
        if keep_iterates:
            kept.append(y.copy())
    residual = float(np.linalg.norm(y - prev)) if K > 0 else 0.0
    return InnerRunResult(y_final=y, residual=residual, iterates=tuple(kept) if keep_iterates else None)


def reference_solution(sys: FollowerSystem, x: LeaderStrategy, y0: FollowerProfile, K: int) -> FollowerProfile:
    ref = run_inner(sys, x, y0, REFERENCE_MULTIPLIER * K)
    if ref.residual > REFERENCE_RESIDUAL:
        raise ConvergenceError(
            f"reference run of {REFERENCE_MULTIPLIER * K} steps did not converge (residual {ref.residual:.3e})"
        )
    return ref.y_final


def estimate_contraction_rate(sys: FollowerSystem, x: LeaderStrategy, y0: FollowerProfile, K: int) -> RateCertificate:
    """Fit rho from a log-linear regression of ||y^(k) - S(x)|| over k = 0..K (C = 1 convention)."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    target = reference_solution(sys, x, y0, K)
    run = run_inner(sys, x, y0, K, keep_iterates=True)
    errors = np.array([np.linalg.norm(y - target) for y in run.iterates])
    floor = max(1e-300, 1e-13 * float(errors[0]))
    usable = np.nonzero(errors > floor)[0]
    if usable.size < 2:
        raise ConvergenceError("no measurable contraction: fewer than two iterates away from the reference solution")
    slope = float(np.polyfit(usable.astype(np.float64), np.log(errors[usable]), 1)[0])
    rho = math.exp(slope)
    if not (math.isfinite(rho) and 0.0 < rho < 1.0 - 1e-12):
        raise ConvergenceError(f"fitted contraction factor {rho} is not in (0, 1)")
    log.debug("contraction fit over %d iterates: rho=%.6f", usable.size, rho)
    return RateCertificate.exponential(rho)


def iterate_sensitivity_check(
    sys: FollowerSystem,
    x: LeaderStrategy,
    x_hat: LeaderStrategy,
    y0: FollowerProfile,
    K: int,
) -> SensitivityCheck:
    """Compare ||y^K(x̂) - y^K(x)|| with K L_gx γ ||x̂ - x|| exp(γ ell_gy K), both runs from y0."""
    if sys.constants is None:
        raise MissingStructureError("follower system has no Lipschitz constants (L_gx, ell_gy)")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    measured = float(np.linalg.norm(run_inner(sys, x_hat, y0, K).y_final - run_inner(sys, x, y0, K).y_final))
    gamma = sys.step_size
    dist = float(np.linalg.norm(np.asarray(x_hat) - np.asarray(x)))
    bound = K * sys.constants.L_gx * gamma * dist * math.exp(gamma * sys.constants.ell_gy * K)
    return SensitivityCheck(measured=measured, bound=bound)


def sensitivity_ratios(
    sys: FollowerSystem,
    x: LeaderStrategy,
    direction: Vector,
    y0: FollowerProfile,
    K: int,
    radii: Sequence[float],
) -> Vector:
    """measured / ||x̂ - x|| for x̂ = x + r·direction/||direction|| over the given radii."""
    direction = np.asarray(direction, dtype=np.float64)
    unit = direction / np.linalg.norm(direction)
    base = run_inner(sys, x, y0, K).y_final
    ratios = []
    for r in radii:
        if not r > 0:
            raise ValueError(f"radii must be positive, got {r}")
        moved = run_inner(sys, x + r * unit, y0, K).y_final
        ratios.append(float(np.linalg.norm(moved - base)) / r)
    return np.array(ratios)


def check_potential_descent(
    sys: FollowerSystem, x: LeaderStrategy, y0: FollowerProfile, K: int, tol: float = 1e-12
) -> Tuple[Vector, bool]:
    """Potential values g(x, y^(k)) for k = 0..K and whether they never increase."""
    if sys.potential is None:
        raise MissingStructureError("follower system exposes no potential g(x, y)")
    run = run_inner(sys, x, y0, K, keep_iterates=True)
    values = np.array([sys.potential(x, y) for y in run.iterates])
    scale = np.maximum(1.0, np.abs(values[:-1]))
    monotone = bool(np.all(values[1:] <= values[:-1] + tol * scale))
    return values, monotone
