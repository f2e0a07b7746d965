from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Any, Dict, List, Literal, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import MissingStructureError, ScheduleError

if TYPE_CHECKING:
    from .lower_level import FollowerSystem

Vector = NDArray[np.float64]

# LeaderStrategy lives in X = R^d, FollowerProfile in Y ⊂ R^{d'}; both are plain float64 vectors.
LeaderStrategy = Vector
FollowerProfile = Vector

FEASIBILITY_TOL = 1e-9
DEFAULT_DELTA_BAR = 0.5
_CEIL_SLACK = 1e-9


def as_vector(values: ArrayLike, length: Optional[int] = None, name: str = "vector") -> Vector:
    """Copy `values` into a finite 1-D float64 array, checking its length."""
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries: {arr}")
    return arr


# ==============================================================================
# Problem constants and contracts
# ==============================================================================
@dataclass(frozen=True)
class ProblemConstants:
    L_fx: Optional[float] = None
    L_fy: Optional[float] = None
    ell_fy: Optional[float] = None
    L_S: Optional[float] = None
    L_ftilde: Optional[float] = None
    ell_ftilde: Optional[float] = None

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value is None:
                continue
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"ProblemConstants.{name} must be finite and nonnegative, got {value}")

    def to_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)


class LeaderProblem(ABC):
    """Evaluation contract for the leader objective f(x, y).

    Optional structure (closed-form S(x), analytic ∇f̃, a known saddle point)
    is advertised by overriding the matching method; the base versions raise
    MissingStructureError.
    """

    leader_dim: int
    follower_dim: int
    constants: Optional[ProblemConstants] = None

    @abstractmethod
    def evaluate_f(self, x: LeaderStrategy, y: FollowerProfile) -> float:
        ...

    @abstractmethod
    def follower_system(self, step_size: Optional[float] = None) -> "FollowerSystem":
        ...

    def solution_map(self, x: LeaderStrategy) -> FollowerProfile:
        raise MissingStructureError(f"{type(self).__name__} has no closed-form solution map")

    def hypergradient(self, x: LeaderStrategy) -> Vector:
        raise MissingStructureError(f"{type(self).__name__} has no analytic hypergradient")

    def saddle_point(self) -> LeaderStrategy:
        raise MissingStructureError(f"{type(self).__name__} declares no saddle point")

    @property
    def has_solution_map(self) -> bool:
        return type(self).solution_map is not LeaderProblem.solution_map

    @property
    def has_hypergradient(self) -> bool:
        return type(self).hypergradient is not LeaderProblem.hypergradient

    def hyper_objective(self, x: LeaderStrategy) -> float:
        return self.evaluate_f(x, self.solution_map(x))

    def hyper_objective_many(self, X: NDArray[np.float64]) -> Vector:
        return np.array([self.hyper_objective(row) for row in np.atleast_2d(X)], dtype=np.float64)

    def describe(self) -> Dict[str, Any]:
        return {
            "problem": type(self).__name__,
            "leader_dim": self.leader_dim,
            "follower_dim": self.follower_dim,
            "constants": self.constants.to_dict() if self.constants else None,
        }


# ==============================================================================
# Schedules
# ==============================================================================
@dataclass(frozen=True)
class ScheduleParams:
    eta_bar: float
    delta_bar: float
    d: int

    def __post_init__(self) -> None:
        if not (self.eta_bar > 0 and math.isfinite(self.eta_bar)):
            raise ValueError(f"eta_bar must be positive, got {self.eta_bar}")
        if not (self.delta_bar > 0 and math.isfinite(self.delta_bar)):
            raise ValueError(f"delta_bar must be positive, got {self.delta_bar}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")

    def validate_against(self, constants: Optional[ProblemConstants]) -> List[str]:
        """Enforce eta_bar <= d / (2 ell_ftilde); returns warnings when it cannot be checked."""
        ell = constants.ell_ftilde if constants else None
        if ell is None:
            return [f"step condition eta_bar <= d/(2*ell_ftilde) unverified: ell_ftilde unknown (eta_bar={self.eta_bar})"]
        if ell > 0 and self.eta_bar > self.d / (2.0 * ell):
            raise ScheduleError(
                f"eta_bar={self.eta_bar} violates eta_bar <= d/(2*ell_ftilde) = {self.d / (2.0 * ell)}"
            )
        return []


def eta_t(p: ScheduleParams, t: int) -> float:
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return p.eta_bar * (t + 1) ** -0.5 / p.d


def delta_t(p: ScheduleParams, t: int) -> float:
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return p.delta_bar * (t + 1) ** -0.25 / math.sqrt(p.d)


def default_eta_bar(d: int, constants: Optional[ProblemConstants]) -> float:
    ell = constants.ell_ftilde if constants else None
    if ell:
        return d / (4.0 * ell)
    return 0.1 * d


# ==============================================================================
# Rate certificates and inner-iteration budgets
# ==============================================================================
@dataclass(frozen=True)
class RateCertificate:
    kind: Literal["polynomial", "exponential"]
    C: float = 1.0
    lam: Optional[float] = None
    rho: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.C > 0 and math.isfinite(self.C)):
            raise ValueError(f"C must be positive, got {self.C}")
        if self.kind == "polynomial":
            if self.lam is None or not self.lam > 0 or self.rho is not None:
                raise ValueError(f"polynomial certificate needs lam > 0 and no rho, got lam={self.lam} rho={self.rho}")
        elif self.kind == "exponential":
            if self.rho is None or not 0.0 < self.rho < 1.0 or self.lam is not None:
                raise ValueError(f"exponential certificate needs rho in (0,1) and no lam, got rho={self.rho} lam={self.lam}")
        else:
            raise ValueError(f"unknown certificate kind: {self.kind}")

    @classmethod
    def polynomial(cls, C: float, lam: float) -> "RateCertificate":
        return cls(kind="polynomial", C=C, lam=lam)

    @classmethod
    def exponential(cls, rho: float, C: float = 1.0) -> "RateCertificate":
        return cls(kind="exponential", C=C, rho=rho)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def alpha_of_K(r: RateCertificate, K: int) -> float:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if r.kind == "polynomial":
        return r.C * float(K) ** (-r.lam)
    # C is not part of alpha for the exponential kind
    return r.rho ** K


def choose_inner_iterations(r: RateCertificate, T: int, d: int) -> int:
    """Smallest K with alpha(K) small enough for T rounds in dimension d (natural log)."""
    if T < 1 or d < 1:
        raise ValueError(f"T and d must be >= 1, got T={T} d={d}")
    if r.kind == "polynomial":
        if r.lam is None or r.lam <= 0:
            raise ValueError(f"lam must be positive, got {r.lam}")
        bound = float(T) ** (1.0 / (2.0 * r.lam)) * float(d) ** (2.0 / r.lam)
    else:
        if r.rho is None or not 0.0 < r.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {r.rho}")
        bound = (0.5 * math.log(T) + 2.0 * math.log(d)) / abs(math.log(r.rho))
    return max(1, math.ceil(bound - _CEIL_SLACK * max(1.0, bound)))


def inner_step_condition(L_S: float, K: int) -> float:
    """Step-size ceiling log(sqrt(2 L_S)) / (2 K L_S) paired with the exponential K rule."""
    if L_S <= 0 or K < 1:
        raise ValueError(f"need L_S > 0 and K >= 1, got L_S={L_S} K={K}")
    return math.log(math.sqrt(2.0 * L_S)) / (2.0 * K * L_S)
