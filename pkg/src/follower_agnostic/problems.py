from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .core import (
    FEASIBILITY_TOL,
    FollowerProfile,
    LeaderProblem,
    LeaderStrategy,
    ProblemConstants,
    RateCertificate,
    Vector,
    as_vector,
)
from .errors import BoundaryRegimeError, ConfigError
from .lower_level import FollowerConstants, FollowerSystem, project_box, project_product_simplex
from .utils import read_json

INTERIOR_MARGIN = 1e-6
MAX_BRUTEFORCE_PATHS = 4
MAX_BRUTEFORCE_POINTS = 5_000_000
_RHO_FLOOR = 1e-12


def _spectral_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def _box_contraction(step_size: float) -> RateCertificate:
    # projected gradient on a unit-curvature quadratic contracts by |1 - γ| per step
    if not 0.0 < step_size < 2.0:
        raise ValueError(f"step_size must lie in (0, 2) for a contraction, got {step_size}")
    return RateCertificate.exponential(max(abs(1.0 - step_size), _RHO_FLOOR))


def _box_bounds(lo: ArrayLike, hi: ArrayLike, n: int) -> Tuple[Vector, Vector]:
    lo_v = np.broadcast_to(np.asarray(lo, dtype=np.float64), (n,)).copy()
    hi_v = np.broadcast_to(np.asarray(hi, dtype=np.float64), (n,)).copy()
    if np.any(lo_v > hi_v):
        raise ValueError("box bounds must satisfy lo <= hi componentwise")
    return lo_v, hi_v


def _logcosh(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(z, -z) - math.log(2.0)


# ==============================================================================
# Convex lower level with affine response: y = clamp(Bx + c)
# ==============================================================================
class _AffineResponseProblem(LeaderProblem):
    """Followers minimise g(x, y) = ½||y - Bx - c||² over a box, so S(x) = clamp(Bx + c)."""

    def __init__(self, B: ArrayLike, c: ArrayLike, lo: ArrayLike, hi: ArrayLike, step_size: float) -> None:
        self.B = np.atleast_2d(np.array(B, dtype=np.float64))
        self.follower_dim, self.leader_dim = self.B.shape
        self.c = as_vector(c, self.follower_dim, "c")
        self.lo, self.hi = _box_bounds(lo, hi, self.follower_dim)
        self.step_size = float(step_size)
        self.B_norm = _spectral_norm(self.B)

    def response(self, x: LeaderStrategy) -> Vector:
        return self.B @ np.asarray(x, dtype=np.float64) + self.c

    def solution_map(self, x: LeaderStrategy) -> FollowerProfile:
        return project_box(self.response(x), self.lo, self.hi)

    def check_interior(self, x: LeaderStrategy, margin: float = INTERIOR_MARGIN) -> Vector:
        z = self.response(x)
        clamped = np.nonzero((z <= self.lo + margin) | (z >= self.hi - margin))[0]
        if clamped.size:
            raise BoundaryRegimeError(
                f"follower response is clamped at coordinates {clamped.tolist()}; no closed-form hypergradient"
            )
        return z

    def potential(self, x: LeaderStrategy, y: FollowerProfile) -> float:
        r = np.asarray(y) - self.response(x)
        return 0.5 * float(r @ r)

    def potential_gradient(self, x: LeaderStrategy, y: FollowerProfile) -> Vector:
        return np.asarray(y, dtype=np.float64) - self.response(x)

    def is_in_box(self, y: FollowerProfile, tol: float = FEASIBILITY_TOL) -> bool:
        return bool(np.all(y >= self.lo - tol) and np.all(y <= self.hi + tol))

    def follower_system(self, step_size: Optional[float] = None) -> FollowerSystem:
        gamma = self.step_size if step_size is None else float(step_size)
        return FollowerSystem(
            follower_dim=self.follower_dim,
            potential_gradient=self.potential_gradient,
            projection=partial(project_box, lo=self.lo, hi=self.hi),
            step_size=gamma,
            rate=_box_contraction(gamma),
            constants=FollowerConstants(L_gx=self.B_norm, ell_gy=1.0),
            potential=self.potential,
            feasible=self.is_in_box,
        )

    def _responses_many(self, X: np.ndarray) -> np.ndarray:
        return np.clip(np.atleast_2d(X) @ self.B.T + self.c, self.lo, self.hi)

    def _max_distance_in_box(self, point: Vector) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lo - point), np.abs(self.hi - point))))


class QuadraticBilevel(_AffineResponseProblem):
    """f(x,y) = ½||x - a||² + ½||y - b||², g(x,y) = ½||y - Bx - c||², Y a box."""

    def __init__(
        self,
        a: ArrayLike,
        b: ArrayLike,
        B: ArrayLike,
        c: ArrayLike,
        lo: ArrayLike,
        hi: ArrayLike,
        step_size: float = 0.5,
    ) -> None:
        super().__init__(B, c, lo, hi, step_size)
        self.a = as_vector(a, self.leader_dim, "a")
        self.b = as_vector(b, self.follower_dim, "b")
        self.constants = ProblemConstants(
            L_fy=self._max_distance_in_box(self.b),
            ell_fy=1.0,
            L_S=self.B_norm,
            ell_ftilde=1.0 + self.B_norm**2,
        )

    @classmethod
    def random(
        cls,
        d: int,
        follower_dim: Optional[int] = None,
        seed: int = 0,
        box_radius: float = 10.0,
        coupling: float = 0.5,
        step_size: float = 0.5,
    ) -> "QuadraticBilevel":
        m = follower_dim or d
        rng = np.random.default_rng(seed)
        a = rng.normal(size=d)
        b = rng.normal(size=m)
        B = coupling * rng.normal(size=(m, d)) / math.sqrt(d)
        c = 0.1 * rng.normal(size=m)
        return cls(a, b, B, c, -box_radius * np.ones(m), box_radius * np.ones(m), step_size)

    def evaluate_f(self, x: LeaderStrategy, y: FollowerProfile) -> float:
        dx = np.asarray(x) - self.a
        dy = np.asarray(y) - self.b
        return 0.5 * float(dx @ dx) + 0.5 * float(dy @ dy)

    def hypergradient(self, x: LeaderStrategy) -> Vector:
        return quad_hypergradient(self, x)

    def hyper_objective_many(self, X: np.ndarray) -> Vector:
        X = np.atleast_2d(X)
        Y = self._responses_many(X)
        return 0.5 * np.sum((X - self.a) ** 2, axis=1) + 0.5 * np.sum((Y - self.b) ** 2, axis=1)

    def stationary_point(self) -> LeaderStrategy:
        lhs = np.eye(self.leader_dim) + self.B.T @ self.B
        return np.linalg.solve(lhs, self.a + self.B.T @ (self.b - self.c))


def quad_solution_map(qb: QuadraticBilevel, x: LeaderStrategy) -> FollowerProfile:
    return qb.solution_map(x)


def quad_hypergradient(qb: QuadraticBilevel, x: LeaderStrategy) -> Vector:
    z = qb.check_interior(x)
    return (np.asarray(x, dtype=np.float64) - qb.a) + qb.B.T @ (z - qb.b)


class LogCoshBilevel(_AffineResponseProblem):
    """Smooth non-quadratic benchmark with globally Lipschitz, smooth f̃.

    f(x,y) = Σ log cosh(x_i) + Σ log cosh(y_j - b_j) with the same affine follower
    response as QuadraticBilevel, so ∇f̃(x) = tanh(x) + Bᵀ tanh(Bx + c - b) in the interior.
    """

    def __init__(
        self,
        b: ArrayLike,
        B: ArrayLike,
        c: ArrayLike,
        lo: ArrayLike,
        hi: ArrayLike,
        step_size: float = 0.5,
    ) -> None:
        super().__init__(B, c, lo, hi, step_size)
        self.b = as_vector(b, self.follower_dim, "b")
        d, m = self.leader_dim, self.follower_dim
        self.constants = ProblemConstants(
            L_fx=math.sqrt(d),
            L_fy=math.sqrt(m),
            ell_fy=1.0,
            L_S=self.B_norm,
            L_ftilde=math.sqrt(d) + self.B_norm * math.sqrt(m),
            ell_ftilde=1.0 + self.B_norm**2,
        )

    @classmethod
    def random(
        cls,
        d: int,
        follower_dim: Optional[int] = None,
        seed: int = 0,
        box_radius: float = 10.0,
        coupling: float = 0.5,
        step_size: float = 0.5,
    ) -> "LogCoshBilevel":
        m = follower_dim or d
        rng = np.random.default_rng(seed)
        b = rng.normal(size=m)
        B = coupling * rng.normal(size=(m, d)) / math.sqrt(d)
        c = 0.1 * rng.normal(size=m)
        return cls(b, B, c, -box_radius * np.ones(m), box_radius * np.ones(m), step_size)

    def evaluate_f(self, x: LeaderStrategy, y: FollowerProfile) -> float:
        return float(np.sum(_logcosh(np.asarray(x))) + np.sum(_logcosh(np.asarray(y) - self.b)))

    def hypergradient(self, x: LeaderStrategy) -> Vector:
        z = self.check_interior(x)
        return np.tanh(np.asarray(x, dtype=np.float64)) + self.B.T @ np.tanh(z - self.b)

    def hyper_objective_many(self, X: np.ndarray) -> Vector:
        X = np.atleast_2d(X)
        Y = self._responses_many(X)
        return np.sum(_logcosh(X), axis=1) + np.sum(_logcosh(Y - self.b), axis=1)


# ==============================================================================
# Strict saddle
# ==============================================================================
class StrictSaddleProblem(LeaderProblem):
    """f(x,y) = ½xᵀDx + (κ/4)Σx_i⁴ + ½||y||² with followers minimising ½||y||², so S ≡ 0.

    κ = 0 gives the pure saddle f̃(x) = ½xᵀDx; κ > 0 confines escaping iterates.
    """

    def __init__(
        self,
        diag: Sequence[float],
        quartic: float = 0.0,
        follower_dim: int = 1,
        box_radius: float = 1.0,
        step_size: float = 0.5,
    ) -> None:
        self.D = as_vector(diag, name="diag")
        if not np.any(self.D < 0):
            raise ValueError(f"D needs at least one negative entry for a strict saddle, got {self.D.tolist()}")
        if quartic < 0:
            raise ValueError(f"quartic coefficient must be nonnegative, got {quartic}")
        self.quartic = float(quartic)
        self.leader_dim = self.D.shape[0]
        self.follower_dim = int(follower_dim)
        self.lo = -box_radius * np.ones(self.follower_dim)
        self.hi = box_radius * np.ones(self.follower_dim)
        self.step_size = float(step_size)
        self.constants = ProblemConstants(
            L_fy=box_radius * math.sqrt(self.follower_dim),
            ell_fy=1.0,
            L_S=0.0,
            ell_ftilde=float(np.max(np.abs(self.D))) if self.quartic == 0.0 else None,
        )

    def evaluate_f(self, x: LeaderStrategy, y: FollowerProfile) -> float:
        x = np.asarray(x)
        y = np.asarray(y)
        return 0.5 * float(x @ (self.D * x)) + 0.25 * self.quartic * float(np.sum(x**4)) + 0.5 * float(y @ y)

    def solution_map(self, x: LeaderStrategy) -> FollowerProfile:
        return np.zeros(self.follower_dim)

    def hypergradient(self, x: LeaderStrategy) -> Vector:
        x = np.asarray(x, dtype=np.float64)
        return self.D * x + self.quartic * x**3

    def hyper_objective_many(self, X: np.ndarray) -> Vector:
        X = np.atleast_2d(X)
        return 0.5 * np.sum(self.D * X * X, axis=1) + 0.25 * self.quartic * np.sum(X**4, axis=1)

    def saddle_point(self) -> LeaderStrategy:
        return np.zeros(self.leader_dim)

    def follower_system(self, step_size: Optional[float] = None) -> FollowerSystem:
        gamma = self.step_size if step_size is None else float(step_size)
        return FollowerSystem(
            follower_dim=self.follower_dim,
            potential_gradient=lambda x, y: np.asarray(y, dtype=np.float64),
            projection=partial(project_box, lo=self.lo, hi=self.hi),
            step_size=gamma,
            rate=_box_contraction(gamma),
            constants=FollowerConstants(L_gx=0.0, ell_gy=1.0),
            potential=lambda x, y: 0.5 * float(np.asarray(y) @ np.asarray(y)),
        )


# ==============================================================================
# Routing toll design
# ==============================================================================
@dataclass(frozen=True)
class Edge:
    id: str
    a: float
    b: float


@dataclass(frozen=True)
class OdPair:
    demand: float
    paths: Tuple[Tuple[str, ...], ...]


class RoutingInstance:
    """Network with affine latencies ℓ_e(w) = a_e w + b_e, explicit OD path sets and toll weight λ."""

    def __init__(self, edges: Sequence[Edge], od_pairs: Sequence[OdPair], lambda_reg: float = 0.0) -> None:
        self.edges: Tuple[Edge, ...] = tuple(edges)
        self.od_pairs: Tuple[OdPair, ...] = tuple(od_pairs)
        self.lambda_reg = float(lambda_reg)
        self._validate()

        self.edge_ids: Tuple[str, ...] = tuple(e.id for e in self.edges)
        self.slopes = np.array([e.a for e in self.edges], dtype=np.float64)
        self.intercepts = np.array([e.b for e in self.edges], dtype=np.float64)
        index = {eid: i for i, eid in enumerate(self.edge_ids)}

        columns: List[np.ndarray] = []
        self.blocks: List[slice] = []
        start = 0
        for od in self.od_pairs:
            for path in od.paths:
                col = np.zeros(len(self.edges))
                for eid in path:
                    col[index[eid]] += 1.0
                columns.append(col)
            self.blocks.append(slice(start, start + len(od.paths)))
            start += len(od.paths)
        self.incidence = np.column_stack(columns)
        self.masses = np.array([od.demand for od in self.od_pairs], dtype=np.float64)
        self.n_edges = len(self.edges)
        self.n_paths = start

        self.tangent_basis = self._tangent_basis()
        curvatures = self.reduced_curvatures()
        if curvatures.size and curvatures[0] <= 1e-12:
            raise ConfigError("Beckmann potential is not strictly convex on the flow set: add positive slopes")

    def _validate(self) -> None:
        if not self.edges:
            raise ConfigError("edges: at least one edge is required")
        seen = set()
        for i, e in enumerate(self.edges):
            if e.id in seen:
                raise ConfigError(f"edges[{i}]: duplicate edge id {e.id!r}")
            seen.add(e.id)
            if not (math.isfinite(e.a) and e.a >= 0):
                raise ConfigError(f"edges[{i}]: latency slope a must be nonnegative, got {e.a}")
            if not (math.isfinite(e.b) and e.b >= 0):
                raise ConfigError(f"edges[{i}]: latency intercept b must be nonnegative, got {e.b}")
        if not self.od_pairs:
            raise ConfigError("od_pairs: at least one OD pair is required")
        for i, od in enumerate(self.od_pairs):
            if not (math.isfinite(od.demand) and od.demand > 0):
                raise ConfigError(f"od_pairs[{i}]: demand must be positive, got {od.demand}")
            if not od.paths:
                raise ConfigError(f"od_pairs[{i}]: at least one path is required")
            for j, path in enumerate(od.paths):
                if not path:
                    raise ConfigError(f"od_pairs[{i}].paths[{j}]: empty path")
                for eid in path:
                    if eid not in seen:
                        raise ConfigError(f"od_pairs[{i}].paths[{j}]: unknown edge id {eid!r}")
        if not (math.isfinite(self.lambda_reg) and self.lambda_reg >= 0):
            raise ConfigError(f"lambda: toll weight must be nonnegative, got {self.lambda_reg}")

    def _tangent_basis(self) -> np.ndarray:
        constraints = np.zeros((len(self.blocks), self.n_paths))
        for i, block in enumerate(self.blocks):
            constraints[i, block] = 1.0
        _, s, vt = np.linalg.svd(constraints)
        rank = int(np.sum(s > 1e-12))
        return vt[rank:].T

    def reduced_curvatures(self) -> Vector:
        """Eigenvalues (ascending) of the Beckmann Hessian restricted to directions that keep demands fixed."""
        if self.tangent_basis.shape[1] == 0:
            return np.zeros(0)
        hessian = self.incidence.T @ (self.slopes[:, None] * self.incidence)
        return np.linalg.eigvalsh(self.tangent_basis.T @ hessian @ self.tangent_basis)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "RoutingInstance":
        try:
            edges = [Edge(id=str(e["id"]), a=float(e["a"]), b=float(e.get("b", 0.0))) for e in doc["edges"]]
            od_pairs = [
                OdPair(demand=float(od["demand"]), paths=tuple(tuple(str(eid) for eid in p) for p in od["paths"]))
                for od in doc["od_pairs"]
            ]
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed routing instance: missing or invalid field {e}") from e
        return cls(edges, od_pairs, float(doc.get("lambda", 0.0)))

    @classmethod
    def load(cls, path: Path) -> "RoutingInstance":
        return cls.from_dict(read_json(Path(path)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "edges": [{"id": e.id, "a": e.a, "b": e.b} for e in self.edges],
            "od_pairs": [{"demand": od.demand, "paths": [list(p) for p in od.paths]} for od in self.od_pairs],
            "lambda": self.lambda_reg,
        }

    def with_lambda(self, lambda_reg: float) -> "RoutingInstance":
        return RoutingInstance(self.edges, self.od_pairs, lambda_reg)

    def even_split(self) -> FollowerProfile:
        q = np.empty(self.n_paths)
        for block, mass in zip(self.blocks, self.masses):
            q[block] = mass / (block.stop - block.start)
        return q

    def project_flows(self, q: Vector) -> FollowerProfile:
        return project_product_simplex(q, self.blocks, self.masses)

    def is_feasible(self, q: FollowerProfile, tol: float = FEASIBILITY_TOL) -> bool:
        q = np.asarray(q)
        if np.any(q < -tol):
            return False
        return all(abs(float(q[block].sum()) - mass) <= tol for block, mass in zip(self.blocks, self.masses))

    def _check_flows(self, q: ArrayLike) -> Vector:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.n_paths,):
            raise ValueError(f"path flows have shape {q.shape}, expected ({self.n_paths},)")
        return q

    def _check_tolls(self, p: ArrayLike) -> Vector:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (self.n_edges,):
            raise ValueError(f"tolls have shape {p.shape}, expected ({self.n_edges},)")
        return p


def edge_flows(inst: RoutingInstance, q: ArrayLike) -> Vector:
    return inst.incidence @ inst._check_flows(q)


def beckmann_potential(inst: RoutingInstance, q: ArrayLike, p: ArrayLike) -> float:
    w = edge_flows(inst, q)
    p = inst._check_tolls(p)
    return float(np.sum(0.5 * inst.slopes * w * w + (inst.intercepts + p) * w))


def beckmann_gradient(inst: RoutingInstance, q: ArrayLike, p: ArrayLike) -> Vector:
    """Path costs Σ_{e∈path} (ℓ_e(w_e) + p_e), the gradient of Φ(·, p)."""
    w = edge_flows(inst, q)
    p = inst._check_tolls(p)
    return inst.incidence.T @ (inst.slopes * w + inst.intercepts + p)


def leader_routing_objective(inst: RoutingInstance, p: ArrayLike, q: ArrayLike) -> float:
    w = edge_flows(inst, q)
    p = inst._check_tolls(p)
    return float(np.sum(w * (inst.slopes * w + inst.intercepts)) + inst.lambda_reg * float(p @ p))


def _compositions(n: int, grid: int) -> np.ndarray:
    """All nonnegative integer vectors of length n summing to grid."""
    if n == 1:
        return np.array([[grid]], dtype=np.int64)
    if n == 2:
        k = np.arange(grid + 1, dtype=np.int64)
        return np.column_stack([k, grid - k])
    blocks = []
    for k in range(grid + 1):
        rest = _compositions(n - 1, grid - k)
        blocks.append(np.column_stack([np.full(rest.shape[0], k, dtype=np.int64), rest]))
    return np.vstack(blocks)


def wardrop_bruteforce(inst: RoutingInstance, p: ArrayLike, grid: int = 1000) -> FollowerProfile:
    """Grid minimiser of Φ(·, p) over the flow set (test oracle for small instances)."""
    if inst.n_paths > MAX_BRUTEFORCE_PATHS:
        raise ValueError(f"too many paths for brute force: {inst.n_paths} > {MAX_BRUTEFORCE_PATHS}")
    if grid < 1:
        raise ValueError(f"grid must be positive, got {grid}")
    p = inst._check_tolls(p)

    counts = [math.comb(grid + (b.stop - b.start) - 1, b.stop - b.start - 1) for b in inst.blocks]
    if math.prod(counts) > MAX_BRUTEFORCE_POINTS:
        raise ValueError(f"grid of {math.prod(counts)} points is too fine; lower grid below {grid}")

    candidates = None
    for block, mass in zip(inst.blocks, inst.masses):
        flows = _compositions(block.stop - block.start, grid) * (mass / grid)
        if candidates is None:
            candidates = flows
        else:
            n_prev = candidates.shape[0]
            candidates = np.hstack([np.repeat(candidates, flows.shape[0], axis=0), np.tile(flows, (n_prev, 1))])

    W = candidates @ inst.incidence.T
    phi = W * W @ (0.5 * inst.slopes) + W @ (inst.intercepts + p)
    return candidates[int(np.argmin(phi))].astype(np.float64)


def balanced_toll_grid(resolution: float = 1e-3, radius: float = 1.0) -> List[Vector]:
    """Tolls (s/2, -s/2) for s on a grid over [-radius, radius].

    On two parallel links only the difference s moves the flow, and these are the
    smallest-norm tolls realising each s.
    """
    if not (resolution > 0 and radius > 0):
        raise ValueError(f"resolution and radius must be positive, got {resolution} and {radius}")
    n = int(round(radius / resolution))
    return [np.array([0.5 * k * resolution, -0.5 * k * resolution]) for k in range(-n, n + 1)]


def toll_grid_search(
    inst: RoutingInstance, tolls: Iterable[ArrayLike], grid: int = 1000
) -> Tuple[Vector, float]:
    """Best toll among the candidates, each scored at its brute-force Wardrop flow."""
    best_p, best_value = None, math.inf
    for p in tolls:
        p = inst._check_tolls(p)
        value = leader_routing_objective(inst, p, wardrop_bruteforce(inst, p, grid))
        if value < best_value:
            best_p, best_value = p.copy(), value
    if best_p is None:
        raise ValueError("no toll candidates given")
    return best_p, best_value


class RoutingGame(LeaderProblem):
    """Toll design: the leader sets edge tolls p, travellers reach a Wardrop flow q."""

    def __init__(self, instance: RoutingInstance, step_size: float = 0.5) -> None:
        self.instance = instance
        self.leader_dim = instance.n_edges
        self.follower_dim = instance.n_paths
        self.step_size = float(step_size)
        self.constants = None

    def evaluate_f(self, x: LeaderStrategy, y: FollowerProfile) -> float:
        return leader_routing_objective(self.instance, x, y)

    def follower_system(self, step_size: Optional[float] = None) -> FollowerSystem:
        inst = self.instance
        gamma = self.step_size if step_size is None else float(step_size)
        curv = inst.reduced_curvatures()
        if curv.size:
            rho = max(abs(1.0 - gamma * curv[0]), abs(1.0 - gamma * curv[-1]))
        else:
            rho = 0.0
        if rho >= 1.0:
            raise ValueError(f"step_size {gamma} is too large for a contraction (curvatures {curv.tolist()})")
        hessian = inst.incidence.T @ (inst.slopes[:, None] * inst.incidence)
        return FollowerSystem(
            follower_dim=inst.n_paths,
            potential_gradient=lambda p, q: beckmann_gradient(inst, q, p),
            projection=inst.project_flows,
            step_size=gamma,
            rate=RateCertificate.exponential(max(rho, _RHO_FLOOR)),
            constants=FollowerConstants(L_gx=_spectral_norm(inst.incidence), ell_gy=_spectral_norm(hessian)),
            potential=lambda p, q: beckmann_potential(inst, q, p),
            feasible=inst.is_feasible,
        )


# ==============================================================================
# Factory
# ==============================================================================
def build_problem(
    spec: Any,
    base_dir: Optional[Path] = None,
    *,
    d: Optional[int] = None,
    rho: Optional[float] = None,
    lambda_reg: Optional[float] = None,
) -> LeaderProblem:
    """Instantiate a problem from a config problem spec; d, rho and lambda_reg are sweep overrides.

    rho sets the follower step to 1 - rho, whose per-step contraction is exactly rho.
    """
    if spec.kind == "routing":
        inst = RoutingInstance.from_dict(spec.instance_document(base_dir))
        if lambda_reg is not None:
            inst = inst.with_lambda(lambda_reg)
        return RoutingGame(inst, spec.step_size)

    rho = spec.rho if rho is None else rho
    step = spec.step_size if rho is None else 1.0 - rho
    if spec.kind == "quadratic":
        if spec.B is None:
            return QuadraticBilevel.random(
                d or spec.d, spec.follower_dim, spec.instance_seed, spec.box_radius, spec.coupling, step
            )
        if d is not None and d != len(spec.B[0]):
            raise ConfigError(f"sweep d={d} conflicts with the explicit B of width {len(spec.B[0])}")
        m = len(spec.B)
        c = spec.c if spec.c is not None else np.zeros(m)
        r = spec.box_radius
        return QuadraticBilevel(spec.a, spec.b, spec.B, c, -r * np.ones(m), r * np.ones(m), step)
    if spec.kind == "logcosh":
        return LogCoshBilevel.random(d or spec.d, spec.follower_dim, spec.instance_seed, spec.box_radius, spec.coupling, step)
    if spec.kind == "strict_saddle":
        return StrictSaddleProblem(spec.diag, spec.quartic, spec.follower_dim, spec.box_radius, step)
    raise ConfigError(f"unknown problem kind {spec.kind!r}")
