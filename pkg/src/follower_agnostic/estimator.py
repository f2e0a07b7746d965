from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import LeaderStrategy, Vector, as_vector

_UINT64_MAX = (1 << 64) - 1
_ZERO_NORM = 1e-300


@dataclass
class RngStream:
    """Seeded PCG64 stream; identical (seed, stream_id) give identical draws on every platform."""

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if int(value) != value or not 0 <= value <= _UINT64_MAX:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value}")
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


@dataclass(frozen=True)
class Perturbation:
    v: Vector
    delta: float

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError(f"perturbation radius must be positive, got {self.delta}")
        if abs(float(np.linalg.norm(self.v)) - 1.0) > 1e-12:
            raise ValueError(f"perturbation direction is not a unit vector: |v|={np.linalg.norm(self.v)}")

    def apply(self, x: LeaderStrategy) -> LeaderStrategy:
        return x + self.delta * self.v


# ==============================================================================
# Sphere / ball sampling
# ==============================================================================
def sample_unit_sphere(rng: RngStream, d: int) -> Vector:
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    while True:
        g = rng.generator.standard_normal(d)
        norm = float(np.linalg.norm(g))
        if norm > _ZERO_NORM:
            return g / norm


def sample_unit_sphere_batch(rng: RngStream, d: int, n: int) -> np.ndarray:
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d} n={n}")
    g = rng.generator.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1)
    bad = norms <= _ZERO_NORM
    while np.any(bad):
        g[bad] = rng.generator.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
        bad = norms <= _ZERO_NORM
    return g / norms[:, None]


def sample_unit_ball(rng: RngStream, d: int, n: int) -> np.ndarray:
    directions = sample_unit_sphere_batch(rng, d, n)
    radii = rng.generator.random(n) ** (1.0 / d)
    return directions * radii[:, None]


# ==============================================================================
# Two-point estimators
# ==============================================================================
def _directional_estimate(d: int, delta: float, v: Vector, upper: float, lower: float) -> Vector:
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not (delta > 0 and math.isfinite(delta)):
        raise ValueError(f"delta must be positive and finite, got {delta}")
    if not (math.isfinite(upper) and math.isfinite(lower)):
        raise ValueError(f"function values must be finite, got {upper} and {lower}")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (d,) or not np.all(np.isfinite(v)):
        raise ValueError(f"v must be a finite vector of length {d}, got shape {v.shape}")
    return (d / delta) * (upper - lower) * v


def two_point_estimator(d: int, delta: float, v: Vector, f_hat: float, f_base: float) -> Vector:
    """(d/δ)(f(x̂, y^K(x̂)) − f(x, y^K(x))) v from the two observed follower responses."""
    return _directional_estimate(d, delta, v, f_hat, f_base)


def oracle_estimator(d: int, delta: float, v: Vector, ftilde_hat: float, ftilde_base: float) -> Vector:
    """Same estimator built from exact hyper-objective values f̃(x̂), f̃(x)."""
    return _directional_estimate(d, delta, v, ftilde_hat, ftilde_base)


# ==============================================================================
# Monte Carlo verifiers for the smoothed function
# ==============================================================================
@dataclass(frozen=True)
class MonteCarloGradient:
    mean: Vector
    stderr: Vector
    n_samples: int


def _evaluate(ftilde: Callable, points: np.ndarray, vectorized: bool) -> np.ndarray:
    if vectorized:
        return np.asarray(ftilde(points), dtype=np.float64).reshape(-1)
    return np.array([float(ftilde(p)) for p in points], dtype=np.float64)


def smoothed_gradient_mc(
    ftilde: Callable,
    x: LeaderStrategy,
    delta: float,
    n_samples: int,
    rng: RngStream,
    *,
    vectorized: bool = False,
    batch_size: int = 20_000,
) -> MonteCarloGradient:
    """Sample mean (and standard error) of the oracle estimator over fresh sphere draws.

    Its expectation is ∇f̃_δ(x), the gradient of the ball-smoothed hyper-objective.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    x = as_vector(x, name="x")
    d = x.shape[0]
    base = float(ftilde(x[None, :])[0]) if vectorized else float(ftilde(x))
    if not math.isfinite(base):
        raise ValueError(f"ftilde(x) is not finite: {base}")

    total = np.zeros(d)
    total_sq = np.zeros(d)
    done = 0
    while done < n_samples:
        n = min(batch_size, n_samples - done)
        V = sample_unit_sphere_batch(rng, d, n)
        values = _evaluate(ftilde, x[None, :] + delta * V, vectorized)
        if not np.all(np.isfinite(values)):
            raise ValueError("ftilde returned non-finite values on the perturbation sphere")
        draws = (d / delta) * (values - base)[:, None] * V
        total += draws.sum(axis=0)
        total_sq += (draws * draws).sum(axis=0)
        done += n

    mean = total / n_samples
    if n_samples > 1:
        var = np.maximum(total_sq - n_samples * mean * mean, 0.0) / (n_samples - 1)
        stderr = np.sqrt(var / n_samples)
    else:
        stderr = np.full(d, np.inf)
    return MonteCarloGradient(mean=mean, stderr=stderr, n_samples=n_samples)


def smoothed_value_mc(
    ftilde: Callable,
    x: LeaderStrategy,
    delta: float,
    n_samples: int,
    rng: RngStream,
    *,
    vectorized: bool = False,
) -> float:
    """Monte Carlo estimate of f̃_δ(x) = E_u f̃(x + δu), u uniform in the unit ball."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    x = as_vector(x, name="x")
    U = sample_unit_ball(rng, x.shape[0], n_samples)
    values = _evaluate(ftilde, x[None, :] + delta * U, vectorized)
    return float(values.mean())
