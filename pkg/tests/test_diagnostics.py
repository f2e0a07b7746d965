from __future__ import annotations

import numpy as np
import pytest

from follower_agnostic.core import ScheduleParams
from follower_agnostic.diagnostics import (
    error_decomposition,
    estimator_error_bounds,
    exact_follower_system,
    expected_descent,
    fd_hypergradient,
    loglog_slope,
    min_hessian_eigenvalue,
    plateau_ratio,
    rate_fit,
    saddle_escape_report,
    shadow_trajectory,
    shadow_trajectory_gap,
    stationarity_plateau,
)
from follower_agnostic.errors import ConvergenceError, MissingStructureError
from follower_agnostic.estimator import RngStream
from follower_agnostic.problems import LogCoshBilevel, QuadraticBilevel, StrictSaddleProblem
from follower_agnostic.solver import SolverConfig, run_algorithm


def _trace(problem, followers=None, T=64, seed=0, eta_bar=None, K="auto"):
    d = problem.leader_dim
    ell = problem.constants.ell_ftilde if problem.constants else None
    eta_bar = eta_bar if eta_bar is not None else d / (4 * ell)
    cfg = SolverConfig(
        T=T,
        schedule=ScheduleParams(eta_bar=eta_bar, delta_bar=0.5, d=d),
        x0=np.zeros(d),
        y0=np.zeros(problem.follower_dim),
        K=K,
        seed=seed,
    )
    return run_algorithm(problem, followers or problem.follower_system(), cfg)


# ------------------------------------------------------------------------------
# Finite-difference hypergradient
# ------------------------------------------------------------------------------
def test_fd_hypergradient_of_half_square():
    # f̃(x) = x²/2 + 0 from a decoupled follower
    p = QuadraticBilevel([0.0], [0.0], [[0.0]], [0.0], -1.0, 1.0)
    assert fd_hypergradient(p, p.follower_system(), np.array([1.0])) == pytest.approx([1.0], abs=1e-6)


def test_fd_hypergradient_matches_analytic(random_quadratic):
    sys = random_quadratic.follower_system()
    for x in (np.zeros(3), np.array([0.5, -1.0, 0.3])):
        fd = fd_hypergradient(random_quadratic, sys, x)
        assert fd == pytest.approx(random_quadratic.hypergradient(x), abs=1e-5)


def test_fd_hypergradient_on_routing(two_link_game):
    sys = two_link_game.follower_system()
    p = np.array([0.2, -0.1])
    fd = fd_hypergradient(two_link_game, sys, p, h=1e-4, y0=two_link_game.instance.even_split())
    # interior regime: s = 0.3, q1 = 0.7, f̃ = (1 - s)^2 + s + 0.1 |p|^2
    s = p[0] - p[1]
    dfds = -2 * (1 - s) + 1
    assert fd == pytest.approx([dfds + 0.2 * p[0], -dfds + 0.2 * p[1]], abs=1e-5)


def test_fd_hypergradient_reports_non_convergence(random_quadratic):
    slow = random_quadratic.follower_system().with_step_size(1e-3)
    with pytest.raises(ConvergenceError):
        fd_hypergradient(random_quadratic, slow, np.zeros(3), K_ref=10)


# ------------------------------------------------------------------------------
# Error decomposition
# ------------------------------------------------------------------------------
def test_error_decomposition_exact_followers(random_quadratic):
    exact = exact_follower_system(random_quadratic, random_quadratic.follower_system())
    trace = _trace(random_quadratic, exact, T=32, seed=1)
    dec = error_decomposition(random_quadratic, exact, trace, 20_000, RngStream(1, 1), rounds=[0, 5, 31])
    assert np.array_equal(dec.e3, np.zeros_like(dec.e3))
    assert dec.identity_residual() <= 1e-10
    # quadratic f̃: the smoothed gradient equals the gradient
    assert np.all(np.abs(dec.e1) <= 3 * dec.mc_stderr + 1e-12)


def test_error_decomposition_inner_solver_error(random_quadratic):
    trace = _trace(random_quadratic, T=16, seed=2)
    dec = error_decomposition(random_quadratic, None, trace, 2000, RngStream(2, 1))
    assert dec.rounds.tolist() == list(range(16))
    assert dec.identity_residual() <= 1e-10 * max(1.0, float(np.max(np.abs(dec.estimate))))
    assert np.any(dec.e3_sq > 0)
    assert set(dec.summary()) == {"rounds", "e1_sq_mean", "e2_sq_mean", "e3_sq_mean", "identity_residual"}


def test_follower_error_shrinks_by_rho_power_when_K_doubles():
    problem = QuadraticBilevel.random(d=2, seed=3)
    rho = problem.follower_system().rate.rho
    assert rho == pytest.approx(0.5)

    def rms_e3(K):
        sq = []
        for seed in range(3):
            trace = _trace(problem, T=32, seed=seed, K=K)
            dec = error_decomposition(problem, None, trace, 100, RngStream(seed, 1))
            sq.extend(dec.e3_sq.tolist())
        return float(np.sqrt(np.mean(sq)))

    low, high = rms_e3(4), rms_e3(8)
    assert low > 0
    assert 0.5 * rho**4 <= high / low <= 2.0 * rho**4


def test_error_decomposition_needs_solution_map(two_link_game):
    with pytest.raises(MissingStructureError):
        exact_follower_system(two_link_game, two_link_game.follower_system())


def test_error_bounds_on_logcosh():
    lc = LogCoshBilevel.random(d=2, seed=3)
    exact = exact_follower_system(lc, lc.follower_system())
    trace = _trace(lc, exact, T=32, seed=0)
    dec = error_decomposition(lc, exact, trace, 20_000, RngStream(0, 1), rounds=[0, 8, 16, 31])
    check = estimator_error_bounds(dec, lc.constants.ell_ftilde, lc.constants.L_ftilde)
    assert check.e1_holds and check.e2_holds
    assert check.e2_sq_mean <= check.e2_bound


# ------------------------------------------------------------------------------
# Shadow trajectories
# ------------------------------------------------------------------------------
def test_shadow_starts_at_perturbed_point():
    p = StrictSaddleProblem([1.0, -1.0], quartic=1.0)
    trace = _trace(p, T=40, seed=3, eta_bar=0.5)
    shadow = shadow_trajectory(p, trace, 10, 5)
    assert np.array_equal(shadow.z[0], trace.rounds[10].x_hat_t)
    gaps = shadow_trajectory_gap(p, trace, 10, 5)
    assert gaps.shape == (6,)
    assert gaps[0] == pytest.approx(trace.rounds[10].delta_t, rel=1e-12)


def test_shadow_follows_exact_gradient_steps():
    p = StrictSaddleProblem([2.0, -1.0])
    trace = _trace(p, T=20, seed=0)
    z = shadow_trajectory(p, trace, 3, 4).z
    for s in range(4):
        assert np.array_equal(z[s + 1], z[s] - trace.rounds[3 + s].eta_t * p.hypergradient(z[s]))


def test_shadow_horizon_overflow():
    p = StrictSaddleProblem([1.0, -1.0])
    trace = _trace(p, T=20)
    shadow_trajectory_gap(p, trace, 4, 16)
    with pytest.raises(ValueError, match="horizon"):
        shadow_trajectory_gap(p, trace, 5, 16)


# ------------------------------------------------------------------------------
# Hessian eigenvalue
# ------------------------------------------------------------------------------
def test_min_hessian_eigenvalue_saddle_and_bowl():
    saddle = lambda x: np.array([2 * x[0], -2 * x[1]])  # noqa: E731
    bowl = lambda x: 2 * x  # noqa: E731
    assert min_hessian_eigenvalue(saddle, np.zeros(2)) == pytest.approx(-2.0, abs=1e-4)
    assert min_hessian_eigenvalue(bowl, np.zeros(2)) == pytest.approx(2.0, abs=1e-4)


def test_min_hessian_eigenvalue_matches_dense_solver():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    A = Q @ np.diag([-3.0, -1.0, 0.5, 1.0, 2.0]) @ Q.T
    A = 0.5 * (A + A.T)
    x = rng.normal(size=5)
    lam = min_hessian_eigenvalue(lambda z: A @ z, x)
    assert lam == pytest.approx(float(np.linalg.eigvalsh(A)[0]), abs=1e-6)


def test_min_hessian_eigenvalue_on_strict_saddle():
    p = StrictSaddleProblem([1.0, -1.0])
    assert min_hessian_eigenvalue(p.hypergradient, p.saddle_point()) == pytest.approx(-1.0, abs=1e-4)


def test_min_hessian_eigenvalue_needs_small_residual_not_just_a_settled_quotient():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    A = Q @ np.diag([-3.0, -1.0, 0.5, 1.0, 2.0]) @ Q.T
    A = 0.5 * (A + A.T)
    exact = float(np.linalg.eigvalsh(A)[0])
    # a loose quotient tolerance still returns an accurate value once the residual is small
    assert min_hessian_eigenvalue(lambda z: A @ z, np.zeros(5), tol=1e-2) == pytest.approx(exact, abs=1e-8)
    with pytest.raises(ConvergenceError):
        min_hessian_eigenvalue(lambda z: A @ z, np.zeros(5), tol=1e-2, residual_tol=1e-14, iters=20)


def test_min_hessian_eigenvalue_non_convergence():
    rng = np.random.default_rng(1)
    A = np.diag(rng.uniform(-1.0, -0.999, size=6))
    with pytest.raises(ConvergenceError):
        min_hessian_eigenvalue(lambda z: A @ z, np.zeros(6), iters=2)


# ------------------------------------------------------------------------------
# Rate fits and multi-seed reports
# ------------------------------------------------------------------------------
def test_loglog_slope_examples():
    Ts = [64, 256, 1024, 4096]
    assert loglog_slope([(T, T**-0.5) for T in Ts]) == pytest.approx(-0.5, abs=1e-12)
    assert loglog_slope([(T, 3.0) for T in Ts]) == pytest.approx(0.0, abs=1e-12)


def test_loglog_slope_with_bounded_noise():
    rng = np.random.default_rng(7)
    Ts = [64, 128, 256, 512, 1024, 2048, 4096]
    points = [(T, 3.0 * T**-0.5 * (1 + rng.uniform(-0.05, 0.05))) for T in Ts]
    assert -0.55 <= loglog_slope(points) <= -0.45
    assert rate_fit(points).within


def test_loglog_slope_rejects_bad_input():
    with pytest.raises(ValueError):
        loglog_slope([(1.0, 1.0), (2.0, 0.5)])
    with pytest.raises(ValueError):
        loglog_slope([(1.0, 1.0), (2.0, 0.0), (4.0, 0.2)])


def test_expected_descent_and_plateau(random_quadratic):
    traces = [_trace(random_quadratic, T=128, seed=s) for s in range(3)]
    first, last = expected_descent(traces, random_quadratic)
    assert last < first
    level = stationarity_plateau(traces, random_quadratic, tail_fraction=0.25)
    assert 0.0 < level < np.linalg.norm(random_quadratic.hypergradient(np.zeros(3)))
    assert plateau_ratio(level, 2 * level) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        plateau_ratio(1.0, 0.0)


def test_saddle_escape_report_on_short_runs():
    p = StrictSaddleProblem([1.0, -1.0])
    traces = [_trace(p, T=256, seed=s) for s in range(5)]
    rep = saddle_escape_report(traces, p.saddle_point(), eps=0.01)
    assert rep.n_runs == 5 and rep.n_escaped == 5 and rep.fraction == 1.0
    assert all(t is not None and 0 < t <= 256 for t in rep.escape_times)
