from __future__ import annotations

import numpy as np
import pytest

from follower_agnostic.core import RateCertificate
from follower_agnostic.errors import EXIT_RUN_ABORT, ConvergenceError, MissingStructureError, NonFiniteFollowerError, RunAbortedError
from follower_agnostic.lower_level import (
    FollowerSystem,
    check_potential_descent,
    estimate_contraction_rate,
    iterate_sensitivity_check,
    project_box,
    project_product_simplex,
    project_simplex,
    projected_gradient_step,
    run_inner,
    sensitivity_ratios,
)
from follower_agnostic.problems import QuadraticBilevel


def test_project_box():
    lo, hi = -np.ones(2), np.ones(2)
    assert np.array_equal(project_box(np.array([0.2, -0.3]), lo, hi), np.array([0.2, -0.3]))
    assert np.array_equal(project_box(np.array([2.0, -3.0]), lo, hi), np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        project_box(np.zeros(3), lo, hi)


@pytest.mark.parametrize(
    "y, expected",
    [
        ([1.0, 0.5, 0.5], [2 / 3, 1 / 6, 1 / 6]),
        ([0.3, 0.7], [0.3, 0.7]),
        ([5.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
        ([-1.0, -1.0], [0.5, 0.5]),
    ],
)
def test_project_simplex(y, expected):
    assert project_simplex(np.array(y)) == pytest.approx(expected, abs=1e-12)


def test_project_simplex_matches_bruteforce_qp():
    rng = np.random.default_rng(0)
    grid = np.array([[i / 200, j / 200, 1 - (i + j) / 200] for i in range(201) for j in range(201 - i)])
    for _ in range(5):
        y = rng.normal(size=3)
        q = project_simplex(y)
        assert q.sum() == pytest.approx(1.0) and np.all(q >= 0)
        best = grid[np.argmin(np.sum((grid - y) ** 2, axis=1))]
        assert np.sum((q - y) ** 2) <= np.sum((best - y) ** 2) + 1e-12


def test_project_product_simplex_respects_blocks():
    q = project_product_simplex(np.array([3.0, 1.0, 0.2, 0.2, 0.2]), [slice(0, 2), slice(2, 5)], [2.0, 0.6])
    assert q == pytest.approx([2.0, 0.0, 0.2, 0.2, 0.2])


def test_projected_step_fixed_point_and_zero_step(identity_quadratic):
    sys = identity_quadratic.follower_system()
    x = np.array([0.3, -0.2])
    y = identity_quadratic.solution_map(x)
    assert np.array_equal(projected_gradient_step(sys, x, y), y)
    frozen = sys.with_step_size(0.0)
    y_feasible = np.array([0.4, 0.9])
    assert np.array_equal(projected_gradient_step(frozen, x, y_feasible), y_feasible)


def test_projected_step_flags_non_finite_gradient():
    sys = FollowerSystem(
        follower_dim=1,
        potential_gradient=lambda x, y: np.array([np.nan]),
        projection=lambda y: y,
        step_size=0.5,
        rate=RateCertificate.exponential(0.5),
    )
    with pytest.raises(NonFiniteFollowerError, match="non-finite") as info:
        projected_gradient_step(sys, np.zeros(1), np.zeros(1))
    assert isinstance(info.value, RunAbortedError)
    assert info.value.exit_code == EXIT_RUN_ABORT


def test_run_inner_zero_steps_returns_start(identity_quadratic):
    y0 = np.array([0.1, 0.2])
    out = run_inner(identity_quadratic.follower_system(), np.zeros(2), y0, 0)
    assert np.array_equal(out.y_final, y0) and out.residual == 0.0


def test_run_inner_contracts_by_half_per_step(identity_quadratic):
    sys = identity_quadratic.follower_system(step_size=0.5)
    x = np.array([0.3, -0.4])
    target = identity_quadratic.solution_map(x)
    run = run_inner(sys, x, np.zeros(2), 10, keep_iterates=True)
    errors = [np.linalg.norm(y - target) for y in run.iterates]
    ratios = np.array(errors[1:]) / np.array(errors[:-1])
    assert ratios == pytest.approx(np.full(10, 0.5), rel=1e-9)


def test_run_inner_reaches_wardrop_flow_on_two_links(two_link_game):
    sys = two_link_game.follower_system()
    out = run_inner(sys, np.zeros(2), two_link_game.instance.even_split(), 500)
    assert out.y_final == pytest.approx([1.0, 0.0], abs=1e-4)


def test_exact_response_short_circuits_iteration(identity_quadratic):
    sys = identity_quadratic.follower_system().with_exact_response(identity_quadratic.solution_map)
    x = np.array([2.0, 0.1])
    out = run_inner(sys, x, np.zeros(2), 3)
    assert np.array_equal(out.y_final, np.array([1.0, 0.1]))
    assert np.array_equal(run_inner(sys, x, np.zeros(2), 0).y_final, np.zeros(2))


def test_estimate_contraction_rate_on_quadratic(identity_quadratic):
    sys = identity_quadratic.follower_system(step_size=0.5)
    fitted = estimate_contraction_rate(sys, np.array([0.3, -0.4]), np.array([-1.0, 1.0]), 25)
    assert fitted.kind == "exponential"
    assert fitted.rho == pytest.approx(0.5, abs=0.02)


def test_estimate_contraction_rate_fails_without_movement(identity_quadratic):
    frozen = identity_quadratic.follower_system().with_step_size(0.0)
    with pytest.raises(ConvergenceError):
        estimate_contraction_rate(frozen, np.array([0.3, -0.4]), np.zeros(2), 10)


def test_estimate_contraction_rate_on_routing(two_link_game):
    sys = two_link_game.follower_system()
    fitted = estimate_contraction_rate(sys, np.zeros(2), two_link_game.instance.even_split(), 20)
    assert 0.0 < fitted.rho < 1.0


def test_sensitivity_check_zero_perturbation(identity_quadratic):
    sys = identity_quadratic.follower_system()
    x = np.array([0.1, 0.2])
    check = iterate_sensitivity_check(sys, x, x.copy(), np.zeros(2), 5)
    assert check.measured == 0.0 and check.bound == 0.0 and check.holds


def test_sensitivity_check_needs_constants(identity_quadratic):
    sys = identity_quadratic.follower_system()
    bare = FollowerSystem(
        follower_dim=sys.follower_dim,
        potential_gradient=sys.potential_gradient,
        projection=sys.projection,
        step_size=sys.step_size,
        rate=sys.rate,
    )
    with pytest.raises(MissingStructureError):
        iterate_sensitivity_check(bare, np.zeros(2), np.ones(2) * 0.1, np.zeros(2), 3)


def test_sensitivity_ratios_bounded_by_response_slope():
    qb = QuadraticBilevel.random(d=3, seed=4, coupling=0.8)
    sys = qb.follower_system()
    ratios = sensitivity_ratios(sys, np.zeros(3), np.array([1.0, -2.0, 0.5]), np.zeros(3), 6, [1e-3, 1e-2, 1e-1])
    assert np.all(ratios <= qb.B_norm * (1 + 1e-9))
    assert np.allclose(ratios, ratios[0], rtol=1e-6)


def test_potential_descent_on_quadratic(identity_quadratic):
    values, monotone = check_potential_descent(
        identity_quadratic.follower_system(), np.array([0.5, 0.5]), np.array([-1.0, -1.0]), 12
    )
    assert monotone and values.shape == (13,)
    assert values[-1] < values[0]


def test_is_feasible(identity_quadratic, two_link_game):
    box = identity_quadratic.follower_system()
    assert box.is_feasible(np.array([1.0, -1.0]))
    assert not box.is_feasible(np.array([1.1, 0.0]))
    assert not box.is_feasible(np.array([0.0]))
    flows = two_link_game.follower_system()
    assert flows.is_feasible(np.array([0.25, 0.75]))
    assert not flows.is_feasible(np.array([0.5, 0.6]))
