from __future__ import annotations

import numpy as np
import pytest

from follower_agnostic.estimator import (
    Perturbation,
    RngStream,
    oracle_estimator,
    sample_unit_ball,
    sample_unit_sphere,
    sample_unit_sphere_batch,
    smoothed_gradient_mc,
    smoothed_value_mc,
    two_point_estimator,
)


def test_rng_stream_reproducible_and_separated():
    a = sample_unit_sphere_batch(RngStream(7), 3, 10)
    b = sample_unit_sphere_batch(RngStream(7), 3, 10)
    assert np.array_equal(a, b)
    other = sample_unit_sphere_batch(RngStream(7, stream_id=1), 3, 10)
    assert not np.array_equal(a, other)
    assert np.array_equal(RngStream(7).child(1).generator.random(4), RngStream(7, 1).generator.random(4))


def test_rng_stream_rejects_negative_seed():
    with pytest.raises(ValueError):
        RngStream(-1)


@pytest.mark.parametrize("d", [1, 2, 5, 40])
def test_sphere_draws_are_unit_vectors(d):
    rng = RngStream(3)
    for _ in range(20):
        v = sample_unit_sphere(rng, d)
        assert v.shape == (d,)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12
    batch = sample_unit_sphere_batch(rng, d, 50)
    assert np.allclose(np.linalg.norm(batch, axis=1), 1.0, atol=1e-12)


def test_sphere_in_one_dimension_is_a_sign():
    rng = RngStream(0)
    values = {float(sample_unit_sphere(rng, 1)[0]) for _ in range(200)}
    assert values == {-1.0, 1.0}


def test_sphere_draws_are_centred():
    V = sample_unit_sphere_batch(RngStream(5), 3, 200_000)
    assert np.all(np.abs(V.mean(axis=0)) < 4 * np.sqrt(1 / 3 / 200_000))


def test_ball_draws_inside_unit_ball():
    U = sample_unit_ball(RngStream(1), 4, 1000)
    assert np.all(np.linalg.norm(U, axis=1) <= 1.0 + 1e-12)


def test_two_point_estimator_example():
    est = two_point_estimator(2, 0.1, np.array([1.0, 0.0]), 0.3, 0.1)
    assert est == pytest.approx([4.0, 0.0])


def test_two_point_estimator_equal_values_gives_zero():
    v = np.array([0.6, 0.8])
    assert np.array_equal(two_point_estimator(2, 0.5, v, 1.25, 1.25), np.zeros(2))


def test_oracle_estimator_on_linear_function():
    c = np.array([1.0, 0.0])
    x = np.array([0.3, -0.2])
    delta = 0.1
    for v in (np.array([0.0, 1.0]), np.array([0.6, 0.8])):
        est = oracle_estimator(2, delta, v, float(c @ (x + delta * v)), float(c @ x))
        assert est == pytest.approx(2 * float(c @ v) * v, abs=1e-12)


@pytest.mark.parametrize(
    "args",
    [
        (2, 0.0, np.array([1.0, 0.0]), 1.0, 0.0),
        (2, 0.1, np.array([1.0, 0.0]), np.inf, 0.0),
        (3, 0.1, np.array([1.0, 0.0]), 1.0, 0.0),
    ],
)
def test_estimator_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        two_point_estimator(*args)


def test_perturbation_requires_unit_direction():
    p = Perturbation(np.array([0.0, 1.0]), 0.5)
    assert np.array_equal(p.apply(np.array([1.0, 1.0])), np.array([1.0, 1.5]))
    with pytest.raises(ValueError):
        Perturbation(np.array([1.0, 1.0]), 0.5)
    with pytest.raises(ValueError):
        Perturbation(np.array([1.0, 0.0]), 0.0)


def test_smoothed_gradient_of_constant_is_zero():
    mc = smoothed_gradient_mc(lambda x: 3.0, np.zeros(3), 0.2, 500, RngStream(0))
    assert np.array_equal(mc.mean, np.zeros(3))


def test_smoothed_gradient_of_linear_function():
    c = np.array([1.5, -0.5, 2.0])
    mc = smoothed_gradient_mc(lambda x: float(c @ x), np.array([0.1, 0.2, 0.3]), 0.05, 50_000, RngStream(1))
    assert np.all(np.abs(mc.mean - c) <= 3 * mc.stderr)


def test_smoothed_gradient_of_quadratic_matches_gradient(random_quadratic):
    x = np.array([0.2, -0.4, 0.1])
    mc = smoothed_gradient_mc(random_quadratic.hyper_objective_many, x, 0.3, 100_000, RngStream(2), vectorized=True)
    grad = random_quadratic.hypergradient(x)
    assert np.all(np.abs(mc.mean - grad) <= 3 * mc.stderr)


def test_vectorized_and_scalar_paths_agree(random_quadratic):
    x = np.array([0.2, -0.4, 0.1])
    a = smoothed_gradient_mc(random_quadratic.hyper_objective, x, 0.3, 2000, RngStream(9))
    b = smoothed_gradient_mc(random_quadratic.hyper_objective_many, x, 0.3, 2000, RngStream(9), vectorized=True)
    assert np.allclose(a.mean, b.mean, rtol=1e-12, atol=1e-12)


def test_smoothed_value_of_half_squared_norm():
    # E ||u||^2 over the unit ball in R^d is d / (d + 2)
    d, delta = 2, 0.1
    x = np.array([1.0, 0.0])
    value = smoothed_value_mc(lambda z: 0.5 * float(z @ z), x, delta, 200_000, RngStream(4))
    assert value == pytest.approx(0.5 + 0.5 * delta**2 * d / (d + 2), abs=5e-4)


def test_smoothed_gradient_matches_difference_of_smoothed_values():
    f = lambda z: float(np.sum(np.log(np.cosh(3.0 * z))))  # noqa: E731
    x, delta, h = np.array([0.2, -0.1]), 0.2, 0.05
    grad = smoothed_gradient_mc(f, x, delta, 100_000, RngStream(6)).mean
    n = 400_000
    fd = np.array(
        [
            (smoothed_value_mc(f, x + h * e, delta, n, RngStream(8)) - smoothed_value_mc(f, x - h * e, delta, n, RngStream(8)))
            / (2 * h)
            for e in np.eye(2)
        ]
    )
    assert np.allclose(grad, fd, atol=0.05)
