"""Multi-seed end-to-end checks on the shipped configs (run with `pytest -m slow`)."""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from follower_agnostic.cli import main
from follower_agnostic.core import RateCertificate, ScheduleParams, choose_inner_iterations
from follower_agnostic.diagnostics import (
    error_decomposition,
    estimator_error_bounds,
    exact_follower_system,
    loglog_slope,
    saddle_escape_report,
    shadow_trajectory_gap,
)
from follower_agnostic.errors import EXIT_OK
from follower_agnostic.estimator import RngStream, sample_unit_sphere, smoothed_gradient_mc
from follower_agnostic.io import write_trace
from follower_agnostic.lower_level import iterate_sensitivity_check, run_inner
from follower_agnostic.planning import parse_config, plan_runs, prepare
from follower_agnostic.problems import (
    LogCoshBilevel,
    QuadraticBilevel,
    RoutingGame,
    balanced_toll_grid,
    leader_routing_objective,
    toll_grid_search,
    wardrop_bruteforce,
)
from follower_agnostic.solver import SolverConfig, min_grad_stationarity, run_algorithm

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _runs(name, use_sweep=False, seeds=None):
    """(planned run, problem, trace) for every planned run of a shipped config."""
    cfg, base_dir = parse_config(CONFIGS / name)
    out = []
    for run in plan_runs(cfg, use_sweep=use_sweep):
        if seeds is not None and run.seed not in seeds:
            continue
        problem, followers, solver_cfg = prepare(cfg, run, base_dir)
        out.append((run, problem, run_algorithm(problem, followers, solver_cfg)))
    return out


def test_mc_oracle_mean_matches_quadratic_gradient():
    qb = QuadraticBilevel.random(d=4, seed=0)
    points = np.random.default_rng(42).normal(size=(5, 4))
    for i, x in enumerate(points):
        mc = smoothed_gradient_mc(qb.hyper_objective_many, x, 0.1, 100_000, RngStream(i, 1), vectorized=True)
        assert np.all(np.abs(mc.mean - qb.hypergradient(x)) <= 3 * mc.stderr + 1e-12)


def test_estimator_error_bounds_on_logcosh():
    lc = LogCoshBilevel.random(d=2, seed=3)
    exact = exact_follower_system(lc, lc.follower_system())
    cfg = SolverConfig(
        T=256,
        schedule=ScheduleParams(eta_bar=2 / (4 * lc.constants.ell_ftilde), delta_bar=0.5, d=2),
        x0=np.zeros(2),
        y0=np.zeros(2),
        seed=0,
    )
    trace = run_algorithm(lc, exact, cfg)
    rounds = np.linspace(0, 255, 6).astype(int).tolist()
    dec = error_decomposition(lc, exact, trace, 20_000, RngStream(0, 1), rounds)
    assert np.array_equal(dec.e3, np.zeros_like(dec.e3))
    check = estimator_error_bounds(dec, lc.constants.ell_ftilde, lc.constants.L_ftilde)
    assert check.e1_holds
    assert check.e2_holds


@pytest.mark.parametrize("name", ["quadratic_rate.json", "quadratic_rate_d4.json"])
def test_min_stationarity_rate(name):
    by_T = defaultdict(list)
    for run, problem, trace in _runs(name, use_sweep=True):
        by_T[run.T].append(min_grad_stationarity(trace, problem)[1])
    assert sorted(by_T) == [64, 256, 1024, 4096]
    slope = loglog_slope([(T, float(np.mean(v))) for T, v in sorted(by_T.items())])
    assert -0.7 <= slope <= -0.3


def test_inner_budget_floor_scales_with_rho_power(tmp_path):
    config = str(CONFIGS / "alpha_floor.json")
    out = tmp_path / "alpha_floor"
    assert main(["sweep", config, "--out", str(out), "--jobs", "4"]) == EXIT_OK
    assert main(["diagnose", config, "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "diagnostics" / "summary.json").read_text(encoding="utf-8"))
    entry = summary["plateau"]["T2048_d2_rhoNone_lambdaNone"]
    assert entry["K"] == [2, 6]
    # 0.5 ** (6 - 2) = 0.0625, within one order of magnitude
    assert entry["expected_ratio"] == pytest.approx(0.0625)
    assert 0.00625 <= entry["ratio"] <= 0.625
    assert summary["passed"] is True


def test_choose_inner_iterations_reference_values():
    assert choose_inner_iterations(RateCertificate.polynomial(1.0, 1.0), 16, 1) == 4
    assert choose_inner_iterations(RateCertificate.exponential(0.5), 10_000, 1) == 7


def test_iterate_sensitivity_on_random_quadratics():
    violations = 0
    for seed in range(100):
        qb = QuadraticBilevel.random(d=3, seed=seed)
        rng = RngStream(seed, 7)
        x = rng.generator.normal(size=3)
        x_hat = x + 0.1 * sample_unit_sphere(rng, 3)
        check = iterate_sensitivity_check(qb.follower_system(), x, x_hat, np.zeros(3), 8)
        violations += not check.holds
    assert violations == 0


def test_inner_solver_matches_wardrop_bruteforce(two_link_game, three_path):
    inst = two_link_game.instance
    assert wardrop_bruteforce(inst, np.zeros(2)) == pytest.approx([1.0, 0.0])
    assert wardrop_bruteforce(inst, np.array([0.5, 0.0])) == pytest.approx([0.5, 0.5])
    # tolls whose equilibria sit on the brute-force grid: (0.7, 0.3) and (0.54, 0.32, 0.14)
    cases = [
        (two_link_game, [np.zeros(2), np.array([0.2, -0.1])]),
        (RoutingGame(three_path, 0.5), [np.zeros(3), np.array([0.1, 0.0, 0.0])]),
    ]
    for game, tolls in cases:
        inst = game.instance
        sys = game.follower_system()
        for p in tolls:
            inner = run_inner(sys, p, inst.even_split(), 500).y_final
            assert inner == pytest.approx(wardrop_bruteforce(inst, p), abs=1e-3)


def test_toll_design_beats_baseline_and_nears_grid_optimum():
    runs = _runs("routing_two_link.json", seeds={0, 1, 2})
    inst = runs[0][1].instance
    assert inst.lambda_reg == 0.1
    baseline = leader_routing_objective(inst, np.zeros(2), wardrop_bruteforce(inst, np.zeros(2)))
    _, best = toll_grid_search(inst, balanced_toll_grid(1e-3), 1000)
    assert baseline == pytest.approx(1.0)
    for _, _, trace in runs:
        p = trace.final_x
        value = leader_routing_objective(inst, p, wardrop_bruteforce(inst, p))
        assert value < baseline
        assert value <= 1.05 * best


def test_strict_saddle_escape():
    runs = _runs("saddle_escape.json")
    assert len(runs) == 100
    problem = runs[0][1]
    rep = saddle_escape_report([t for _, _, t in runs], problem.saddle_point(), eps=0.01, tail_fraction=0.25)
    assert rep.n_escaped >= 95


def test_shadow_gap_shrinks_with_anchor():
    runs = _runs("shadow_gap.json")
    assert len(runs) == 30
    level = {}
    for anchor in (32, 512):
        level[anchor] = np.mean([np.max(shadow_trajectory_gap(p, t, anchor, 16)) for _, p, t in runs])
    assert level[512] < level[32]


def test_reruns_write_identical_trace_files(tmp_path):
    cfg, base_dir = parse_config(CONFIGS / "routing_two_link.json")
    run = plan_runs(cfg)[0]
    paths = []
    for name in ("a.csv", "b.csv"):
        problem, followers, solver_cfg = prepare(cfg, run, base_dir)
        paths.append(write_trace(tmp_path / name, run_algorithm(problem, followers, solver_cfg)))
    assert paths[0].read_bytes() == paths[1].read_bytes()
