# follower_agnostic/runner.py
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.table import Table

from . import __version__
from .config import ExperimentConfig
from .core import LeaderProblem, alpha_of_K
from .diagnostics import (
    error_decomposition,
    estimator_error_bounds,
    expected_descent,
    plateau_ratio,
    rate_fit,
    saddle_escape_report,
    shadow_trajectory_gap,
    stationarity_plateau,
)
from .errors import (
    EXIT_OK,
    EXIT_RUN_ABORT,
    BoundaryRegimeError,
    ConfigError,
    DiagnosticFailure,
    MissingStructureError,
    RunAbortedError,
)
from .estimator import RngStream
from .io.trace_io import read_trace, write_trace
from .planning import KValue, PlannedRun, build_run_problem, plan_runs, prepare
from .solver import RunTrace, final_hyper_objective, min_grad_stationarity, run_algorithm
from .utils import console, read_json, sha256_file, write_json

log = logging.getLogger(__name__)


# ==============================================================================
# Execution
# ==============================================================================
@dataclass
class RunSummary:
    run_id: str
    cell: str
    seed: int
    T: int
    K_plan: KValue
    K: Optional[int]
    d: int
    rho: Optional[float]
    lam: Optional[float]
    status: str
    trace_file: Optional[str] = None
    best_t: Optional[int] = None
    min_grad_sq: Optional[float] = None
    final_ftilde: Optional[float] = None
    error: Optional[str] = None
    abort_round: Optional[int] = None
    warnings: List[str] = field(default_factory=list)


def execute_run(cfg: ExperimentConfig, run: PlannedRun, base_dir: Path, out_dir: Path) -> RunSummary:
    problem, followers, solver_cfg = prepare(cfg, run, base_dir)
    summary = RunSummary(
        run_id=run.run_id,
        cell=run.cell,
        seed=run.seed,
        T=run.T,
        K_plan=run.K,
        K=None,
        d=problem.leader_dim,
        rho=run.rho,
        lam=run.lam,
        status="ok",
    )
    try:
        trace = run_algorithm(problem, followers, solver_cfg)
    except RunAbortedError as e:
        log.error("%s aborted: %s", run.run_id, e)
        summary.status, summary.error, summary.abort_round = "aborted", str(e), e.round_index
        return summary

    rel = Path("traces") / run.cell / f"seed_{run.seed}.csv"
    write_trace(out_dir / rel, trace)
    summary.trace_file = rel.as_posix()
    summary.K = trace.K
    summary.warnings = list(trace.warnings)
    if problem.has_hypergradient:
        summary.best_t, summary.min_grad_sq = min_grad_stationarity(trace, problem)
        if summary.best_t is None:
            summary.warnings.append("min-stationarity unavailable: no round has a hypergradient")
    try:
        summary.final_ftilde = final_hyper_objective(trace, problem)
    except (MissingStructureError, BoundaryRegimeError) as e:
        summary.warnings.append(f"final hyper-objective unavailable: {e}")
    return summary


def _execute_packed(args: Tuple[ExperimentConfig, PlannedRun, Path, Path]) -> RunSummary:
    return execute_run(*args)


def execute_all(
    cfg: ExperimentConfig, runs: Sequence[PlannedRun], base_dir: Path, out_dir: Path, jobs: int = 1
) -> List[RunSummary]:
    tasks = [(cfg, r, base_dir, out_dir) for r in runs]
    if jobs > 1 and len(tasks) > 1:
        with Pool(processes=min(jobs, len(tasks))) as pool:
            return pool.map(_execute_packed, tasks, chunksize=1)
    return [_execute_packed(t) for t in tasks]


# ==============================================================================
# Aggregation and manifest
# ==============================================================================
def aggregate(summaries: Sequence[RunSummary], swept: Sequence[str] = ()) -> pd.DataFrame:
    """One row per sweep cell: seed count, mean and standard error of min-stationarity, mean final f̃."""
    ok = [s for s in summaries if s.status == "ok"]
    rows: List[Dict[str, Any]] = []
    for cell in dict.fromkeys(s.cell for s in ok):
        group = [s for s in ok if s.cell == cell]
        mins = np.array([np.nan if s.min_grad_sq is None else s.min_grad_sq for s in group], dtype=np.float64)
        finals = np.array([np.nan if s.final_ftilde is None else s.final_ftilde for s in group], dtype=np.float64)
        finite = mins[np.isfinite(mins)]
        row: Dict[str, Any] = {"T": group[0].T, "K": group[0].K, "d": group[0].d}
        if "rho" in swept:
            row["rho"] = group[0].rho
        if "lambda" in swept:
            row["lambda"] = group[0].lam
        row.update(
            {
                "seed_count": len(group),
                "min_grad_sq_mean": float(finite.mean()) if finite.size else np.nan,
                "min_grad_sq_stderr": float(finite.std(ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else np.nan,
                "final_ftilde_mean": float(np.nanmean(finals)) if np.any(np.isfinite(finals)) else np.nan,
            }
        )
        rows.append(row)
    columns = ["T", "K", "d"] + [c for c in ("rho", "lambda") if c in swept]
    columns += ["seed_count", "min_grad_sq_mean", "min_grad_sq_stderr", "final_ftilde_mean"]
    return pd.DataFrame(rows, columns=columns)


def _swept_keys(cfg: ExperimentConfig, use_sweep: bool) -> List[str]:
    if not (use_sweep and cfg.sweep):
        return []
    return [name for name, values in (("rho", cfg.sweep.rho), ("lambda", cfg.sweep.lambda_)) if values]


def _file_hashes(out_dir: Path, rel_paths: Sequence[str]) -> Dict[str, str]:
    return {rel: sha256_file(out_dir / rel) for rel in sorted(rel_paths)}


@dataclass
class ExperimentOutcome:
    exit_code: int
    out_dir: Path
    summaries: List[RunSummary]


def run_experiment(
    cfg: ExperimentConfig,
    base_dir: Path,
    out_dir: Path,
    *,
    use_sweep: bool,
    jobs: int = 1,
    seed_base: Optional[int] = None,
) -> ExperimentOutcome:
    started = time.perf_counter()
    runs = plan_runs(cfg, seed_base, use_sweep=use_sweep)
    log.info("planned %d runs into %s", len(runs), out_dir)
    summaries = execute_all(cfg, runs, base_dir, out_dir, jobs)

    agg = aggregate(summaries, _swept_keys(cfg, use_sweep))
    agg_path = out_dir / "aggregate.csv"
    agg_path.parent.mkdir(parents=True, exist_ok=True)
    agg.to_csv(agg_path, index=False, lineterminator="\n", na_rep="")

    failures = [s for s in summaries if s.status != "ok"]
    files = [s.trace_file for s in summaries if s.trace_file] + ["aggregate.csv"]
    manifest = {
        "version": __version__,
        "command": "sweep" if use_sweep else "run",
        "config": cfg.echo(),
        "seed_base": seed_base,
        "status": "failed" if failures else "ok",
        "failures": [{"run_id": s.run_id, "round": s.abort_round, "error": s.error} for s in failures],
        "runs": [asdict(s) for s in summaries],
        "files": _file_hashes(out_dir, files),
    }
    write_json(out_dir / "manifest.json", manifest)

    for rel in files:
        console.print(f"OK: wrote {out_dir / rel}", highlight=False)
    console.print(f"OK: wrote {out_dir / 'manifest.json'}", highlight=False)
    console.print(
        f"STATS: runs={len(summaries)} failures={len(failures)} seconds={time.perf_counter() - started:.1f}",
        highlight=False,
    )
    return ExperimentOutcome(exit_code=EXIT_RUN_ABORT if failures else EXIT_OK, out_dir=out_dir, summaries=summaries)


def load_manifest(out_dir: Path) -> Dict[str, Any]:
    path = out_dir / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no manifest in {out_dir}; run the experiment first")
    return read_json(path)


def _record_files(out_dir: Path, manifest: Dict[str, Any], rel_paths: Sequence[str]) -> None:
    manifest["files"].update(_file_hashes(out_dir, rel_paths))
    write_json(out_dir / "manifest.json", manifest)


# ==============================================================================
# Diagnostics over stored traces
# ==============================================================================
def _load_cells(
    cfg: ExperimentConfig, base_dir: Path, out_dir: Path, manifest: Dict[str, Any]
) -> Dict[str, Tuple[LeaderProblem, List[RunTrace], List[Dict[str, Any]]]]:
    cells: Dict[str, Tuple[LeaderProblem, List[RunTrace], List[Dict[str, Any]]]] = {}
    for s in manifest["runs"]:
        if s["status"] != "ok":
            continue
        if s["cell"] not in cells:
            run = PlannedRun(T=s["T"], K=s["K_plan"], seed=s["seed"], d=s["d"], rho=s["rho"], lam=s["lam"])
            cells[s["cell"]] = (build_run_problem(cfg, run, base_dir), [], [])
        problem, traces, metas = cells[s["cell"]]
        traces.append(read_trace(out_dir / s["trace_file"], K=s["K"], config=manifest["config"]))
        metas.append(s)
    return cells


def run_diagnostics(cfg: ExperimentConfig, base_dir: Path, out_dir: Path) -> Dict[str, Any]:
    """Run the enabled instruments on stored traces; raises DiagnosticFailure after writing results."""
    flags = cfg.diagnostics
    manifest = load_manifest(out_dir)
    cells = _load_cells(cfg, base_dir, out_dir, manifest)
    if not cells:
        raise ConfigError(f"{out_dir}: manifest lists no successful runs")

    report: Dict[str, Any] = {"cells": {}}
    tables: Dict[str, List[Dict[str, Any]]] = {"error_decomposition": [], "shadow": [], "saddle_escape": [], "plateau": []}
    failed: List[str] = []

    for cell, (problem, traces, metas) in cells.items():
        out: Dict[str, Any] = {}
        if flags.descent and problem.has_solution_map:
            first, last = expected_descent(traces, problem)
            out["descent"] = {"ftilde_x0_mean": first, "ftilde_xT_mean": last, "passed": last < first}

        if flags.error_decomposition:
            out["error_decomposition"] = _decomposition(problem, traces[0], metas[0], flags, tables)

        if flags.shadow:
            out["shadow"] = _shadow(problem, traces, cell, flags, tables)

        if flags.saddle_escape:
            try:
                saddle = problem.saddle_point()
            except MissingStructureError as e:
                out["saddle_escape"] = {"skipped": str(e)}
            else:
                rep = saddle_escape_report(traces, saddle, flags.escape_eps, flags.tail_fraction)
                for m, t in zip(metas, rep.escape_times):
                    tables["saddle_escape"].append({"cell": cell, "seed": m["seed"], "escape_time": t})
                out["saddle_escape"] = {
                    "n_runs": rep.n_runs,
                    "n_escaped": rep.n_escaped,
                    "fraction": rep.fraction,
                    "passed": rep.fraction >= flags.escape_fraction,
                }

        for name, result in out.items():
            if result.get("passed") is False:
                failed.append(f"{cell}: {name}")
        report["cells"][cell] = out

    if flags.rate_fit:
        report["rate_fit"] = _rate_fits(manifest["runs"], flags)
        failed.extend(f"rate_fit {k}" for k, v in report["rate_fit"].items() if v.get("passed") is False)

    if flags.plateau:
        report["plateau"] = _plateaus(cells, flags, tables)
        failed.extend(f"plateau {k}" for k, v in report["plateau"].items() if v.get("passed") is False)

    report["failed"] = failed
    report["passed"] = not failed
    written = ["diagnostics/summary.json"]
    write_json(out_dir / "diagnostics" / "summary.json", report)
    for name, rows in tables.items():
        if rows:
            rel = f"diagnostics/{name}.csv"
            pd.DataFrame(rows).to_csv(out_dir / rel, index=False, lineterminator="\n", na_rep="")
            written.append(rel)
    _record_files(out_dir, manifest, written)
    for rel in written:
        console.print(f"OK: wrote {out_dir / rel}", highlight=False)

    if failed:
        raise DiagnosticFailure("diagnostic checks failed: " + "; ".join(failed))
    return report


def _decomposition(problem, trace, meta, flags, tables) -> Dict[str, Any]:
    if not (problem.has_solution_map and problem.has_hypergradient):
        return {"skipped": f"{type(problem).__name__} lacks a closed-form S(x) or hypergradient"}
    T = len(trace.rounds)
    rounds = sorted(set(np.linspace(0, T - 1, min(flags.decomposition_rounds, T)).astype(int).tolist()))
    try:
        dec = error_decomposition(problem, None, trace, flags.n_mc, RngStream(meta["seed"], 1), rounds)
    except BoundaryRegimeError as e:
        return {"skipped": str(e)}
    for t, e1, e2, e3 in zip(dec.rounds, dec.e1_sq, dec.e2_sq, dec.e3_sq):
        tables["error_decomposition"].append(
            {"run_id": meta["run_id"], "t": int(t), "e1_sq": float(e1), "e2_sq": float(e2), "e3_sq": float(e3)}
        )
    result: Dict[str, Any] = dec.summary()
    scale = max(1.0, float(np.max(np.abs(dec.estimate))))
    passed = result["identity_residual"] <= 1e-10 * scale
    consts = problem.constants
    if consts is not None and consts.ell_ftilde is not None and consts.L_ftilde is not None:
        check = estimator_error_bounds(dec, consts.ell_ftilde, consts.L_ftilde)
        result.update(e1_bound_holds=check.e1_holds, e2_sq_bound=check.e2_bound, e2_bound_holds=check.e2_holds)
        passed = passed and check.e1_holds and check.e2_holds
    result["passed"] = passed
    return result


def _shadow(problem, traces, cell, flags, tables) -> Dict[str, Any]:
    if not problem.has_hypergradient:
        return {"skipped": f"{type(problem).__name__} has no analytic hypergradient"}
    T = len(traces[0].rounds)
    S = flags.shadow_horizon
    anchors = sorted(t for t in flags.shadow_anchors if t + S <= T and t < T)
    if len(anchors) < 2:
        return {"skipped": f"fewer than two anchors fit in T={T} with horizon {S}"}
    levels = []
    for t in anchors:
        sups = [float(np.max(shadow_trajectory_gap(problem, tr, t, S))) for tr in traces]
        levels.append(float(np.mean(sups)))
        tables["shadow"].append({"cell": cell, "anchor": t, "horizon": S, "sup_gap_mean": levels[-1]})
    return {
        "anchors": anchors,
        "sup_gap_mean": levels,
        "passed": all(b < a for a, b in zip(levels, levels[1:])),
    }


def _rate_fits(runs: Sequence[Dict[str, Any]], flags) -> Dict[str, Any]:
    groups: Dict[str, Dict[int, List[float]]] = {}
    for s in runs:
        if s["status"] != "ok" or s["min_grad_sq"] is None:
            continue
        key = f"K{s['K_plan']}_d{s['d']}_rho{s['rho']}_lambda{s['lam']}"
        groups.setdefault(key, {}).setdefault(s["T"], []).append(s["min_grad_sq"])
    lo, hi = flags.rate_slope_range
    out: Dict[str, Any] = {}
    for key, by_T in sorted(groups.items()):
        points = [(float(T), float(np.mean(v))) for T, v in sorted(by_T.items())]
        if len(points) < 3:
            out[key] = {"skipped": f"only {len(points)} horizons; a rate fit needs 3"}
            continue
        fit = rate_fit(points, lo, hi)
        out[key] = {"points": points, "slope": fit.slope, "range": [lo, hi], "passed": fit.within}
    return out


def _plateaus(cells, flags, tables) -> Dict[str, Any]:
    """Late-round ||∇f̃|| at the smallest and largest K of each (T, d, ρ, λ) group, against α(K_high)/α(K_low)."""
    groups: Dict[str, Dict[int, str]] = {}
    for cell, (_, _, metas) in cells.items():
        m = metas[0]
        key = f"T{m['T']}_d{m['d']}_rho{m['rho']}_lambda{m['lam']}"
        groups.setdefault(key, {})[int(m["K"])] = cell
    out: Dict[str, Any] = {}
    for key, by_K in sorted(groups.items()):
        if len(by_K) < 2:
            out[key] = {"skipped": "a plateau comparison needs two inner budgets"}
            continue
        K_low, K_high = min(by_K), max(by_K)
        problem_low, traces_low, _ = cells[by_K[K_low]]
        problem_high, traces_high, _ = cells[by_K[K_high]]
        try:
            level_low = stationarity_plateau(traces_low, problem_low, flags.tail_fraction)
            level_high = stationarity_plateau(traces_high, problem_high, flags.tail_fraction)
            ratio = plateau_ratio(level_high, level_low)
        except (MissingStructureError, BoundaryRegimeError, ValueError) as e:
            out[key] = {"skipped": str(e)}
            continue
        rate = problem_low.follower_system().rate
        expected = alpha_of_K(rate, K_high) / alpha_of_K(rate, K_low)
        band = flags.plateau_band
        for K, level in ((K_low, level_low), (K_high, level_high)):
            tables["plateau"].append({"group": key, "K": K, "plateau_grad_norm": level})
        out[key] = {
            "K": [K_low, K_high],
            "plateau_grad_norm": [level_low, level_high],
            "ratio": ratio,
            "expected_ratio": expected,
            "band": band,
            "passed": expected / band <= ratio <= expected * band,
        }
    return out


# ==============================================================================
# Report
# ==============================================================================
def build_report(out_dir: Path) -> Path:
    """Print the aggregate as a table and write long.csv (one row per run, round and metric)."""
    manifest = load_manifest(out_dir)
    agg_path = out_dir / "aggregate.csv"
    if not agg_path.exists():
        raise ConfigError(f"no aggregate.csv in {out_dir}")
    agg = pd.read_csv(agg_path, float_precision="round_trip")

    table = Table(title=f"aggregate ({out_dir})")
    for col in agg.columns:
        table.add_column(col, justify="right")
    for row in agg.itertuples(index=False):
        table.add_row(*("" if pd.isna(v) else f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
    console.print(table)

    frames = []
    for s in manifest["runs"]:
        if s["status"] != "ok":
            continue
        df = pd.read_csv(out_dir / s["trace_file"], float_precision="round_trip")
        metrics = [c for c in ("f_hat", "f_base", "est_norm", "grad_norm_sq") if c in df.columns]
        long = df.melt(id_vars=["t"], value_vars=metrics, var_name="metric", value_name="value")
        long.insert(0, "seed", s["seed"])
        long.insert(0, "lambda", s["lam"])
        long.insert(0, "rho", s["rho"])
        long.insert(0, "d", s["d"])
        long.insert(0, "K", s["K"])
        long.insert(0, "T", s["T"])
        long.insert(0, "run_id", s["run_id"])
        frames.append(long)
    columns = ["run_id", "T", "K", "d", "rho", "lambda", "seed", "t", "metric", "value"]
    out = pd.concat(frames, ignore_index=True)[columns] if frames else pd.DataFrame(columns=columns)
    long_path = out_dir / "long.csv"
    out.to_csv(long_path, index=False, lineterminator="\n", na_rep="")
    _record_files(out_dir, manifest, ["long.csv"])
    console.print(f"OK: wrote {long_path}", highlight=False)
    return long_path
