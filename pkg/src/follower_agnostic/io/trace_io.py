# follower_agnostic/io/trace_io.py
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ..estimator import Perturbation, two_point_estimator
from ..solver import RoundRecord, RunTrace
from ..utils import ensure_dirs


def trace_columns(d: int, with_grad: bool) -> List[str]:
    cols = ["t", "eta", "delta"]
    cols += [f"v[{i}]" for i in range(d)]
    cols += [f"x[{i}]" for i in range(d)]
    cols += ["f_hat", "f_base", "est_norm"]
    if with_grad:
        cols.append("grad_norm_sq")
    return cols


def trace_frame(trace: RunTrace) -> pd.DataFrame:
    """One row per round; vectors flattened into bracketed columns."""
    d = trace.final_x.shape[0]
    with_grad = any(r.grad_norm_sq is not None for r in trace.rounds)
    rows: List[Dict[str, Any]] = []
    for r in trace.rounds:
        row: Dict[str, Any] = {"t": r.t, "eta": r.eta_t, "delta": r.delta_t}
        row.update({f"v[{i}]": float(r.v_t[i]) for i in range(d)})
        row.update({f"x[{i}]": float(r.x_t[i]) for i in range(d)})
        row.update({"f_hat": r.f_hat, "f_base": r.f_base, "est_norm": float(np.linalg.norm(r.estimate))})
        if with_grad:
            row["grad_norm_sq"] = np.nan if r.grad_norm_sq is None else r.grad_norm_sq
        rows.append(row)
    df = pd.DataFrame(rows, columns=trace_columns(d, with_grad))
    return df.astype({"t": "int64"})


def write_trace(path: Path, trace: RunTrace) -> Path:
    ensure_dirs(path)
    # repr-style floats round-trip exactly; fixed "\n" keeps files byte-identical across platforms
    trace_frame(trace).to_csv(path, index=False, lineterminator="\n", na_rep="")
    return path


def read_trace(path: Path, K: int, config: Optional[Dict[str, Any]] = None) -> RunTrace:
    """Rebuild a RunTrace from its CSV; x̂_t, F̂ and x_T are recomputed bitwise from the stored columns.

    Follower responses are not stored, so y_hat_K / y_base_K come back as None.
    """
    if not path.exists():
        raise FileNotFoundError(f"No such trace: {path}")
    df = pd.read_csv(path, float_precision="round_trip")
    v_cols = [c for c in df.columns if c.startswith("v[")]
    x_cols = [c for c in df.columns if c.startswith("x[")]
    d = len(x_cols)
    if d == 0 or len(v_cols) != d:
        raise ValueError(f"{path}: malformed trace header {list(df.columns)}")
    with_grad = "grad_norm_sq" in df.columns

    V = df[v_cols].to_numpy(dtype=np.float64)
    X = df[x_cols].to_numpy(dtype=np.float64)
    rounds: List[RoundRecord] = []
    for i in range(len(df)):
        delta = float(df["delta"].iat[i])
        v = V[i].copy()
        x = X[i].copy()
        f_hat = float(df["f_hat"].iat[i])
        f_base = float(df["f_base"].iat[i])
        grad_sq = float(df["grad_norm_sq"].iat[i]) if with_grad else np.nan
        rounds.append(
            RoundRecord(
                t=int(df["t"].iat[i]),
                x_t=x,
                v_t=v,
                delta_t=delta,
                eta_t=float(df["eta"].iat[i]),
                x_hat_t=Perturbation(v, delta).apply(x),
                f_hat=f_hat,
                f_base=f_base,
                estimate=two_point_estimator(d, delta, v, f_hat, f_base),
                grad_norm_sq=None if np.isnan(grad_sq) else grad_sq,
            )
        )
    if not rounds:
        raise ValueError(f"{path}: trace has no rounds")
    last = rounds[-1]
    final_x = last.x_t - last.eta_t * last.estimate
    return RunTrace(config=dict(config or {}), rounds=rounds, final_x=final_x, K=K, warnings=[])
