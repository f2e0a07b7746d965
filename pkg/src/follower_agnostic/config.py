# follower_agnostic/config.py
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core import DEFAULT_DELTA_BAR
from .errors import ConfigError

DEFAULT_REPLICATES = 20


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ==============================================================================
# Problem specs (discriminated on `kind`)
# ==============================================================================
class QuadraticSpec(_Strict):
    kind: Literal["quadratic"]
    d: int = Field(2, ge=1)
    follower_dim: Optional[int] = Field(None, ge=1)
    instance_seed: int = Field(0, ge=0)
    box_radius: float = Field(10.0, gt=0)
    coupling: float = Field(0.5, ge=0)
    step_size: float = Field(0.5, gt=0, lt=2)
    rho: Optional[float] = Field(None, gt=0, lt=1)
    # explicit instance; overrides the random draw when B is given
    a: Optional[List[float]] = None
    b: Optional[List[float]] = None
    B: Optional[List[List[float]]] = None
    c: Optional[List[float]] = None

    @model_validator(mode="after")
    def _explicit_instance(self) -> "QuadraticSpec":
        if self.B is not None:
            if not self.B or any(len(row) != len(self.B[0]) for row in self.B):
                raise ValueError("B must be a non-empty rectangular matrix")
            if self.a is None or self.b is None:
                raise ValueError("an explicit instance needs a, b and B")
        return self


class LogCoshSpec(_Strict):
    kind: Literal["logcosh"]
    d: int = Field(2, ge=1)
    follower_dim: Optional[int] = Field(None, ge=1)
    instance_seed: int = Field(0, ge=0)
    box_radius: float = Field(10.0, gt=0)
    coupling: float = Field(0.5, ge=0)
    step_size: float = Field(0.5, gt=0, lt=2)
    rho: Optional[float] = Field(None, gt=0, lt=1)


class StrictSaddleSpec(_Strict):
    kind: Literal["strict_saddle"]
    diag: List[float] = Field(default_factory=lambda: [1.0, -1.0], min_length=1)
    quartic: float = Field(0.0, ge=0)
    follower_dim: int = Field(1, ge=1)
    box_radius: float = Field(1.0, gt=0)
    step_size: float = Field(0.5, gt=0, lt=2)
    rho: Optional[float] = Field(None, gt=0, lt=1)

    @field_validator("diag")
    @classmethod
    def _needs_negative(cls, v: List[float]) -> List[float]:
        if not any(x < 0 for x in v):
            raise ValueError("diag needs at least one negative entry")
        return v


class EdgeSpec(_Strict):
    id: str
    a: float = Field(ge=0)
    b: float = Field(0.0, ge=0)


class OdPairSpec(_Strict):
    demand: float = Field(gt=0)
    paths: List[List[str]] = Field(min_length=1)


class RoutingSpec(_Strict):
    kind: Literal["routing"]
    instance: Optional[str] = None
    edges: Optional[List[EdgeSpec]] = None
    od_pairs: Optional[List[OdPairSpec]] = None
    lambda_: Optional[float] = Field(None, alias="lambda", ge=0)
    step_size: float = Field(0.5, gt=0)

    @model_validator(mode="after")
    def _one_source(self) -> "RoutingSpec":
        inline = self.edges is not None or self.od_pairs is not None
        if inline == (self.instance is not None):
            raise ValueError("give either an instance file path or inline edges and od_pairs")
        if inline and (self.edges is None or self.od_pairs is None):
            raise ValueError("inline instances need both edges and od_pairs")
        return self

    def instance_document(self, base_dir: Optional[Path] = None) -> Dict[str, Any]:
        if self.instance is not None:
            path = Path(self.instance)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            if not path.exists():
                raise ConfigError(f"problem.instance: no such file {path}")
            doc = json.loads(path.read_text(encoding="utf-8"))
        else:
            doc = {
                "edges": [e.model_dump() for e in self.edges],
                "od_pairs": [od.model_dump() for od in self.od_pairs],
            }
        if self.lambda_ is not None:
            doc["lambda"] = self.lambda_
        return doc


ProblemSpec = Annotated[
    Union[QuadraticSpec, LogCoshSpec, StrictSaddleSpec, RoutingSpec],
    Field(discriminator="kind"),
]


# ==============================================================================
# Solver, sweep and diagnostics
# ==============================================================================
class SolverSpec(_Strict):
    T: int = Field(ge=1)
    K: Union[Literal["auto"], Annotated[int, Field(ge=1)]] = "auto"
    eta_bar: Optional[float] = Field(None, gt=0)
    delta_bar: float = Field(DEFAULT_DELTA_BAR, gt=0)
    x0: Optional[List[float]] = None
    y0: Optional[List[float]] = None
    record_inner: bool = False
    log_every: int = Field(0, ge=0)


class SweepSpec(_Strict):
    T: Optional[List[Annotated[int, Field(ge=1)]]] = Field(None, min_length=1)
    K: Optional[List[Union[Literal["auto"], Annotated[int, Field(ge=1)]]]] = Field(None, min_length=1)
    d: Optional[List[Annotated[int, Field(ge=1)]]] = Field(None, min_length=1)
    rho: Optional[List[Annotated[float, Field(gt=0, lt=1)]]] = Field(None, min_length=1)
    lambda_: Optional[List[Annotated[float, Field(ge=0)]]] = Field(None, alias="lambda", min_length=1)

    @model_validator(mode="after")
    def _distinct(self) -> "SweepSpec":
        for name in ("T", "K", "d", "rho", "lambda_"):
            values = getattr(self, name)
            if values is not None and len(set(values)) != len(values):
                raise ValueError(f"sweep values for {name.rstrip('_')} must be distinct")
        return self


class DiagnosticsSpec(_Strict):
    error_decomposition: bool = False
    shadow: bool = False
    saddle_escape: bool = False
    rate_fit: bool = False
    descent: bool = False
    plateau: bool = False
    n_mc: int = Field(10_000, ge=10)
    decomposition_rounds: int = Field(8, ge=1)
    shadow_anchors: List[Annotated[int, Field(ge=0)]] = Field(default_factory=lambda: [32, 512], min_length=2)
    shadow_horizon: int = Field(16, ge=0)
    escape_eps: float = Field(0.01, gt=0)
    escape_fraction: float = Field(0.95, gt=0, le=1)
    tail_fraction: float = Field(0.25, gt=0, le=1)
    rate_slope_range: Tuple[float, float] = (-0.7, -0.3)
    plateau_band: float = Field(10.0, gt=1)


class ExperimentConfig(_Strict):
    problem: ProblemSpec
    solver: SolverSpec
    replicates: int = Field(DEFAULT_REPLICATES, ge=1)
    seeds: Optional[List[Annotated[int, Field(ge=0)]]] = Field(None, min_length=1)
    seed_base: int = Field(0, ge=0)
    sweep: Optional[SweepSpec] = None
    diagnostics: DiagnosticsSpec = Field(default_factory=DiagnosticsSpec)
    output_dir: str = "runs"

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.seeds is not None and len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.sweep is not None:
            kind = self.problem.kind
            if self.sweep.d is not None and kind not in ("quadratic", "logcosh"):
                raise ValueError(f"a sweep over d is not available for problem kind {kind!r}")
            if self.sweep.rho is not None and kind == "routing":
                raise ValueError("a sweep over rho is not available for routing problems")
            if self.sweep.lambda_ is not None and kind != "routing":
                raise ValueError("a sweep over lambda needs a routing problem")
        return self

    def seed_list(self, seed_base: Optional[int] = None) -> List[int]:
        if self.seeds is not None:
            return sorted(self.seeds)
        base = self.seed_base if seed_base is None else seed_base
        return [base + i for i in range(self.replicates)]

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


# ==============================================================================
# Loading
# ==============================================================================
def _format_loc(loc: Tuple[Any, ...]) -> str:
    out = ""
    skip_tag = False
    for i, part in enumerate(loc):
        if skip_tag:
            skip_tag = False
            continue
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}" if out else str(part)
        # discriminated unions insert the tag value after the field name
        if part == "problem" and i == 0 and len(loc) > 1 and isinstance(loc[1], str):
            skip_tag = True
    return out or "<root>"


def validation_message(e: ValidationError) -> str:
    lines = [f"{_format_loc(tuple(err['loc']))}: {err['msg']}" for err in e.errors()]
    return "invalid experiment config:\n  " + "\n  ".join(lines)


def load_config_document(doc: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(validation_message(e)) from e


def read_config(path: Path) -> Tuple[ExperimentConfig, Path]:
    """Schema-validated config plus the directory relative paths resolve against."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return load_config_document(doc), path.resolve().parent
