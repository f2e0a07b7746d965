from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np
import pytest

from follower_agnostic.problems import QuadraticBilevel, RoutingGame, RoutingInstance

ROOT = Path(__file__).resolve().parents[1]
INSTANCES = ROOT / "instances"


@pytest.fixture
def two_link() -> RoutingInstance:
    # ℓ1(w) = w, ℓ2(w) = 1, unit demand, λ = 0.1
    return RoutingInstance.load(INSTANCES / "two_link.json")


@pytest.fixture
def three_path() -> RoutingInstance:
    return RoutingInstance.load(INSTANCES / "three_path.json")


@pytest.fixture
def two_link_game(two_link: RoutingInstance) -> RoutingGame:
    return RoutingGame(two_link, step_size=0.5)


@pytest.fixture
def identity_quadratic() -> QuadraticBilevel:
    """B = I, c = 0, a = 0, b = (1, 0) on the box [-1, 1]^2."""
    return QuadraticBilevel(
        a=[0.0, 0.0], b=[1.0, 0.0], B=np.eye(2), c=[0.0, 0.0], lo=-np.ones(2), hi=np.ones(2), step_size=0.5
    )


@pytest.fixture
def random_quadratic() -> QuadraticBilevel:
    return QuadraticBilevel.random(d=3, seed=11)


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    def _write(doc: Dict[str, Any], name: str = "experiment.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    return _write
