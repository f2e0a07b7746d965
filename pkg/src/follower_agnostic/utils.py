# follower_agnostic/utils.py
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Optional

from rich.console import Console
from rich.logging import RichHandler

PACKAGE_LOGGER = "follower_agnostic"

console = Console(stderr=True)


def ensure_dirs(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def write_json(path: Path, obj: Any) -> None:
    # sorted keys + trailing newline keep manifests byte-stable across reruns
    ensure_dirs(path)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    if not path.exists():
        raise FileNotFoundError(f"No such file: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def sha256_file(path: Path, chunk_size: int = 1 << 16) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def setup_logging(verbose: bool = False, level: Optional[str] = None) -> logging.Logger:
    """Install one rich handler on the package logger (idempotent)."""
    if level is None:
        level = os.getenv("FOLLOWER_AGNOSTIC_LOG_LEVEL", "").strip() or ("DEBUG" if verbose else "INFO")
    if verbose:
        level = "DEBUG"

    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(level.upper())
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    logger.propagate = False
    return logger
