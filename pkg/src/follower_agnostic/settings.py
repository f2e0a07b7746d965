# follower_agnostic/settings.py
from __future__ import annotations

from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

ENV_PREFIX = "FOLLOWER_AGNOSTIC_"


class RuntimeSettings(BaseSettings):
    """Process-level knobs read from the environment (and `.env`).

    FOLLOWER_AGNOSTIC_OUTPUT_DIR overrides the config's output_dir; the --out flag overrides both.
    """

    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, env_file=".env", extra="ignore")

    output_dir: Optional[Path] = None
    log_level: Optional[str] = None
    jobs: int = Field(1, ge=1)


def resolve_output_dir(flag: Optional[str], settings: RuntimeSettings, config_value: str) -> Path:
    if flag:
        return Path(flag)
    if settings.output_dir is not None:
        return settings.output_dir
    return Path(config_value)
