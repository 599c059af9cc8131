"""Effective CLI configuration: flags > env > config file > defaults.

The config file is flat TOML (typed key/value, no nesting). Environment
supplies the backend endpoints and API key through the SIDIFF_* variables.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .backends.http import (
    ENV_API_KEY,
    ENV_CHAT_URL,
    ENV_EDIT_URL,
    ENV_EMBED_URL,
    ENV_GEN_URL,
)
from .engine import WorkflowConfig

_ENV_KEYS = {
    "chat_url": ENV_CHAT_URL,
    "embed_url": ENV_EMBED_URL,
    "gen_url": ENV_GEN_URL,
    "edit_url": ENV_EDIT_URL,
    "api_key": ENV_API_KEY,
}


@dataclass
class CliSettings:
    tau: float = 8.0
    max_edits: int = 2
    k: int = 5
    activation_threshold: int = 200
    guidance_scale: float = 4.0
    negative_weight: float = 1.0
    seed: int = 0
    retries: int = 3
    human_in_loop: bool = False
    embed_dim: int = 64
    kb: str = "kb"
    out: str = "runs"
    concurrency: int = 1
    mock: bool = False
    episode: str = ""
    chat_url: str = ""
    embed_url: str = ""
    gen_url: str = ""
    edit_url: str = ""
    api_key: str = ""

    def workflow_config(self) -> WorkflowConfig:
        """Validates the workflow invariants as a side effect."""
        return WorkflowConfig(
            tau=self.tau,
            max_edits=self.max_edits,
            retrieval_k=self.k,
            activation_threshold=self.activation_threshold,
            guidance_scale=self.guidance_scale,
            negative_weight=self.negative_weight,
            seed=self.seed,
            retries=self.retries,
            human_in_loop=self.human_in_loop,
        )


def load_config_file(path: str | Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        values = tomllib.load(fh)
    known = {f.name for f in fields(CliSettings)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return values


def resolve_settings(
    flag_values: Mapping[str, Any],
    config_path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
) -> CliSettings:
    """Merge the four layers; flag values of None mean 'not given'."""
    env = env if env is not None else os.environ
    merged: dict[str, Any] = {}
    if config_path:
        merged.update(load_config_file(config_path))
    for name, env_key in _ENV_KEYS.items():
        if env.get(env_key):
            merged[name] = env[env_key]
    for name, value in flag_values.items():
        if value is not None:
            merged[name] = value
    settings = CliSettings(**merged)
    settings.workflow_config()
    return settings
