"""Backend roster configuration: JSON file plus env-var secrets."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping

from .base import BackendSet, RetryPolicy
from .http import HttpBackend
from .mock import MockBackend
from .ratelimit import SlidingWindowRateLimiter

ROLES = ("chat", "generate_image", "edit_image", "caption", "embed", "vqa", "aesthetic", "rating")

DEFAULT_API_KEY_ENV = "STORYLOGIC_API_KEY"


class ConfigError(Exception):
    pass


def load_config(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def build_backends(config: Mapping[str, Any], mock_dir: str | Path | None = None) -> BackendSet:
    """Build the role->backend map from config, or a shared fixture mock."""
    entries: Mapping[str, Any] = config.get("backends", {})
    backend_set = BackendSet()
    if mock_dir is not None:
        mock = MockBackend(mock_dir)
        for role in ROLES:
            spec = entries.get(role, {})
            backend_set.roles[role] = mock
            backend_set.model_ids[role] = spec.get("model_id", "mock")
            backend_set.policies[role] = RetryPolicy.from_dict(spec.get("retry", {"max_attempts": 1}))
        return backend_set
    for role, spec in entries.items():
        if role not in ROLES:
            raise ConfigError(f"unknown backend role {role!r}; expected one of {ROLES}")
        endpoint = spec.get("endpoint")
        if not endpoint:
            raise ConfigError(f"backend role {role!r} missing endpoint")
        key_env = spec.get("api_key_env", DEFAULT_API_KEY_ENV)
        limiter = None
        if "rate_limit" in spec:
            rl = spec["rate_limit"]
            limiter = SlidingWindowRateLimiter(int(rl["max_requests"]), float(rl["window_ms"]))
        backend_set.roles[role] = HttpBackend(
            endpoint=endpoint,
            model_id=spec.get("model_id", "default"),
            api_key=os.environ.get(key_env, ""),
            timeout_ms=float(spec.get("timeout_ms", 60_000)),
            rate_limiter=limiter,
        )
        backend_set.model_ids[role] = spec.get("model_id", "default")
        backend_set.policies[role] = RetryPolicy.from_dict(spec.get("retry", {}))
    return backend_set
