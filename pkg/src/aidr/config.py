"""Run configuration: one JSON document, validated strictly on load.

Only ``api_key`` values may reference environment variables (``"${NAME}"``).
"""
from __future__ import annotations

import copy
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .channel import TechnologyProfile, default_profiles
from .errors import ConfigError
from .fusion import TRAINING_PROVENANCE

_ENV_REF = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")

DEFAULTS = {
    "seed": 0,
    "profiles": [p.to_dict() for p in default_profiles()],
    "scenario_file": None,
    "dataset": {"scenes_dir": None, "count": 4160, "split": "random", "image_size": 16, "write_images": True,
                "context_style": "numeric"},
    "teacher": {"endpoint": None, "model": "gpt-3.5-turbo", "mock": False, "concurrency": 4, "batch_size": 8,
                "group_by": "dataset", "api_key": "${LLM_API_KEY}", "max_retries": 3},
    "student": {"backend": "gold", "endpoint": None, "model": "gpt-3.5-turbo", "d": 16, "seed": 0,
                "patch_grid": 4, "max_rationale_tokens": 24, "max_input_tokens": 512},
    "evaluation": {"split": "test", "table_format": "markdown", "label": "LLM-CoT (pipeline)"},
    "provenance": dict(TRAINING_PROVENANCE),
}

_NULLABLE = {"scenario_file", "dataset.scenes_dir", "teacher.endpoint", "student.endpoint", "teacher.api_key"}
_CHOICES = {
    "dataset.split": {"random", "scene", "none"},
    "dataset.context_style": {"numeric", "prose"},
    "teacher.group_by": {"dataset", "scene"},
    "student.backend": {"toy", "gold", "random", "remote"},
    "evaluation.table_format": {"markdown", "csv", "text"},
}


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict) and key != "provenance":
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], val, path + ".")
            continue
        default = base[key]
        if val is None and path not in _NULLABLE:
            raise ConfigError(f"config key {path!r} may not be null")
        if val is not None and default is not None and not isinstance(val, type(default)):
            if not (isinstance(default, float) and isinstance(val, int)) and key != "provenance":
                raise ConfigError(f"config key {path!r} expects {type(default).__name__}, "
                                  f"got {type(val).__name__}")
        if path in _CHOICES and val not in _CHOICES[path]:
            raise ConfigError(f"config key {path!r} must be one of {sorted(_CHOICES[path])}, got {val!r}")
        out[key] = val
    return out


def resolve_secret(value):
    if not isinstance(value, str):
        return value
    m = _ENV_REF.match(value)
    return os.environ.get(m.group(1), "") if m else value


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        data = _merge(DEFAULTS, d)
        try:
            data["_profiles"] = [TechnologyProfile.from_dict(p) for p in data["profiles"]]
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad profiles entry: {exc}") from exc
        return cls(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(doc)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def profiles(self) -> list:
        return self.data.get("_profiles") or [TechnologyProfile.from_dict(p) for p in self.data["profiles"]]

    @property
    def api_key(self) -> str:
        return resolve_secret(self.data["teacher"]["api_key"]) or ""
