"""Helpers for loading model configuration files and ``--set`` overrides."""

from __future__ import annotations

from dataclasses import dataclass
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import yaml

from .errors import ConfigError, UsageError
from .models import ModelConfig

logger = logging.getLogger(__name__)

PRESETS: Dict[str, Dict[str, Any]] = {
    "default": {},
    # Smaller separation network used for the fusion ablations.
    "reduced": {
        "d": 32,
        "sru_layers": 1,
        "sru_bidirectional": False,
        "unfold_kernel": 4,
        "unfold_stride": 2,
    },
}


@dataclass
class ConfigSource:
    """Parsed contents of a config file the user provided."""

    path: Path
    content: Any

    @property
    def as_mapping(self) -> Mapping[str, Any] | None:
        if isinstance(self.content, Mapping):
            return self.content
        return None


def load_config_sources(paths: Sequence[str] | None) -> List[ConfigSource]:
    """Load JSON or YAML config files."""

    results: List[ConfigSource] = []
    if not paths:
        return results

    for raw_path in paths:
        path = Path(raw_path).expanduser().resolve()
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        suffix = path.suffix.lower()
        try:
            if suffix in {".yaml", ".yml"}:
                content = yaml.safe_load(text)
            else:
                content = json.loads(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"Cannot parse config {path}: {exc}") from exc
        results.append(ConfigSource(path=path, content=content))
    return results


def flatten_mapping(values: Mapping[str, Any] | None, prefix: str = "") -> Mapping[str, Any]:
    """Create a flattened dict using dotted keys; nested sections are not config keys."""

    if values is None:
        return {}

    output: dict[str, Any] = {}
    for key, value in values.items():
        dotted = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, Mapping):
            output.update(flatten_mapping(value, dotted))
        else:
            output[dotted] = value
    return output


def parse_scalar(text: str) -> Any:
    """JSON scalar if it parses (``12``, ``true``, ``"s3"``), else the raw string."""

    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        return text
    if isinstance(value, (dict, list)):
        raise UsageError(f"Override values must be scalars, got {text!r}")
    return value


def load_model_config(
    path: str | Path | None = None,
    overrides: Optional[Mapping[str, Any]] = None,
    preset: str = "default",
) -> ModelConfig:
    """Preset, then the file at ``path``, then ``overrides``; validated."""

    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    config = ModelConfig().with_overrides(PRESETS[preset])
    if path is not None:
        (source,) = load_config_sources([str(path)])
        mapping = source.as_mapping
        if mapping is None:
            raise ConfigError(f"Config {source.path} must hold a mapping of keys to values")
        flat = flatten_mapping(mapping)
        nested = [key for key in flat if "." in key]
        if nested:
            raise ConfigError(f"Unknown config key: {nested[0]}")
        config = config.with_overrides(flat)
        logger.debug("loaded config %s: %s", source.path, json.dumps(flat, sort_keys=True, default=str))
    if overrides:
        config = config.with_overrides(overrides)
    return config.validate()
