"""Pipeline configuration: key=value files, environment overrides and a content hash."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

ENV_PREFIX = "FUSEDFRAUD_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # graph
    lam: float = 1.0
    window_days: int = 7
    end_day: int = 0  # 0: latest day in the log
    # relation embeddings
    rel_dim: int = 8
    margin: float = 1.0
    transr_epochs: int = 200
    transr_lr: float = 0.01
    transr_batch: int = 1024
    # model
    edge_dim: int = 64
    node_dim: int = 52
    att_dim: int = 8
    heads: int = 3
    lr: float = 1e-4
    max_epochs: int = 2000
    check_every: int = 100
    patience: int = 5
    # detection and rules
    seed_quantile: float = 0.012
    propagation_threshold: float = 0.65
    kappa: float = 3.0
    commission: float = 0.05
    metric_policy: str = "exclude"
    # synthetic scenario
    n_users: int = 5000
    n_products: int = 300
    n_days: int = 7
    fraud_fraction: float = 0.015
    n_stocking_groups: int = 4
    n_cashback_groups: int = 4
    n_mixed_groups: int = 2
    group_size_min: int = 5
    group_size_max: int = 7
    normal_txn_rate: float = 1.0
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        if self.edge_dim != 8 * self.rel_dim:
            raise ConfigError(f"edge_dim must equal 8 * rel_dim ({8 * self.rel_dim}), got {self.edge_dim}")
        if not 0 < self.seed_quantile < 1:
            raise ConfigError(f"seed_quantile must lie in (0, 1), got {self.seed_quantile}")
        if self.window_days < 1:
            raise ConfigError(f"window_days must be >= 1, got {self.window_days}")
        if self.metric_policy not in ("exclude", "oracle"):
            raise ConfigError(f"metric_policy must be exclude or oracle, got {self.metric_policy!r}")
        for name in ("margin", "kappa", "lr", "transr_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        return self

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def with_overrides(self, values: Mapping[str, Any]) -> "PipelineConfig":
        return replace(self, **{k: _coerce(k, v) for k, v in values.items()}).validate()


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: Any) -> Any:
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if not isinstance(raw, str):
        return raw
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} expects {kind}, got {raw!r}") from None
    return raw.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key not in _TYPES:
                raise ConfigError(f"unknown config key {key!r} from environment variable {name}")
            out[key] = value
    return out


def resolve(path: Optional[str | Path] = None, flags: Optional[Mapping[str, Any]] = None,
            environ: Optional[Mapping[str, str]] = None) -> PipelineConfig:
    """Defaults, then environment, then the config file, then command flags."""
    merged: dict[str, Any] = dict(env_overrides(environ))
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        merged.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    merged.update({k: v for k, v in (flags or {}).items() if v is not None})
    return PipelineConfig().with_overrides(merged)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(f"# config_sha256={cfg.digest()}\n" + cfg.to_text(), encoding="utf-8", newline="\n")
