"""
Configuration for hierbench
Runtime defaults come from environment variables; training runs can also be
described by a JSON file that CLI flags override.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import ConfigInvalid


@dataclass(frozen=True)
class Settings:
    log_level: str = "INFO"
    workers: int = 1
    learning_rate: float = 1e-3
    batch_size: int = 64
    hidden_width: int = 32
    hidden_layers: int = 1

    @classmethod
    def from_env(cls) -> "Settings":
        """Load settings from environment variables"""
        try:
            return cls(
                log_level=os.getenv("HIERBENCH_LOG_LEVEL", "INFO").upper(),
                workers=int(os.getenv("HIERBENCH_WORKERS", "1")),
                learning_rate=float(os.getenv("HIERBENCH_LR", "1e-3")),
                batch_size=int(os.getenv("HIERBENCH_BATCH_SIZE", "64")),
                hidden_width=int(os.getenv("HIERBENCH_HIDDEN_WIDTH", "32")),
                hidden_layers=int(os.getenv("HIERBENCH_HIDDEN_LAYERS", "1")),
            )
        except ValueError as e:
            raise ConfigInvalid(f"Bad HIERBENCH_* environment value: {e}") from e


TRAINERS = ("clean", "fat", "trades")
CURRICULA = ("none", "chat", "scratch")
SCHEDULE_MODES = ("exponential", "linear")


@dataclass
class TrainConfig:
    """Training run description (file form of the `train` command)"""

    trainer: str = "fat"
    curriculum: str = "chat"
    schedule: str = "exponential"
    total_iterations: int = 3000
    seed: int = 0
    dataset_path: Optional[str] = None
    tree_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    learning_rate: float = 1e-3
    batch_size: int = 64
    hidden_width: int = 32
    hidden_layers: int = 1
    fat: Dict[str, Any] = field(default_factory=dict)
    trades: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.trainer not in TRAINERS:
            raise ConfigInvalid(f"Unknown trainer '{self.trainer}', expected one of {TRAINERS}")
        if self.curriculum not in CURRICULA:
            raise ConfigInvalid(f"Unknown curriculum '{self.curriculum}', expected one of {CURRICULA}")
        if self.schedule not in SCHEDULE_MODES:
            raise ConfigInvalid(f"Unknown schedule mode '{self.schedule}'")
        if self.total_iterations < 1:
            raise ConfigInvalid("total_iterations must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigInvalid("learning_rate must be > 0 and batch_size >= 1")
        if self.hidden_width < 1 or self.hidden_layers < 0:
            raise ConfigInvalid("hidden_width must be >= 1 and hidden_layers >= 0")

    @classmethod
    def from_settings(cls, settings: Settings, **overrides) -> "TrainConfig":
        cfg = cls(
            learning_rate=settings.learning_rate,
            batch_size=settings.batch_size,
            hidden_width=settings.hidden_width,
            hidden_layers=settings.hidden_layers,
        )
        return cfg.merged(overrides)

    @classmethod
    def load(cls, path: Path, settings: Optional[Settings] = None) -> "TrainConfig":
        """Load a training config JSON, filling gaps from settings"""
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigInvalid(f"Unknown training config keys: {unknown}")
        return cls.from_settings(settings or Settings(), **raw)

    def merged(self, overrides: Dict[str, Any]) -> "TrainConfig":
        """Copy with non-None overrides applied; nested dicts are merged key-wise"""
        data = asdict(self)
        for key, value in overrides.items():
            if value is None:
                continue
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **{k: v for k, v in value.items() if v is not None}}
            else:
                data[key] = value
        return TrainConfig(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
