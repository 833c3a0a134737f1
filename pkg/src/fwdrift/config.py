"""Pipeline configuration: JSON file, overridable by CLI flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .twin import TrainConfig


@dataclass
class PipelineConfig:
    seed: int = 1
    runs: int = 1
    days: int = 11
    devices: Optional[list[str]] = None  # None = every fixture device
    batch_size: int = 50
    max_epochs: int = 50
    margin: float = 1.0
    learning_rate: float = 1e-3
    patience: int = 5
    min_delta: float = 1e-4
    embedding_dim: int = 64
    dtype: str = "float32"
    assume_ocsp_ports: list[int] = None  # extra TCP ports treated as OCSP

    def __post_init__(self) -> None:
        if self.assume_ocsp_ports is None:
            self.assume_ocsp_ports = []

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            margin=self.margin,
            learning_rate=self.learning_rate,
            patience=self.patience,
            min_delta=self.min_delta,
            seed=self.seed if seed is None else seed,
            embedding_dim=self.embedding_dim,
            dtype=self.dtype,
        )

    def as_dict(self) -> dict:
        return asdict(self)


def load_config(path: Optional[Path]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    data = json.loads(Path(path).read_text())
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**data)


def save_config(config: PipelineConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.as_dict(), sort_keys=True, indent=2) + "\n")
