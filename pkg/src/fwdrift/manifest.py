"""Run manifests: which stage wrote which artifacts, under which seeds."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


class MissingArtifactError(Exception):
    """A pipeline stage's required input has not been produced yet."""


@dataclass
class RunManifest:
    run_id: str
    seeds: dict
    config: dict
    created_at: float = field(default_factory=time.time)
    stages: dict = field(default_factory=dict)

    MANIFEST_NAME = "manifest.json"

    def record_stage(self, name: str, artifacts: list[str], info: Optional[dict] = None) -> None:
        self.stages[name] = {
            "completed_at": time.time(),
            "artifacts": artifacts,
            "info": info or {},
        }

    def require_stage(self, name: str, base: Path) -> dict:
        if name not in self.stages:
            raise MissingArtifactError(
                f"stage '{name}' has not run yet; no artifacts to consume"
            )
        stage = self.stages[name]
        for artifact in stage["artifacts"]:
            if not (base / artifact).exists():
                raise MissingArtifactError(f"missing artifact: {artifact}")
        return stage

    def save(self, base: Path) -> Path:
        path = Path(base) / self.MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "seeds": self.seeds,
            "config": self.config,
            "stages": self.stages,
        }
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def load_or_create(cls, base: Path, seeds: dict, config: dict) -> "RunManifest":
        path = Path(base) / cls.MANIFEST_NAME
        if path.exists():
            data = json.loads(path.read_text())
            manifest = cls(
                run_id=data["run_id"],
                seeds=data["seeds"],
                config=data["config"],
                created_at=data["created_at"],
                stages=data["stages"],
            )
            manifest.seeds = seeds
            manifest.config = config
            return manifest
        return cls(run_id=f"run-{seeds.get('pairing', 0):08d}", seeds=seeds, config=config)
