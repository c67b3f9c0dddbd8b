"""
File-based store for run artifacts: manifests, result tables and traces.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from harness.models import RunManifest


def atomic_write_text(path: Path, text: str) -> Path:
    """Write to a temp file next to `path`, then rename over it."""
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + ".tmp")
    with temp_path.open("w", encoding="utf-8", newline="") as f:
        f.write(text)
    temp_path.replace(path)
    return path


def atomic_write_json(path: Path, data: Dict[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True))


def atomic_write_csv(path: Path, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


class RunStore:
    """One directory per run id: manifest.json plus any CSV outputs."""

    def __init__(self, base_path: Optional[Path] = None):
        if base_path is None:
            project_root = Path(__file__).resolve().parent.parent
            base_path = project_root / "data" / "runs"
        self.base_path = base_path
        self.base_path.mkdir(parents=True, exist_ok=True)

    def run_dir(self, run_id: str) -> Path:
        path = self.base_path / run_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    def save_manifest(self, manifest: RunManifest, directory: Optional[Path] = None) -> Path:
        directory = directory or self.run_dir(manifest.run_id)
        return atomic_write_json(directory / "manifest.json", manifest.to_dict())

    def load_manifest(self, run_id: str) -> Optional[RunManifest]:
        path = self.base_path / run_id / "manifest.json"
        if not path.exists():
            return None
        with path.open("r", encoding="utf-8") as f:
            return RunManifest.model_validate(json.load(f))

    def list_runs(self) -> List[str]:
        return sorted(p.parent.name for p in self.base_path.glob("*/manifest.json"))
