"""
Pydantic models for sweep definitions, result rows, run manifests and HTTP payloads.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from scenario import SCHEMES, ScenarioConfig

ParamValue = Union[int, float, str]

SWEEP_COLUMNS = [
    "param_value",
    "scheme",
    "seed",
    "mmf_rate_bps",
    "iterations",
    "wall_ms",
    "dropped_streams",
]
EXTRA_COLUMNS = ["status", "group_mode", "eval_mmf_rate_bps", "series_param", "series_value"]


def parse_seeds(text: str) -> List[int]:
    """'0..9' → [0..9] inclusive; '3' → [3]; '1,4,7' → [1, 4, 7]."""
    text = text.strip()
    if ".." in text:
        lo, hi = (int(x) for x in text.split("..", 1))
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def config_hash(config: ScenarioConfig) -> str:
    blob = json.dumps(config.model_dump(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class SweepSpec(BaseModel):
    """One parameter sweep: values × schemes × seeds, optionally × a second series axis."""
    base: Dict[str, Any] = Field(default_factory=dict, description="ScenarioConfig overrides")
    param: str
    values: List[ParamValue] = Field(..., min_length=1)
    schemes: List[str] = Field(default_factory=lambda: ["rs_cmd"])
    seeds: List[int] = Field(default_factory=lambda: list(range(10)), min_length=1)
    series_param: Optional[str] = None
    series_values: List[ParamValue] = Field(default_factory=list)
    out: Optional[str] = None
    threads: int = Field(1, ge=1)
    write_traces: bool = False

    @field_validator("param", "series_param")
    @classmethod
    def _known_field(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and v not in ScenarioConfig.model_fields:
            raise ValueError(f"{v!r} is not a ScenarioConfig field")
        return v

    @field_validator("schemes")
    @classmethod
    def _known_schemes(cls, v: List[str]) -> List[str]:
        unknown = [s for s in v if s not in SCHEMES]
        if unknown or not v:
            raise ValueError(f"unknown schemes {unknown}; expected a subset of {SCHEMES}")
        return v

    @model_validator(mode="after")
    def _series_needs_values(self) -> "SweepSpec":
        if self.series_param and not self.series_values:
            raise ValueError("series_param given without series_values")
        return self

    def base_config(self) -> ScenarioConfig:
        return ScenarioConfig.model_validate(self.base)

    def n_cells(self) -> int:
        return len(self.values) * max(len(self.series_values), 1) * len(self.schemes) * len(self.seeds)


class SweepRow(BaseModel):
    param_value: ParamValue
    scheme: str
    seed: int
    mmf_rate_bps: float = 0.0
    iterations: int = 0
    wall_ms: float = 0.0
    dropped_streams: int = 0
    status: str = "converged"
    group_mode: str = "g_le_k"
    eval_mmf_rate_bps: Optional[float] = None
    series_param: Optional[str] = None
    series_value: Optional[ParamValue] = None


class RunManifest(BaseModel):
    run_id: str
    command: str
    config_hash: str
    config: Dict[str, Any]
    seeds: List[int]
    schemes: List[str]
    param: Optional[str] = None
    values: List[ParamValue] = Field(default_factory=list)
    series_param: Optional[str] = None
    series_values: List[ParamValue] = Field(default_factory=list)
    version: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    n_rows: int = 0
    outputs: List[str] = Field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data = self.model_dump()
        data["started_at"] = self.started_at.isoformat()
        data["finished_at"] = self.finished_at.isoformat() if self.finished_at else None
        return data


class SolveRequest(BaseModel):
    """Body of POST /api/solve."""
    preset: Optional[str] = None
    overrides: Dict[str, Any] = Field(default_factory=dict)
    scheme: str = "rs_cmd"
    seed: int = Field(0, ge=0)
    evaluate: bool = False

    @field_validator("scheme")
    @classmethod
    def _scheme(cls, v: str) -> str:
        if v not in SCHEMES:
            raise ValueError(f"unknown scheme {v!r}")
        return v


class SweepRequest(BaseModel):
    """Body of POST /api/sweep; runs synchronously."""
    preset: Optional[str] = None
    spec: Optional[SweepSpec] = None
    seeds: Optional[List[int]] = None

    @model_validator(mode="after")
    def _one_source(self) -> "SweepRequest":
        if (self.preset is None) == (self.spec is None):
            raise ValueError("give exactly one of preset or spec")
        return self
