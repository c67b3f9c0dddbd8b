"""
Scenario configuration, network geometry and cache placement.

All quantities are kept in SI units internally (W, bit/s, m); dBm and Mbps only
appear at the config / report boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

CsitMode = Literal["full", "statistical"]
SchemeName = Literal["rs_cmd", "tin", "scm_rsma"]
GroupMode = Literal["g_le_k", "g_eq_k"]
CachePolicy = Literal["most_popular", "uniform_random"]

SCHEMES: List[str] = ["rs_cmd", "tin", "scm_rsma"]
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "data" / "default_config.json"


class ScenarioError(ValueError):
    """Invalid scenario configuration or cache placement."""

    def __init__(self, message: str, violations: Optional[List[str]] = None):
        super().__init__(message)
        self.violations = violations or []


# ---------- Configuration ----------

class ScenarioConfig(BaseModel):
    """All network constants of one simulated drop."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_bs: int = Field(7, ge=1, description="Number of base stations N")
    n_users: int = Field(15, ge=1, description="Number of users K")
    n_files: int = Field(50, ge=1, description="Library size F")
    n_antennas: int = Field(2, ge=1, description="Antennas per BS L")
    bandwidth_hz: float = Field(10e6, gt=0)
    noise_density_dbm_hz: float = Field(-168.0)
    p_max_dbm: float = Field(28.0, description="Per-BS transmit power cap")
    c_max_bps: float = Field(50e6, gt=0, description="Per-BS fronthaul capacity")
    cache_size_files: int = Field(5, ge=0, description="Cache size S per BS")
    a_max_streams: int = Field(8, ge=1, description="Max streams per BS")
    mu_db: float = Field(10.0, ge=0, description="Clustering threshold")
    d_max_common: int = Field(2, ge=0, description="Max foreign common messages per user")
    zipf_exponent: float = Field(1.0, ge=0)
    area_half_width_m: float = Field(400.0, gt=0)
    m_samples: int = Field(1000, ge=1, description="SAA sample size M")
    csit_mode: CsitMode = "statistical"
    scheme: SchemeName = "rs_cmd"
    group_mode: GroupMode = "g_le_k"
    rng_seed: int = 0

    # channel model knobs
    shadow_sigma_db: float = Field(8.0, ge=0)
    antenna_gain_db: float = 0.0
    min_distance_m: float = Field(10.0, gt=0)
    cache_policy: CachePolicy = "most_popular"

    # outer loop / subproblem control
    max_outer_iters: int = Field(100, ge=1)
    rel_tol: float = Field(1e-4, gt=0)
    patience: int = Field(3, ge=1)
    conic_tol: float = Field(1e-7, gt=0)
    conic_max_iters: int = Field(200, ge=1)
    ascent_tol: float = Field(1e-6, ge=0, description="Allowed objective dip, bit/s/Hz")
    m_eval_samples: int = Field(1000, ge=1)
    warm_start_from_tin: bool = False

    @property
    def p_max_w(self) -> float:
        return dbm_to_watt(self.p_max_dbm)

    @property
    def noise_power_w(self) -> float:
        return noise_power_watt(self.noise_density_dbm_hz, self.bandwidth_hz)

    @property
    def n_dims(self) -> int:
        """Length NL of an aggregate precoder / channel vector."""
        return self.n_bs * self.n_antennas


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def noise_power_watt(density_dbm_hz: float, bandwidth_hz: float) -> float:
    """σ² = N0·B in W (dBm/Hz density)."""
    return 10.0 ** ((density_dbm_hz + 10.0 * math.log10(bandwidth_hz) - 30.0) / 10.0)


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
    """Read a JSON config file (defaults to data/default_config.json) and apply overrides."""
    path = path or DEFAULT_CONFIG_PATH
    data: Dict[str, Any] = {}
    if path.exists():
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    data.update(overrides or {})
    return ScenarioConfig.model_validate(data)


# ---------- Scenario / placement ----------

@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    bs_positions: np.ndarray      # (N, 2) metres
    user_positions: np.ndarray    # (K, 2) metres
    noise_power_w: float

    def distances_km(self) -> np.ndarray:
        """(N, K) BS-user distances in km, clamped below at min_distance_m."""
        diff = self.bs_positions[:, None, :] - self.user_positions[None, :, :]
        dist_m = np.linalg.norm(diff, axis=-1)
        return np.maximum(dist_m, self.config.min_distance_m) / 1000.0


@dataclass(frozen=True)
class CachePlacement:
    matrix: np.ndarray  # (F, N) with entries in {0, 1}

    def hit(self, file_index: int, bs: int) -> bool:
        return bool(self.matrix[file_index, bs])

    def is_superset_of(self, other: "CachePlacement") -> bool:
        return bool(np.all(self.matrix >= other.matrix))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def validate_config(config: ScenarioConfig) -> List[str]:
    """Bounds check of a config (works on unvalidated `model_construct` objects too)."""
    issues: List[str] = []
    for name in ("n_bs", "n_users", "n_files", "m_samples"):
        if getattr(config, name) < 1:
            issues.append(f"ScenarioConfig.{name} must be >= 1 (got {getattr(config, name)})")
    if config.n_antennas < 1:
        issues.append(f"ScenarioConfig.n_antennas: antenna count L must be >= 1 (got {config.n_antennas})")
    if config.cache_size_files < 0:
        issues.append(f"ScenarioConfig.cache_size_files must be >= 0 (got {config.cache_size_files})")
    if config.cache_size_files > config.n_files:
        issues.append(
            f"ScenarioConfig.cache_size_files S={config.cache_size_files} exceeds n_files F={config.n_files}"
        )
    if config.a_max_streams < 1:
        issues.append(f"ScenarioConfig.a_max_streams must be >= 1 (got {config.a_max_streams})")
    if config.mu_db < 0:
        issues.append(f"ScenarioConfig.mu_db must be >= 0 (got {config.mu_db})")
    if config.d_max_common < 0:
        issues.append(f"ScenarioConfig.d_max_common must be >= 0 (got {config.d_max_common})")
    if config.zipf_exponent < 0:
        issues.append(f"ScenarioConfig.zipf_exponent must be >= 0 (got {config.zipf_exponent})")
    for name in ("bandwidth_hz", "c_max_bps", "area_half_width_m"):
        value = getattr(config, name)
        if not value > 0:
            issues.append(f"ScenarioConfig.{name} must be > 0 (got {value})")
    if not math.isfinite(config.p_max_dbm):
        issues.append(f"ScenarioConfig.p_max_dbm must be finite (got {config.p_max_dbm})")
    return issues


def validate_scenario(scenario: Scenario, placement: Optional[CachePlacement] = None) -> List[str]:
    """Return the list of violated invariants (empty when valid). Never raises or mutates."""
    try:
        cfg = scenario.config
        issues = validate_config(cfg)
        half = cfg.area_half_width_m
        for label, pos in (("bs_positions", scenario.bs_positions), ("user_positions", scenario.user_positions)):
            if pos.size and np.any(np.abs(pos) > half):
                issues.append(f"Scenario.{label}: coordinate outside [-{half}, {half}]^2")
        if not scenario.noise_power_w > 0:
            issues.append(f"Scenario.noise_power_w must be > 0 (got {scenario.noise_power_w})")

        if placement is not None:
            mat = placement.matrix
            if mat.shape != (cfg.n_files, cfg.n_bs):
                issues.append(f"CachePlacement.matrix shape {mat.shape} != (F, N) = {(cfg.n_files, cfg.n_bs)}")
            if not np.all(np.isin(mat, (0, 1))):
                issues.append("CachePlacement.matrix entries must be binary")
            col_sums = mat.sum(axis=0)
            for n, total in enumerate(col_sums):
                if total > cfg.cache_size_files:
                    issues.append(
                        f"CachePlacement column {n} caches {int(total)} files > cache_size_files={cfg.cache_size_files}"
                    )
        return issues
    except Exception as e:
        return [f"validation error: {e}"]


def build_scenario(config: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    """Draw BS and user positions i.i.d. uniform over the square."""
    issues = validate_config(config)
    if issues:
        raise ScenarioError("invalid scenario config: " + "; ".join(issues), issues)
    half = config.area_half_width_m
    bs = rng.uniform(-half, half, size=(config.n_bs, 2))
    users = rng.uniform(-half, half, size=(config.n_users, 2))
    return Scenario(
        config=config,
        bs_positions=_frozen(bs),
        user_positions=_frozen(users),
        noise_power_w=config.noise_power_w,
    )


def place_cache(
    popularity: np.ndarray,
    policy: CachePolicy,
    config: ScenarioConfig,
    rng: Optional[np.random.Generator] = None,
) -> CachePlacement:
    """Binary F×N placement; every column caches exactly S files."""
    n_files, n_bs, size = config.n_files, config.n_bs, config.cache_size_files
    if size > n_files:
        raise ScenarioError(f"cache_size_files S={size} exceeds n_files F={n_files}")
    popularity = np.asarray(popularity, dtype=float)
    if popularity.shape != (n_files,) or np.any(popularity < 0) or not np.isclose(popularity.sum(), 1.0):
        raise ScenarioError("popularity must be a nonnegative F-vector summing to 1")

    matrix = np.zeros((n_files, n_bs), dtype=np.int8)
    if size == 0:
        return CachePlacement(_frozen(matrix))

    if policy == "most_popular":
        # stable sort keeps lower file index first on ties
        top = np.argsort(-popularity, kind="stable")[:size]
        matrix[top, :] = 1
    elif policy == "uniform_random":
        if rng is None:
            raise ScenarioError("uniform_random cache placement needs an rng")
        for n in range(n_bs):
            matrix[rng.choice(n_files, size=size, replace=False), n] = 1
    else:
        raise ScenarioError(f"unknown cache policy {policy!r}")
    return CachePlacement(_frozen(matrix))


# ---------- Seeded streams ----------

STREAM_NAMES = ("geometry", "demands", "cache", "shadowing", "samples", "evaluation", "init")


def seed_streams(seed: int) -> Dict[str, np.random.Generator]:
    """One independent generator per purpose, all derived from a single seed.

    Schemes that share a seed see identical geometry, demands and samples.
    """
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(child) for name, child in zip(STREAM_NAMES, children)}
