"""
Summaries of sweep CSVs: per-(param, scheme) mean with a normal-approximation 95% CI,
and the multicast-gain table comparing one group per file with one group per user.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd
from scipy import stats

from harness.models import SWEEP_COLUMNS

Z95 = float(stats.norm.ppf(0.975))


class SchemaError(ValueError):
    """The CSV does not carry the columns a summary needs."""


def _read(source: Union[str, Path, pd.DataFrame]) -> pd.DataFrame:
    if isinstance(source, pd.DataFrame):
        return source.copy()
    return pd.read_csv(source)


def _require(frame: pd.DataFrame, columns: List[str]) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")


def summarize(source: Union[str, Path, pd.DataFrame], value_column: str = "mmf_rate_bps") -> pd.DataFrame:
    """Mean and 95% CI over seeds for every (param_value[, series_value], scheme).

    A single seed has no spread; its CI columns hold the string "n/a".
    """
    frame = _read(source)
    _require(frame, SWEEP_COLUMNS + ([value_column] if value_column not in SWEEP_COLUMNS else []))

    keys = ["param_value"]
    if "series_value" in frame.columns and frame["series_value"].notna().any():
        keys.append("series_value")
    keys.append("scheme")

    grouped = frame.groupby(keys, sort=True, dropna=False)[value_column]
    out = grouped.agg(n="count", mean="mean", std="std").reset_index()
    half = Z95 * out["std"] / np.sqrt(out["n"])
    single = out["n"] < 2
    out["ci95_halfwidth"] = half.where(~single, other=np.nan)
    out["ci95_low"] = (out["mean"] - half).where(~single, other=np.nan)
    out["ci95_high"] = (out["mean"] + half).where(~single, other=np.nan)
    for col in ("ci95_halfwidth", "ci95_low", "ci95_high"):
        out[col] = out[col].astype(object).where(~single, other="n/a")
    out = out.drop(columns=["std"]).rename(columns={"mean": f"mean_{value_column}"})
    return out


def multicast_gain_table(source: Union[str, Path, pd.DataFrame], scheme: str = "rs_cmd") -> pd.DataFrame:
    """gain% = 100·(MMF_{G≤K} − MMF_{G=K}) / MMF_{G=K} per parameter value."""
    frame = _read(source)
    _require(frame, ["param_value", "scheme", "mmf_rate_bps", "group_mode"])
    frame = frame[frame["scheme"] == scheme]
    means = frame.groupby(["param_value", "group_mode"], sort=True)["mmf_rate_bps"].mean().unstack("group_mode")
    for mode in ("g_le_k", "g_eq_k"):
        if mode not in means.columns:
            raise SchemaError(f"no rows with group_mode={mode}")
    table = pd.DataFrame({
        "param_value": means.index,
        "mmf_g_le_k_bps": means["g_le_k"].to_numpy(),
        "mmf_g_eq_k_bps": means["g_eq_k"].to_numpy(),
    })
    base = table["mmf_g_eq_k_bps"].replace(0.0, np.nan)
    table["multicast_gain_pct"] = (100.0 * (table["mmf_g_le_k_bps"] - table["mmf_g_eq_k_bps"]) / base).round(2)
    return table.reset_index(drop=True)
