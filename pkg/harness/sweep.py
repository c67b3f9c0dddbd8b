"""
Parameter sweeps over (value, series value, scheme, seed) cells.

Cells are independent and may run in a process pool; rows are written in cell
order by a single writer so identical inputs give identical CSV files.
"""

from __future__ import annotations

import json
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from audit_logger import log_event
from harness import __version__
from harness.models import (
    EXTRA_COLUMNS,
    SWEEP_COLUMNS,
    ParamValue,
    RunManifest,
    SweepRow,
    SweepSpec,
    config_hash,
)
from harness.store import RunStore, atomic_write_csv
from scenario import ScenarioConfig
from solver import SubproblemFailure, build_instance, evaluate, evaluation_samples, run_scheme, trace_rows

PRESETS_PATH = Path(__file__).resolve().parent.parent / "data" / "presets.json"


@dataclass(frozen=True)
class Cell:
    index: int
    base: Dict[str, Any]
    param: str
    value: ParamValue
    scheme: str
    seed: int
    series_param: Optional[str] = None
    series_value: Optional[ParamValue] = None
    evaluate: bool = True
    run_id: Optional[str] = None


def load_presets(path: Optional[Path] = None) -> Dict[str, Dict[str, Any]]:
    path = path or PRESETS_PATH
    with path.open("r", encoding="utf-8") as f:
        return json.load(f)


def preset_spec(name: str, seeds: Optional[List[int]] = None, path: Optional[Path] = None) -> SweepSpec:
    """Sweep spec of a named preset; KeyError for an unknown name."""
    presets = load_presets(path)
    if name not in presets:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(presets)}")
    entry = presets[name]
    data = dict(entry["sweep"])
    data["base"] = dict(entry.get("overrides", {}))
    if seeds is not None:
        data["seeds"] = seeds
    return SweepSpec.model_validate(data)


def expand_cells(spec: SweepSpec, run_id: Optional[str] = None) -> List[Cell]:
    series = spec.series_values or [None]
    cells: List[Cell] = []
    for value in spec.values:
        for series_value in series:
            for scheme in spec.schemes:
                for seed in spec.seeds:
                    cells.append(Cell(
                        index=len(cells),
                        base=spec.base,
                        param=spec.param,
                        value=value,
                        scheme=scheme,
                        seed=seed,
                        series_param=spec.series_param if series_value is not None else None,
                        series_value=series_value,
                        run_id=run_id,
                    ))
    return cells


def cell_config(cell: Cell) -> ScenarioConfig:
    changes: Dict[str, Any] = dict(cell.base)
    changes[cell.param] = cell.value
    if cell.series_param is not None:
        changes[cell.series_param] = cell.series_value
    changes["scheme"] = cell.scheme
    changes["rng_seed"] = cell.seed
    return ScenarioConfig.model_validate(changes)


def run_cell(cell: Cell) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """Solve one cell. Failures become rows with status=<exception name>."""
    row = SweepRow(
        param_value=cell.value,
        scheme=cell.scheme,
        seed=cell.seed,
        series_param=cell.series_param,
        series_value=cell.series_value,
    )
    traces: List[Dict[str, Any]] = []
    try:
        config = cell_config(cell)
        row.group_mode = config.group_mode
        instance = build_instance(config, cell.seed, run_id=cell.run_id)
        result = run_scheme(cell.scheme, instance, run_id=cell.run_id)
        row.mmf_rate_bps = result.mmf_rate_bps
        row.iterations = result.iterations
        row.wall_ms = round(result.wall_ms, 3)
        row.dropped_streams = len(result.dropped_streams)
        row.status = result.status
        if cell.evaluate:
            fresh = evaluation_samples(instance)
            row.eval_mmf_rate_bps = evaluate(
                result, fresh, instance.scenario.noise_power_w, config.bandwidth_hz
            ).mmf_rate_bps
        traces = trace_rows(result)
    except SubproblemFailure as e:
        row.status = type(e).__name__
        if e.last_result is not None:
            row.mmf_rate_bps = e.last_result.mmf_rate_bps
            row.iterations = e.last_result.iterations
    except Exception as e:
        row.status = type(e).__name__

    record = row.model_dump()
    for trace in traces:
        trace.update({"param_value": cell.value, "seed": cell.seed, "series_value": cell.series_value})
    log_event("sweep_cell", {"index": cell.index, **record}, run_id=cell.run_id)
    return record, traces


def run_sweep(
    spec: SweepSpec,
    out: Optional[Path] = None,
    run_id: Optional[str] = None,
    store: Optional[RunStore] = None,
) -> pd.DataFrame:
    """Run every cell, write results.csv (and traces.csv) plus manifest.json."""
    run_id = run_id or uuid.uuid4().hex[:12]
    store = store or RunStore()
    started = datetime.now(timezone.utc)
    cells = expand_cells(spec, run_id=run_id)

    if spec.threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=spec.threads) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(cell) for cell in cells]

    columns = SWEEP_COLUMNS + EXTRA_COLUMNS
    frame = pd.DataFrame([record for record, _ in outcomes], columns=columns)

    directory = Path(out) if out is not None else (Path(spec.out) if spec.out else store.run_dir(run_id))
    outputs = [str(atomic_write_csv(directory / "results.csv", frame))]
    if spec.write_traces:
        trace_frame = pd.DataFrame([t for _, traces in outcomes for t in traces])
        outputs.append(str(atomic_write_csv(directory / "traces.csv", trace_frame)))

    base = spec.base_config()
    manifest = RunManifest(
        run_id=run_id,
        command="sweep",
        config_hash=config_hash(base),
        config=base.model_dump(),
        seeds=spec.seeds,
        schemes=spec.schemes,
        param=spec.param,
        values=spec.values,
        series_param=spec.series_param,
        series_values=spec.series_values,
        version=__version__,
        started_at=started,
        finished_at=datetime.now(timezone.utc),
        n_rows=len(frame),
        outputs=outputs,
    )
    store.save_manifest(manifest, directory)

    failed = int((~frame["status"].isin(["converged", "max_iters", "dropped_private"])).sum())
    log_event("sweep_finished", {"rows": len(frame), "failed": failed, "out": str(directory)}, run_id=run_id)
    return frame
