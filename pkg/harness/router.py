"""
FastAPI router exposing presets, single solves and synchronous sweeps.
"""

from __future__ import annotations

from typing import Any, Dict

from fastapi import APIRouter, HTTPException
from pydantic import ValidationError

from audit_logger import log_event
from harness.models import SolveRequest, SweepRequest
from harness.sweep import load_presets, preset_spec, run_sweep
from scenario import ScenarioConfig, ScenarioError
from solver import SubproblemFailure, build_instance, evaluate, evaluation_samples, run_scheme, trace_rows

router = APIRouter(prefix="/api", tags=["rs-cmd"])


@router.get("/presets")
def list_presets() -> Dict[str, Any]:
    """Preset names with their descriptions and swept parameter."""
    presets = load_presets()
    return {
        "presets": [
            {
                "name": name,
                "description": entry.get("description", ""),
                "param": entry["sweep"]["param"],
                "values": entry["sweep"]["values"],
            }
            for name, entry in sorted(presets.items())
        ]
    }


@router.post("/solve")
def solve_endpoint(request: SolveRequest) -> Dict[str, Any]:
    """Solve one scheme on one seed. Returns the MMF rate, per-group rates and the trace."""
    try:
        overrides: Dict[str, Any] = {}
        if request.preset:
            overrides.update(load_presets()[request.preset].get("overrides", {}))
        overrides.update(request.overrides)
        overrides.update({"scheme": request.scheme, "rng_seed": request.seed})
        config = ScenarioConfig.model_validate(overrides)
        instance = build_instance(config, request.seed)
        result = run_scheme(request.scheme, instance)
    except KeyError:
        raise HTTPException(status_code=404, detail=f"unknown preset {request.preset!r}")
    except (ValidationError, ScenarioError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except SubproblemFailure as e:
        log_event("api_error", {"endpoint": "solve", "error": str(e)})
        raise HTTPException(status_code=500, detail=str(e))

    body: Dict[str, Any] = {
        "scheme": result.scheme,
        "status": result.status,
        "mmf_rate_bps": result.mmf_rate_bps,
        "group_rates_bps": [float(r) for r in result.rates.group_rates(result.receiver)],
        "iterations": result.iterations,
        "dropped_streams": [f"{o}{i}" for o, i in result.dropped_streams],
        "trace": trace_rows(result),
    }
    if request.evaluate:
        report = evaluate(result, evaluation_samples(instance), instance.scenario.noise_power_w, config.bandwidth_hz)
        body["eval_mmf_rate_bps"] = report.mmf_rate_bps
        body["eval_gap_rel"] = report.gap_rel
    return body


@router.post("/sweep")
def sweep_endpoint(request: SweepRequest) -> Dict[str, Any]:
    """Run a sweep synchronously and return its rows."""
    try:
        spec = preset_spec(request.preset, seeds=request.seeds) if request.preset else request.spec
        if request.seeds is not None and request.spec is not None:
            spec = spec.model_copy(update={"seeds": request.seeds})
    except KeyError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=str(e))

    frame = run_sweep(spec)
    records = frame.astype(object).where(frame.notna(), None).to_dict(orient="records")
    return {"rows": records, "n_rows": len(records)}
