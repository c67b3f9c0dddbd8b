from datetime import datetime, timezone
import json
import os
from pathlib import Path
from typing import Any, Iterator, List, Optional


def _run_log_path() -> Path:
    # RSCMD_RUN_LOG wins; otherwise repo_root/data/run_log.jsonl
    override = os.environ.get("RSCMD_RUN_LOG")
    if override:
        path = Path(override)
    else:
        path = Path(__file__).resolve().parent / "data" / "run_log.jsonl"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except Exception:
        # best-effort; the write below reports the failure
        pass
    return path


def _jsonable(value: Any) -> Any:
    """Coerce numpy scalars/arrays and sets into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_jsonable(v) for v in items]
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    return value


def log_event(event_type: str, payload: dict, run_id: Optional[str] = None) -> bool:
    """Append an event to the run log (safe, non-raising).

    Returns True on success, False on failure.
    One JSON object per line: timestamp (UTC ISO), run_id, event_type, payload.
    """
    try:
        event = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "run_id": run_id,
            "event_type": event_type,
            "payload": _jsonable(payload),
        }
        line = json.dumps(event, ensure_ascii=False)
        with _run_log_path().open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        return True
    except Exception:
        return False


def read_events(run_id: Optional[str] = None, event_type: Optional[str] = None) -> List[dict]:
    """Load logged events, optionally filtered. Corrupt lines are skipped."""
    path = _run_log_path()
    if not path.exists():
        return []

    def _lines() -> Iterator[dict]:
        with path.open("r", encoding="utf-8") as fh:
            for raw in fh:
                try:
                    yield json.loads(raw)
                except Exception:
                    continue

    return [
        ev for ev in _lines()
        if (run_id is None or ev.get("run_id") == run_id)
        and (event_type is None or ev.get("event_type") == event_type)
    ]
