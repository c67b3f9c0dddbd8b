from __future__ import annotations

import argparse
import sys
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, NoReturn, Optional, Sequence

import pandas as pd
from pydantic import ValidationError
from rich import print
from rich.table import Table

from channel import ChannelError, dump_channel_csv
from grouping import ReceiverError
from harness import __version__
from harness.checks import run_checks
from harness.export import SchemaError, multicast_gain_table, summarize
from harness.models import RunManifest, SweepSpec, config_hash, parse_seeds
from harness.store import RunStore, atomic_write_csv, atomic_write_json
from harness.sweep import load_presets, preset_spec, run_sweep
from scenario import SCHEMES, ScenarioConfig, ScenarioError, load_config
from solver import build_instance, evaluate, evaluation_samples, run_scheme, trace_rows

BAD_INPUT = (ValidationError, ScenarioError, SchemaError, ChannelError, ReceiverError, KeyError, ValueError, FileNotFoundError)


def _parse_value(text: str) -> Any:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value (got {pair!r})")
        key, value = pair.split("=", 1)
        out[key.strip()] = _parse_value(value.strip())
    return out


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    """--config file, then --preset overrides, then --set pairs."""
    overrides: Dict[str, Any] = {}
    if getattr(args, "preset", None):
        presets = load_presets()
        if args.preset not in presets:
            raise KeyError(f"unknown preset {args.preset!r}; available: {sorted(presets)}")
        overrides.update(presets[args.preset].get("overrides", {}))
    overrides.update(_overrides(getattr(args, "set", None) or []))
    path = Path(args.config) if getattr(args, "config", None) else None
    if path is not None and not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return load_config(path, overrides)


def _schemes(choice: str) -> List[str]:
    return list(SCHEMES) if choice == "all" else [choice]


def _out_dir(args: argparse.Namespace, run_id: str) -> Path:
    return Path(args.out) if args.out else RunStore().run_dir(run_id)


def _manifest(run_id: str, command: str, config: ScenarioConfig, seeds: List[int], schemes: List[str],
              started: datetime, outputs: List[str]) -> RunManifest:
    return RunManifest(
        run_id=run_id,
        command=command,
        config_hash=config_hash(config),
        config=config.model_dump(),
        seeds=seeds,
        schemes=schemes,
        version=__version__,
        started_at=started,
        finished_at=datetime.now(timezone.utc),
        outputs=outputs,
    )


# ---------- Subcommands ----------

def cmd_generate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    seeds = parse_seeds(args.seeds)
    run_id = uuid.uuid4().hex[:12]
    started = datetime.now(timezone.utc)
    out = _out_dir(args, run_id)
    outputs: List[str] = []
    for seed in seeds:
        instance = build_instance(config, seed, run_id=run_id)
        directory = out / f"seed_{seed}"
        scenario = {
            "seed": seed,
            "bs_positions_m": instance.scenario.bs_positions.tolist(),
            "user_positions_m": instance.scenario.user_positions.tolist(),
            "noise_power_w": instance.scenario.noise_power_w,
            "requests": instance.demands.requests.tolist(),
            "groups": [{"id": g.id, "file": g.file, "members": list(g.members)} for g in instance.groups],
        }
        outputs.append(str(atomic_write_json(directory / "scenario.json", scenario)))
        placement = pd.DataFrame(
            instance.placement.matrix,
            columns=[f"bs{n}" for n in range(config.n_bs)],
        )
        placement.insert(0, "file", range(config.n_files))
        outputs.append(str(atomic_write_csv(directory / "placement.csv", placement)))
        dump_channel_csv(instance.stats, instance.samples, directory)
    RunStore().save_manifest(_manifest(run_id, "generate", config, seeds, [], started, outputs), out)
    print(f"[bold green]generated {len(seeds)} scenario(s)[/bold green] → {out}")
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    seeds = parse_seeds(args.seeds)
    schemes = _schemes(args.scheme)
    run_id = uuid.uuid4().hex[:12]
    started = datetime.now(timezone.utc)
    out = _out_dir(args, run_id)

    table = Table(title="MMF rates")
    for col in ("seed", "scheme", "status", "iterations", "MMF [Mbps]", "eval [Mbps]", "dropped"):
        table.add_column(col)

    traces: List[Dict[str, Any]] = []
    summary: List[Dict[str, Any]] = []
    for seed in seeds:
        instance = build_instance(config, seed, run_id=run_id)
        for scheme in schemes:
            result = run_scheme(scheme, instance, run_id=run_id, verbose=args.verbose)
            report = evaluate(result, evaluation_samples(instance), instance.scenario.noise_power_w, config.bandwidth_hz)
            for row in trace_rows(result):
                row["seed"] = seed
                traces.append(row)
            summary.append({
                "seed": seed,
                "scheme": scheme,
                "status": result.status,
                "iterations": result.iterations,
                "mmf_rate_bps": result.mmf_rate_bps,
                "eval_mmf_rate_bps": report.mmf_rate_bps,
                "eval_gap_rel": report.gap_rel,
                "dropped_streams": [f"{o}{i}" for o, i in result.dropped_streams],
                "max_violation": result.report.max_violation if result.report else 0.0,
            })
            table.add_row(
                str(seed), scheme, result.status, str(result.iterations),
                f"{result.mmf_rate_bps / 1e6:.4f}", f"{report.mmf_rate_bps / 1e6:.4f}",
                str(len(result.dropped_streams)),
            )

    outputs = [
        str(atomic_write_csv(out / "trace.csv", pd.DataFrame(traces))),
        str(atomic_write_json(out / "solve.json", {"results": summary})),
    ]
    RunStore().save_manifest(_manifest(run_id, "solve", config, seeds, schemes, started, outputs), out)
    print(table)
    print(f"trace → {out / 'trace.csv'}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    seeds = parse_seeds(args.seeds) if args.seeds else None
    if args.preset and not args.param:
        spec = preset_spec(args.preset, seeds=seeds)
        updates: Dict[str, Any] = {"threads": args.threads}
        if args.scheme:
            updates["schemes"] = _schemes(args.scheme)
        if args.config or args.set:
            updates["base"] = resolve_config(args).model_dump()
        spec = SweepSpec.model_validate({**spec.model_dump(), **updates})
    else:
        if not args.param or not args.values:
            raise ValueError("sweep needs --preset or both --param and --values")
        base = resolve_config(args)
        spec = SweepSpec(
            base=base.model_dump(),
            param=args.param,
            values=[_parse_value(v) for v in args.values.split(",")],
            schemes=_schemes(args.scheme or "all"),
            seeds=seeds or list(range(10)),
            threads=args.threads,
        )
    run_id = uuid.uuid4().hex[:12]
    out = _out_dir(args, run_id)
    print(f"[cyan]sweep[/cyan] {spec.param} × {len(spec.values)} values, {spec.n_cells()} cells → {out}")
    frame = run_sweep(spec, out=out, run_id=run_id)
    failed = frame[~frame["status"].isin(["converged", "max_iters", "dropped_private"])]
    print(f"[bold green]{len(frame)} rows written[/bold green] ({len(failed)} failed cells)")
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    results = run_checks(quick=not args.full)
    table = Table(title="invariant suite")
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail")
    for r in results:
        table.add_row(r.name, "[green]PASS[/green]" if r.passed else "[red]FAIL[/red]", r.detail)
    print(table)
    return 0 if all(r.passed for r in results) else 1


def cmd_summarize(args: argparse.Namespace) -> int:
    path = Path(args.csv)
    if not path.exists():
        raise FileNotFoundError(f"CSV not found: {path}")
    frame = multicast_gain_table(path, scheme=args.gain_scheme) if args.gain else summarize(path)
    if args.out:
        atomic_write_csv(Path(args.out), frame)
    table = Table(title="multicast gain" if args.gain else f"summary of {path.name}")
    for col in frame.columns:
        table.add_column(str(col))
    for _, row in frame.iterrows():
        table.add_row(*[f"{v:.6g}" if isinstance(v, float) else str(v) for v in row.tolist()])
    print(table)
    return 0


# ---------- Entry ----------

class _Parser(argparse.ArgumentParser):
    """Usage errors surface as ValueError so they share the one-line error format."""

    def error(self, message: str) -> NoReturn:
        raise ValueError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rscmd", description="Max-min fair rate-splitting beamforming in cache-aided C-RAN")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (ScenarioConfig fields)")
        p.add_argument("--preset", help="named preset from data/presets.json")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        p.add_argument("--seeds", default="0", help="seed range a..b, list a,b,c or a single seed")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("generate", help="write scenario, placement and channel artifacts")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve one or all schemes and write the convergence trace")
    common(p)
    p.add_argument("--scheme", choices=SCHEMES + ["all"], default="rs_cmd")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="parameter sweep over values × schemes × seeds")
    common(p)
    p.set_defaults(seeds=None)
    p.add_argument("--scheme", choices=SCHEMES + ["all"], default=None)
    p.add_argument("--param", help="ScenarioConfig field to sweep")
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--full", action="store_true", help="100-seed variant")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("summarize", help="mean and 95%% CI per (param, scheme)")
    p.add_argument("csv")
    p.add_argument("--gain", action="store_true", help="multicast-gain table (G≤K vs G=K)")
    p.add_argument("--gain-scheme", default="rs_cmd")
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    message = str(exc).replace("\n", " ").replace('"', "'")
    sys.stderr.write(f'error={type(exc).__name__} message="{message}"\n')
    return code


def cli_run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments and dispatch. 0 on success, 2 on bad input, 1 on runtime failure."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except ValueError as e:
        return _fail(e, 2)
    try:
        return args.func(args)
    except BAD_INPUT as e:
        return _fail(e, 2)
    except Exception as e:
        return _fail(e, 1)


if __name__ == "__main__":
    sys.exit(cli_run())
