"""
Outer WMMSE loop over the SAA problem, feasible initialization and the three
scheme variants (RS-CMD, TIN, SCM-RSMA).

A solve goes: build instance → receiver structure → clustering → initialize →
repeat (update statistics, solve subproblem) until the min rate stops moving.
"""

from __future__ import annotations

import math
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from rich import print
from rich.panel import Panel

from audit_logger import log_event
from channel import ChannelStatistics, SampleSet, build_statistics, draw_samples
from clustering import ClusterAssignment, private_candidate_clusters, run_clustering
from conic import SubproblemModel, build_subproblem, solve
from grouping import (
    DemandProfile,
    MulticastGroup,
    ReceiverStructure,
    build_receiver_structure,
    draw_requests,
    form_groups,
    private_only_structure,
    super_common_structure,
)
from scenario import (
    CachePlacement,
    Scenario,
    ScenarioConfig,
    build_scenario,
    place_cache,
    seed_streams,
)
from wmmse_core import (
    Beamformers,
    ConstraintReport,
    Limits,
    RateAllocation,
    constraint_report,
    stream_bounds,
    update_aux,
)

EPS_RATE = 1e-9


class SubproblemFailure(RuntimeError):
    """The conic subproblem did not return an optimal point; carries the last good result."""

    def __init__(self, message: str, last_result: Optional["SolveResult"] = None):
        super().__init__(message)
        self.last_result = last_result


# ---------- Instance ----------

@dataclass(frozen=True)
class Instance:
    """One random network drop: everything a scheme needs except its own structure."""

    config: ScenarioConfig
    seed: int
    scenario: Scenario
    stats: ChannelStatistics
    demands: DemandProfile
    groups: Tuple[MulticastGroup, ...]
    placement: CachePlacement
    samples: SampleSet
    streams: Dict[str, np.random.Generator] = field(repr=False, compare=False, default_factory=dict)


def build_instance(config: ScenarioConfig, seed: Optional[int] = None, run_id: Optional[str] = None) -> Instance:
    """Draw geometry, demands, cache, shadowing and SAA samples from independent seeded streams."""
    seed = config.rng_seed if seed is None else seed
    streams = seed_streams(seed)
    scenario = build_scenario(config, streams["geometry"])
    demands = draw_requests(config, streams["demands"])
    groups = tuple(form_groups(demands.requests, config.group_mode))
    placement = place_cache(demands.popularity, config.cache_policy, config, streams["cache"])
    stats = build_statistics(scenario, config.shadow_sigma_db, config.antenna_gain_db, streams["shadowing"])
    samples = draw_samples(stats, config.m_samples, config.csit_mode, streams["samples"])

    log_event("scenario_built", {
        "seed": seed,
        "n_bs": config.n_bs,
        "n_users": config.n_users,
        "n_groups": len(groups),
        "group_mode": config.group_mode,
        "csit_mode": config.csit_mode,
        "m_samples": samples.m,
        "requests": demands.requests,
    }, run_id=run_id)

    return Instance(
        config=config,
        seed=seed,
        scenario=scenario,
        stats=stats,
        demands=demands,
        groups=groups,
        placement=placement,
        samples=samples,
        streams=streams,
    )


def evaluation_samples(instance: Instance, m_samples: Optional[int] = None) -> SampleSet:
    """Fresh samples from the evaluation stream; full CSIT reuses the true channel."""
    if instance.config.csit_mode == "full":
        return instance.samples
    m = m_samples or instance.config.m_eval_samples
    return draw_samples(instance.stats, m, "statistical", instance.streams["evaluation"])


# ---------- Results ----------

@dataclass(frozen=True)
class TraceRow:
    iteration: int
    r_bar_bps: float
    group_rates_bps: Tuple[float, ...]
    max_violation: float
    wall_ms: float
    solver: str = ""


@dataclass
class SolveResult:
    scheme: str
    w: Beamformers
    rates: RateAllocation
    trace: List[TraceRow]
    iterations: int
    converged: bool
    status: str
    report: Optional[ConstraintReport]
    dropped_streams: Tuple[Tuple[str, int], ...]
    receiver: ReceiverStructure
    clusters: ClusterAssignment
    wall_ms: float = 0.0
    ascent_dips: int = 0
    size: Dict[str, int] = field(default_factory=dict)

    @property
    def mmf_rate_bps(self) -> float:
        return float(self.rates.r_bar)

    def objective_trace(self) -> List[float]:
        return [row.r_bar_bps for row in self.trace]


@dataclass(frozen=True)
class Evaluation:
    mmf_rate_bps: float
    group_rates_bps: np.ndarray
    gap_rel: float          # (optimized − evaluated) / optimized


# ---------- Structure per scheme ----------

def prepare_structure(
    instance: Instance,
    scheme: str,
    fixed_private: Optional[ClusterAssignment] = None,
    run_id: Optional[str] = None,
) -> Tuple[ReceiverStructure, ClusterAssignment]:
    """Receiver structure and serving clusters of one scheme on one instance."""
    config, stats, groups = instance.config, instance.stats, instance.groups

    if scheme == "tin":
        receiver = private_only_structure(groups, stats.n_users)
        clusters = run_clustering(receiver, stats, config, include_commons=False)
    elif scheme == "scm_rsma":
        receiver = super_common_structure(groups, stats.n_users)
        clusters = run_clustering(receiver, stats, config, include_commons=False).with_global_common(0)
    else:
        hint = private_candidate_clusters(groups, stats, config.mu_db)
        receiver = build_receiver_structure(groups, stats, hint, config.d_max_common)
        clusters = run_clustering(receiver, stats, config, fixed_private=fixed_private)
        if clusters.dropped_commons():
            receiver = receiver.without_commons(clusters.dropped_commons())

    log_event("receiver_structure", {"scheme": scheme, "decode_order": receiver.decode_lists()}, run_id=run_id)
    log_event("cluster_assignment", {"scheme": scheme, "lines": clusters.dump_lines()}, run_id=run_id)
    if clusters.dropped_streams:
        log_event("streams_dropped", {
            "scheme": scheme,
            "streams": [f"{o}{i}" for o, i in clusters.dropped_streams],
        }, run_id=run_id)
    return receiver, clusters


# ---------- Initialization ----------

def initialize(
    config: ScenarioConfig,
    clusters: ClusterAssignment,
    receiver: ReceiverStructure,
    scheme: str = "rs_cmd",
    limits: Optional[Limits] = None,
) -> Beamformers:
    """Feasible start using exactly 90% of every serving BS budget.

    A common stream owned by several groups (the SCM super common) takes 20% of the
    budget off the top when the BS also serves groups. The rest is split equally
    over those groups; inside a group's share the private stream gets 80% and its own
    common stream 20% (a lone stream takes the whole share).

    With Q = D²·I the member-averaged correlation inside one BS block is a multiple
    of I, so any unit vector is a dominant direction and D-weights cannot change a
    block's norm once the per-BS split is fixed. Every block points along ones/√L.
    """
    limits = limits or Limits.from_config(config)
    L = config.n_antennas
    w = Beamformers.zeros(clusters, L)
    w_p, w_c = w.w_p.copy(), w.w_c.copy()
    direction = np.ones(L) / math.sqrt(L)

    owners: Dict[int, List[int]] = {}
    for g, c in enumerate(receiver.common_owner):
        if c >= 0:
            owners.setdefault(c, []).append(g)
    exclusive = {c for c, gs in owners.items() if len(gs) == 1}

    for n in range(clusters.n_bs):
        budget = 0.9 * float(limits.p_max_w[n])
        commons_here = set(clusters.g_n_c[n]) if scheme != "tin" else set()
        shared = commons_here - exclusive
        units = set(clusters.g_n_p[n])
        units |= {owners[c][0] for c in commons_here if c in exclusive}
        if not units and not shared:
            continue
        shared_budget = (0.2 * budget if units else budget) if shared else 0.0
        share = (budget - shared_budget) / max(len(units), 1)
        block = slice(n * L, (n + 1) * L)

        for g in units:
            own_c = receiver.common_owner[g]
            has_p = g in clusters.g_n_p[n]
            has_c = own_c in exclusive and own_c in commons_here
            if has_p:
                p_power = 0.8 * share if has_c else share
                w_p[g, block] = math.sqrt(p_power) * direction
            if has_c:
                c_power = 0.2 * share if has_p else share
                w_c[own_c, block] = math.sqrt(c_power) * direction

        for c in shared:
            w_c[c, block] = math.sqrt(shared_budget / len(shared)) * direction

    return w.with_vectors(w_p, w_c).apply_masks()


def embed_private_start(
    source: SolveResult,
    clusters: ClusterAssignment,
    n_antennas: int,
) -> Beamformers:
    """Carry private precoders over to a structure with common streams (commons start at 0)."""
    w = Beamformers.zeros(clusters, n_antennas)
    return w.with_vectors(source.w.w_p.copy(), w.w_c).apply_masks()


# ---------- Outer loop ----------

def _dropped_private_result(
    scheme: str,
    receiver: ReceiverStructure,
    clusters: ClusterAssignment,
    config: ScenarioConfig,
) -> SolveResult:
    w = Beamformers.zeros(clusters, config.n_antennas)
    return SolveResult(
        scheme=scheme,
        w=w,
        rates=RateAllocation.zeros(receiver.n_groups, receiver.n_common),
        trace=[],
        iterations=0,
        converged=True,
        status="dropped_private",
        report=None,
        dropped_streams=clusters.dropped_streams,
        receiver=receiver,
        clusters=clusters,
    )


def run_wmmse(
    instance: Instance,
    receiver: ReceiverStructure,
    clusters: ClusterAssignment,
    scheme: str = "rs_cmd",
    w0: Optional[Beamformers] = None,
    limits: Optional[Limits] = None,
    samples: Optional[SampleSet] = None,
    run_id: Optional[str] = None,
    verbose: bool = False,
) -> SolveResult:
    """Block coordinate ascent: closed-form receivers/weights, then the convex
    subproblem in (w, R), until |ΔR̄|/max(R̄, ε) < rel_tol holds `patience` times
    in a row or max_outer_iters is reached.
    """
    config = instance.config
    limits = limits or Limits.from_config(config)
    samples = samples or instance.samples
    h = samples.samples
    noise = instance.scenario.noise_power_w
    bw = config.bandwidth_hz

    if clusters.dropped_privates():
        return _dropped_private_result(scheme, receiver, clusters, config)

    w = (w0 if w0 is not None else initialize(config, clusters, receiver, scheme, limits)).apply_masks()
    rates = RateAllocation.zeros(receiver.n_groups, receiver.n_common)
    best_w, best_rates = w, rates
    trace: List[TraceRow] = []
    model: Optional[SubproblemModel] = None
    prev = 0.0
    hits = 0
    dips = 0
    converged = False
    size: Dict[str, int] = {}
    started = time.perf_counter()

    def _result(status: str, iterations: int) -> SolveResult:
        report = constraint_report(best_w, best_rates, clusters, instance.placement, receiver, limits)
        return SolveResult(
            scheme=scheme,
            w=best_w,
            rates=best_rates,
            trace=list(trace),
            iterations=iterations,
            converged=converged,
            status=status,
            report=report,
            dropped_streams=clusters.dropped_streams,
            receiver=receiver,
            clusters=clusters,
            wall_ms=1000.0 * (time.perf_counter() - started),
            ascent_dips=dips,
            size=size,
        )

    iteration = 0
    for iteration in range(1, config.max_outer_iters + 1):
        _, aux = update_aux(w, h, receiver, noise)
        problem = build_subproblem(aux, clusters, instance.placement, receiver, limits, config.n_antennas, bw)
        if not size:
            size = problem.size_report()
            log_event("subproblem_size", {"scheme": scheme, **size}, run_id=run_id)

        solution, model = solve(problem, w, tol=config.conic_tol, max_iters=config.conic_max_iters, model=model)
        if solution.status != "optimal":
            last = _result("subproblem_" + solution.status, iteration - 1)
            raise SubproblemFailure(
                f"subproblem at iteration {iteration} returned {solution.status} "
                f"({solution.solver}: {solution.message})",
                last_result=last,
            )

        w, rates = solution.w, solution.rates
        objective = rates.r_bar / bw
        if objective < prev - config.ascent_tol:
            dips += 1
            log_event("ascent_dip", {
                "scheme": scheme,
                "iteration": iteration,
                "previous_se": prev,
                "objective_se": objective,
                "solver": solution.solver,
            }, run_id=run_id)
        if objective >= best_rates.r_bar / bw:
            best_w, best_rates = w, rates

        report = constraint_report(w, rates, clusters, instance.placement, receiver, limits)
        elapsed = 1000.0 * (time.perf_counter() - started)
        trace.append(TraceRow(
            iteration=iteration,
            r_bar_bps=rates.r_bar,
            group_rates_bps=tuple(float(r) for r in rates.group_rates(receiver)),
            max_violation=report.max_violation,
            wall_ms=elapsed,
            solver=solution.solver,
        ))
        log_event("outer_iteration", {
            "scheme": scheme,
            "iteration": iteration,
            "r_bar_bps": rates.r_bar,
            "max_violation": report.max_violation,
            "kkt_gap": solution.kkt_residuals.gap,
        }, run_id=run_id)
        if verbose:
            print(f"  [cyan]{scheme}[/cyan] it={iteration:3d}  R̄={rates.r_bar / 1e6:9.4f} Mbps  viol={report.max_violation:.1e}")

        change = abs(objective - prev) / max(objective, EPS_RATE)
        hits = hits + 1 if change < config.rel_tol else 0
        prev = objective
        if hits >= config.patience:
            converged = True
            break

    result = _result("converged" if converged else "max_iters", iteration)
    log_event("solve_finished", {
        "scheme": scheme,
        "seed": instance.seed,
        "status": result.status,
        "iterations": result.iterations,
        "mmf_rate_bps": result.mmf_rate_bps,
        "ascent_dips": dips,
        "wall_ms": result.wall_ms,
    }, run_id=run_id)
    if verbose:
        print(Panel.fit(
            f"scheme={scheme}  status={result.status}  iterations={result.iterations}\n"
            f"MMF rate = {result.mmf_rate_bps / 1e6:.4f} Mbps",
            title="solve finished",
        ))
    return result


def run_scheme(
    scheme: str,
    instance: Instance,
    limits: Optional[Limits] = None,
    run_id: Optional[str] = None,
    verbose: bool = False,
    warm_start_from_tin: Optional[bool] = None,
) -> SolveResult:
    """Run one scheme end to end on an instance.

    rs_cmd with warm start first solves TIN, keeps its private clusters, and starts
    from its converged private precoders with all common streams silent.
    """
    run_id = run_id or uuid.uuid4().hex[:12]
    warm = instance.config.warm_start_from_tin if warm_start_from_tin is None else warm_start_from_tin

    if scheme == "rs_cmd" and warm:
        tin = run_scheme("tin", instance, limits=limits, run_id=run_id, verbose=verbose, warm_start_from_tin=False)
        receiver, clusters = prepare_structure(instance, "rs_cmd", fixed_private=tin.clusters, run_id=run_id)
        if tin.status == "dropped_private":
            return _dropped_private_result(scheme, receiver, clusters, instance.config)
        w0 = embed_private_start(tin, clusters, instance.config.n_antennas)
        return run_wmmse(instance, receiver, clusters, scheme, w0=w0, limits=limits, run_id=run_id, verbose=verbose)

    receiver, clusters = prepare_structure(instance, scheme, run_id=run_id)
    return run_wmmse(instance, receiver, clusters, scheme, limits=limits, run_id=run_id, verbose=verbose)


def evaluate(result: SolveResult, samples: SampleSet, noise_power: float, bandwidth_hz: float) -> Evaluation:
    """Out-of-sample MMF rate of the final beamformers.

    A group gets min(allocated, achievable) on its private stream plus the same on
    its counted common stream, so evaluating on the optimization samples gives the
    optimized rate back.
    """
    bound_p, bound_c = stream_bounds(result.w, samples.samples, result.receiver, noise_power, bandwidth_hz)
    receiver, rates = result.receiver, result.rates
    group = np.minimum(rates.r_p, bound_p)
    for g, c in enumerate(receiver.common_owner):
        if 0 <= c < len(rates.r_c):
            group[g] += min(rates.r_c[c], bound_c[c])
    mmf = float(group.min()) if group.size else 0.0
    optimized = result.mmf_rate_bps
    gap = (optimized - mmf) / optimized if optimized > 0 else 0.0
    return Evaluation(mmf_rate_bps=mmf, group_rates_bps=group, gap_rel=float(gap))


def trace_rows(result: SolveResult) -> List[Dict[str, object]]:
    """Convergence trace as flat CSV rows."""
    rows: List[Dict[str, object]] = []
    for row in result.trace:
        record: Dict[str, object] = {
            "scheme": result.scheme,
            "iteration": row.iteration,
            "mmf_rate_bps": row.r_bar_bps,
            "max_violation": row.max_violation,
            "wall_ms": round(row.wall_ms, 3),
        }
        for g, rate in enumerate(row.group_rates_bps):
            record[f"group_{g}_bps"] = rate
        rows.append(record)
    return rows
