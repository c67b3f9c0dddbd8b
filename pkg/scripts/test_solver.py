"""
Outer loop, initialization and the three schemes on small instances.

Set RSCMD_SLOW=1 to also run the multi-seed ascent, dominance, sample-average
consistency and scheme-ordering runs.
"""

import dataclasses
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))
os.environ.setdefault("RSCMD_RUN_LOG", str(Path(tempfile.gettempdir()) / "rscmd_test_log.jsonl"))

from audit_logger import read_events  # noqa: E402
from channel import SampleSet  # noqa: E402
from conic import available_solvers  # noqa: E402
from scenario import ScenarioConfig  # noqa: E402
from solver import (  # noqa: E402
    _dropped_private_result,
    build_instance,
    evaluate,
    evaluation_samples,
    initialize,
    prepare_structure,
    run_scheme,
    run_wmmse,
    trace_rows,
)
from wmmse_core import Limits  # noqa: E402

needs_solver = pytest.mark.skipif(not available_solvers(), reason="no conic solver installed")
slow = pytest.mark.skipif(os.environ.get("RSCMD_SLOW") != "1", reason="set RSCMD_SLOW=1")

SMALL = dict(
    n_bs=3, n_users=6, n_files=3, n_antennas=2, m_samples=30, m_eval_samples=30,
    cache_size_files=1, max_outer_iters=20, area_half_width_m=300.0,
)


def _unit_link_instance(**overrides):
    """One BS, one antenna, one user, h = 1 and σ² = 1 so the optimum is log2(1 + P)."""
    config = ScenarioConfig(
        n_bs=1, n_users=1, n_files=1, n_antennas=1, cache_size_files=0,
        csit_mode="full", max_outer_iters=100, **overrides,
    )
    instance = build_instance(config, 0)
    return dataclasses.replace(
        instance,
        scenario=dataclasses.replace(instance.scenario, noise_power_w=1.0),
        samples=SampleSet(samples=np.ones((1, 1, 1), dtype=complex), csit_mode="full"),
    )


def _unit_limits(p_max=1.0):
    return Limits(p_max_w=np.array([p_max]), c_max_bps=np.array([1e15]))


# ---------- instance ----------

def test_instance_is_deterministic():
    config = ScenarioConfig(**SMALL)
    a, b = build_instance(config, 4), build_instance(config, 4)
    assert np.array_equal(a.samples.samples, b.samples.samples)
    assert np.array_equal(a.demands.requests, b.demands.requests)
    assert np.array_equal(a.placement.matrix, b.placement.matrix)
    assert a.samples.samples.shape == (30, 6, 6)


def test_full_csit_evaluates_on_true_channel():
    instance = build_instance(ScenarioConfig(**{**SMALL, "csit_mode": "full"}), 1)
    assert instance.samples.m == 1
    assert evaluation_samples(instance) is instance.samples
    fresh = evaluation_samples(build_instance(ScenarioConfig(**SMALL), 1), 12)
    assert fresh.m == 12


# ---------- structure and initialization ----------

def test_structures_are_consistent():
    config = ScenarioConfig(**SMALL)
    instance = build_instance(config, 2)
    for scheme in ("rs_cmd", "tin", "scm_rsma"):
        receiver, clusters = prepare_structure(instance, scheme)
        assert receiver.check() == []
        issues = clusters.check(config.a_max_streams + (1 if scheme == "scm_rsma" else 0))
        assert issues == []
    tin_receiver, _ = prepare_structure(instance, "tin")
    assert tin_receiver.n_common == 0
    scm_receiver, scm_clusters = prepare_structure(instance, "scm_rsma")
    assert scm_receiver.n_common == 1
    assert scm_clusters.n_g_c[0] == frozenset(range(config.n_bs))


@pytest.mark.parametrize("scheme", ["rs_cmd", "scm_rsma"])
def test_initialization_uses_ninety_percent(scheme):
    config = ScenarioConfig(**SMALL)
    for seed in range(10):
        instance = build_instance(config, seed)
        receiver, clusters = prepare_structure(instance, scheme)
        w = initialize(config, clusters, receiver, scheme)
        power = w.bs_power()
        assert np.all(power <= 0.9 * config.p_max_w * (1 + 1e-12))
        for n in range(config.n_bs):
            if clusters.load(n):
                assert math.isclose(power[n], 0.9 * config.p_max_w, rel_tol=1e-12)
        assert w.mask_violation() == 0.0


def test_tin_initialization_silences_commons():
    config = ScenarioConfig(**SMALL)
    instance = build_instance(config, 0)
    receiver, clusters = prepare_structure(instance, "rs_cmd")
    w = initialize(config, clusters, receiver, "tin")
    assert not np.any(w.w_c)
    assert np.all(w.bs_power() <= 0.9 * config.p_max_w * (1 + 1e-12))


# ---------- closed-form runs ----------

@needs_solver
def test_tin_matches_matched_filter():
    instance = _unit_link_instance()
    receiver, clusters = prepare_structure(instance, "tin")
    result = run_wmmse(instance, receiver, clusters, "tin", limits=_unit_limits())
    bw = instance.config.bandwidth_hz
    assert result.status == "converged"
    assert math.isclose(result.mmf_rate_bps, bw, rel_tol=1e-4)
    assert result.report.ok(1e-6)


@needs_solver
def test_rate_splitting_matches_matched_filter():
    instance = _unit_link_instance()
    receiver, clusters = prepare_structure(instance, "rs_cmd")
    assert receiver.n_common == 1
    result = run_wmmse(instance, receiver, clusters, "rs_cmd", limits=_unit_limits())
    assert math.isclose(result.mmf_rate_bps, instance.config.bandwidth_hz, rel_tol=1e-3)


@needs_solver
def test_zero_power_gives_zero_rate():
    instance = _unit_link_instance()
    receiver, clusters = prepare_structure(instance, "rs_cmd")
    result = run_wmmse(instance, receiver, clusters, "rs_cmd", limits=_unit_limits(0.0))
    assert result.trace[0].r_bar_bps < 1e-6 * instance.config.bandwidth_hz
    assert result.mmf_rate_bps < 1e-6 * instance.config.bandwidth_hz
    assert np.max(np.abs(result.w.w_p)) < 1e-6


@needs_solver
def test_objective_never_decreases():
    config = ScenarioConfig(**SMALL)
    instance = build_instance(config, 3)
    for scheme in ("tin", "rs_cmd", "scm_rsma"):
        result = run_scheme(scheme, instance)
        trace = [r / config.bandwidth_hz for r in result.objective_trace()]
        assert all(b >= a - config.ascent_tol for a, b in zip(trace, trace[1:]))
        assert result.report.ok(1e-6)
        assert result.report.rate_violation <= 1e-6 * config.bandwidth_hz


@needs_solver
def test_warm_start_from_tin_never_loses():
    config = ScenarioConfig(**SMALL)
    instance = build_instance(config, 5)
    tin = run_scheme("tin", instance)
    rs = run_scheme("rs_cmd", instance, warm_start_from_tin=True)
    bw = config.bandwidth_hz
    assert rs.mmf_rate_bps >= tin.mmf_rate_bps * (1 - 1e-5) - 1e-6 * bw
    assert rs.clusters.g_n_p == tin.clusters.g_n_p


@needs_solver
def test_single_group_super_common_equals_rate_splitting():
    config = ScenarioConfig(**{**SMALL, "n_files": 1, "cache_size_files": 0, "mu_db": 200.0})
    instance = build_instance(config, 0)
    assert len(instance.groups) == 1
    rs = run_scheme("rs_cmd", instance)
    scm = run_scheme("scm_rsma", instance)
    assert math.isclose(rs.mmf_rate_bps, scm.mmf_rate_bps, rel_tol=1e-4)


def test_dropped_private_stream_gives_zero():
    config = ScenarioConfig(n_bs=1, n_users=4, n_files=4, n_antennas=1, cache_size_files=0,
                            a_max_streams=1, m_samples=5, zipf_exponent=0.0)
    for seed in range(20):
        instance = build_instance(config, seed)
        if len(instance.groups) > 1:
            break
    result = run_scheme("tin", instance)
    assert result.status == "dropped_private"
    assert result.mmf_rate_bps == 0.0
    assert result.dropped_streams


# ---------- evaluation and trace ----------

@needs_solver
def test_evaluation_on_own_channel_has_no_gap():
    config = ScenarioConfig(**{**SMALL, "csit_mode": "full"})
    instance = build_instance(config, 6)
    result = run_scheme("rs_cmd", instance)
    report = evaluate(result, evaluation_samples(instance), instance.scenario.noise_power_w, config.bandwidth_hz)
    assert abs(report.gap_rel) < 1e-4


def test_evaluation_of_zero_beamformers():
    instance = _unit_link_instance()
    receiver, clusters = prepare_structure(instance, "tin")
    result = _dropped_private_result("tin", receiver, clusters, instance.config)
    report = evaluate(result, instance.samples, 1.0, instance.config.bandwidth_hz)
    assert report.mmf_rate_bps == 0.0
    assert report.gap_rel == 0.0


@needs_solver
def test_trace_rows_and_events():
    instance = _unit_link_instance()
    result = run_scheme("tin", instance, limits=_unit_limits(), run_id="trace-test")
    rows = trace_rows(result)
    assert len(rows) == result.iterations
    assert set(rows[0]) == {"scheme", "iteration", "mmf_rate_bps", "max_violation", "wall_ms", "group_0_bps"}
    events = read_events(run_id="trace-test")
    kinds = {e["event_type"] for e in events}
    assert {"receiver_structure", "cluster_assignment", "outer_iteration", "solve_finished"} <= kinds


# ---------- slow ----------

@slow
@needs_solver
def test_sample_average_consistency():
    config = ScenarioConfig(n_bs=2, n_users=2, n_files=2, n_antennas=1, cache_size_files=0,
                            m_samples=20_000, m_eval_samples=20_000, max_outer_iters=30)
    instance = build_instance(config, 0)
    result = run_scheme("rs_cmd", instance)
    report = evaluate(result, evaluation_samples(instance), instance.scenario.noise_power_w, config.bandwidth_hz)
    assert report.gap_rel < 0.02


@slow
@needs_solver
def test_scheme_ordering_and_fronthaul_monotone():
    base = dict(n_bs=4, n_users=8, m_samples=200, max_outer_iters=40)
    means = {}
    for c_max in (20e6, 40e6, 60e6):
        config = ScenarioConfig(**base, c_max_bps=c_max)
        for scheme in ("rs_cmd", "scm_rsma", "tin"):
            rates = [run_scheme(scheme, build_instance(config, seed)).mmf_rate_bps for seed in range(10)]
            means[(c_max, scheme)] = float(np.mean(rates))
    for c_max in (20e6, 40e6, 60e6):
        assert means[(c_max, "rs_cmd")] >= means[(c_max, "scm_rsma")] * (1 - 1e-3)
        assert means[(c_max, "scm_rsma")] >= means[(c_max, "tin")] * (1 - 1e-3)
    for scheme in ("rs_cmd", "scm_rsma", "tin"):
        series = [means[(c, scheme)] for c in (20e6, 40e6, 60e6)]
        assert all(b >= a * (1 - 1e-3) for a, b in zip(series, series[1:]))


@slow
@needs_solver
def test_caching_helps_most_at_low_fronthaul():
    base = dict(n_bs=4, n_users=8, m_samples=200, max_outer_iters=40)

    def mean_rate(c_max, cache):
        config = ScenarioConfig(**base, c_max_bps=c_max, cache_size_files=cache)
        return float(np.mean([run_scheme("rs_cmd", build_instance(config, s)).mmf_rate_bps for s in range(10)]))

    low = [mean_rate(20e6, cache) for cache in (0, 5, 10)]
    assert all(b >= a * (1 - 1e-3) for a, b in zip(low, low[1:]))
    assert low[2] - low[0] > mean_rate(60e6, 10) - mean_rate(60e6, 0)


@slow
@needs_solver
def test_multicast_gain_grows_with_users():
    gains = []
    for n_users in (8, 16):
        means = {}
        for mode in ("g_le_k", "g_eq_k"):
            config = ScenarioConfig(n_bs=4, n_users=n_users, m_samples=200, max_outer_iters=40,
                                    c_max_bps=30e6, cache_size_files=10, group_mode=mode)
            means[mode] = float(np.mean([run_scheme("rs_cmd", build_instance(config, s)).mmf_rate_bps
                                         for s in range(10)]))
        assert means["g_le_k"] >= means["g_eq_k"] * (1 - 1e-3)
        gains.append((means["g_le_k"] - means["g_eq_k"]) / means["g_eq_k"])
    assert gains[1] > gains[0]


@slow
@needs_solver
def test_ascent_over_many_seeds():
    config = ScenarioConfig(n_bs=3, n_users=6, n_files=3, n_antennas=2, cache_size_files=1, group_mode="g_le_k",
                            m_samples=50, m_eval_samples=50, max_outer_iters=100)
    converged = 0
    for seed in range(20):
        result = run_scheme("rs_cmd", build_instance(config, seed))
        trace = [r / config.bandwidth_hz for r in result.objective_trace()]
        assert all(b - a >= -1e-6 for a, b in zip(trace, trace[1:])), seed
        converged += result.converged
    assert converged >= 19


@slow
@needs_solver
def test_rate_splitting_dominates_tin_over_seeds():
    config = ScenarioConfig(**{**SMALL, "m_samples": 50, "max_outer_iters": 100})
    bw = config.bandwidth_hz
    for seed in range(10):
        instance = build_instance(config, seed)
        tin = run_scheme("tin", instance)
        rs = run_scheme("rs_cmd", instance, warm_start_from_tin=True)
        assert rs.mmf_rate_bps >= tin.mmf_rate_bps * (1 - 1e-5) - 1e-6 * bw, seed


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
