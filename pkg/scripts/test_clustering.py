"""
Channel qualities, candidate clusters and the greedy capped clustering.
"""

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

from channel import ChannelStatistics  # noqa: E402
from clustering import (  # noqa: E402
    ClusteringError,
    candidate_clusters,
    channel_quality,
    collective_quality,
    private_candidate_clusters,
    run_clustering,
)
from grouping import build_receiver_structure, form_groups, private_only_structure  # noqa: E402
from scenario import ScenarioConfig  # noqa: E402
from solver import build_instance, prepare_structure  # noqa: E402

slow = pytest.mark.skipif(os.environ.get("RSCMD_SLOW") != "1", reason="set RSCMD_SLOW=1")


def _db_gains(gains_db, n_antennas=2):
    return ChannelStatistics(large_scale_gain=10 ** (np.asarray(gains_db, dtype=float) / 20.0), n_antennas=n_antennas)


def _config(**kw):
    return ScenarioConfig(**kw)


# ---------- qualities ----------

def test_quality_unit_gain_is_zero_db():
    assert math.isclose(channel_quality(0, 0, _db_gains([[0.0]])), 0.0, abs_tol=1e-12)


def test_quality_independent_of_antenna_count():
    gains = [[-37.0]]
    assert math.isclose(channel_quality(0, 0, _db_gains(gains, 1)), channel_quality(0, 0, _db_gains(gains, 4)))


def test_quality_tenfold_power_drop_is_ten_db():
    stats = ChannelStatistics(large_scale_gain=np.array([[0.2]]), n_antennas=2)
    weaker = ChannelStatistics(large_scale_gain=np.array([[0.2 / math.sqrt(10.0)]]), n_antennas=2)
    assert math.isclose(channel_quality(0, 0, stats) - channel_quality(0, 0, weaker), 10.0)


def test_collective_quality():
    stats = _db_gains([[0.0, -10.0, -40.0]])
    groups = form_groups([5, 5, 6], "g_le_k")
    receiver = build_receiver_structure(groups, stats, {0: [0], 1: [0]}, d_max_common=0)
    q_p, q_c = collective_quality(0, 0, receiver, stats)
    assert math.isclose(q_p, -5.0)
    # M_0 = G_0 when nobody else decodes it
    assert math.isclose(q_c, q_p)
    single_p, _ = collective_quality(0, 1, receiver, stats)
    assert math.isclose(single_p, -40.0)


def test_collective_quality_without_common_rejected():
    stats = _db_gains([[0.0]])
    receiver = private_only_structure(form_groups([0], "g_le_k"), 1)
    with pytest.raises(ClusteringError):
        collective_quality(0, 0, receiver, stats)


# ---------- candidate clusters ----------

def test_candidates_wide_threshold():
    stats = _db_gains([[-100.0], [-105.0]])
    groups = form_groups([0], "g_le_k")
    assert private_candidate_clusters(groups, stats, 10.0) == {0: (0, 1)}


def test_candidates_narrow_threshold():
    stats = _db_gains([[-100.0], [-105.0]])
    groups = form_groups([0], "g_le_k")
    assert private_candidate_clusters(groups, stats, 3.0) == {0: (0,)}


def test_common_candidates_average_over_decoders():
    stats = _db_gains([[-90.0, -100.0], [-99.0, -91.0]])
    groups = form_groups([0, 1], "g_le_k")
    hint = private_candidate_clusters(groups, stats, 3.0)
    receiver = build_receiver_structure(groups, stats, hint, d_max_common=1)
    cands = candidate_clusters(receiver, stats, 3.0)
    assert cands.p == {0: (0,), 1: (1,)}
    # both users decode both commons: -94.5 dB vs -95.5 dB
    assert cands.c == {0: (0, 1), 1: (0, 1)}


def test_candidates_zero_threshold_keeps_ties():
    stats = _db_gains([[-100.0], [-100.0], [-120.0]])
    groups = form_groups([0], "g_le_k")
    assert private_candidate_clusters(groups, stats, 0.0) == {0: (0, 1)}


# ---------- clustering ----------

def test_one_group_two_bs_serves_everything():
    stats = _db_gains([[-90.0, -95.0], [-93.0, -92.0]])
    groups = form_groups([3, 3], "g_le_k")
    receiver = build_receiver_structure(groups, stats, {0: [0, 1]}, d_max_common=2)
    clusters = run_clustering(receiver, stats, _config(a_max_streams=8, mu_db=100.0))
    assert clusters.g_n_p == (frozenset({0}), frozenset({0}))
    assert clusters.g_n_c == (frozenset({0}), frozenset({0}))
    assert clusters.dropped_streams == ()
    assert clusters.check(8) == []


def test_overload_drops_weaker_stream():
    stats = _db_gains([[0.0, -10.0]])
    receiver = private_only_structure(form_groups([0, 1], "g_le_k"), 2)
    clusters = run_clustering(receiver, stats, _config(a_max_streams=1, mu_db=10.0))
    assert clusters.g_n_p == (frozenset({0}),)
    assert clusters.dropped_streams == (("p", 1),)
    assert clusters.dropped_privates() == [1]
    assert clusters.load(0) == 1
    assert clusters.check(1) == []


def test_caps_never_bind_with_global_candidates():
    stats = _db_gains([
        [-90.0, -100.0, -95.0],
        [-94.0, -91.0, -99.0],
        [-97.0, -96.0, -92.0],
    ])
    groups = form_groups([0, 1, 2], "g_le_k")
    hint = private_candidate_clusters(groups, stats, 100.0)
    receiver = build_receiver_structure(groups, stats, hint, d_max_common=2)
    clusters = run_clustering(receiver, stats, _config(a_max_streams=6, mu_db=100.0))
    for n in range(3):
        assert clusters.g_n_p[n] == frozenset({0, 1, 2})
        assert clusters.g_n_c[n] == frozenset({0, 1, 2})
    assert clusters.private_mask().all()
    assert clusters.common_mask().all()


def test_clustering_is_deterministic():
    rng = np.random.default_rng(4)
    stats = _db_gains(rng.uniform(-120, -80, size=(4, 6)))
    groups = form_groups([0, 0, 1, 2, 2, 3], "g_le_k")
    hint = private_candidate_clusters(groups, stats, 10.0)
    receiver = build_receiver_structure(groups, stats, hint, d_max_common=1)
    config = _config(a_max_streams=3, mu_db=10.0)
    a = run_clustering(receiver, stats, config)
    b = run_clustering(receiver, stats, config)
    assert a == b
    assert a.check(3) == []
    assert len(a.dump_lines()) == 4


def test_fixed_private_keeps_private_supports():
    stats = _db_gains([[-90.0, -100.0], [-99.0, -91.0]])
    groups = form_groups([0, 1], "g_le_k")
    tin = run_clustering(private_only_structure(groups, 2), stats, _config(a_max_streams=2, mu_db=3.0))
    hint = private_candidate_clusters(groups, stats, 3.0)
    receiver = build_receiver_structure(groups, stats, hint, d_max_common=1)
    clusters = run_clustering(receiver, stats, _config(a_max_streams=2, mu_db=100.0), fixed_private=tin)
    assert clusters.g_n_p == tin.g_n_p
    assert all(clusters.load(n) <= 2 for n in range(2))


def test_without_commons_only_privates():
    stats = _db_gains([[-90.0, -100.0], [-99.0, -91.0]])
    groups = form_groups([0, 1], "g_le_k")
    hint = private_candidate_clusters(groups, stats, 3.0)
    receiver = build_receiver_structure(groups, stats, hint, d_max_common=1)
    clusters = run_clustering(receiver, stats, _config(mu_db=3.0), include_commons=False)
    assert all(not s for s in clusters.g_n_c)
    assert clusters.g_n_p == (frozenset({0}), frozenset({1}))


def test_with_global_common():
    stats = _db_gains([[-90.0, -100.0], [-99.0, -91.0]])
    groups = form_groups([0, 1], "g_le_k")
    receiver = private_only_structure(groups, 2)
    clusters = run_clustering(receiver, stats, _config(mu_db=3.0), include_commons=False)
    wide = clusters.with_global_common(0)
    assert wide.n_common == 1
    assert wide.n_g_c == (frozenset({0, 1}),)


def test_invariants_hold_over_many_drops():
    config = _config(n_bs=3, n_users=8, n_files=4, cache_size_files=1, a_max_streams=3, m_samples=1,
                     area_half_width_m=300.0)
    for seed in range(100):
        instance = build_instance(config, seed)
        _, clusters = prepare_structure(instance, "rs_cmd")
        assert clusters.check(config.a_max_streams) == []
        hint = private_candidate_clusters(instance.groups, instance.stats, config.mu_db)
        again = run_clustering(
            build_receiver_structure(instance.groups, instance.stats, hint, config.d_max_common),
            instance.stats,
            config,
        )
        assert again == clusters


@slow
def test_default_network_rarely_drops_streams():
    config = _config(m_samples=1)
    clean = 0
    for seed in range(100):
        _, clusters = prepare_structure(build_instance(config, seed), "rs_cmd")
        clean += not clusters.dropped_streams
    assert clean >= 95


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
