"""
Path loss, large-scale statistics and Monte-Carlo channel samples.
"""

import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))
os.environ.setdefault("RSCMD_RUN_LOG", str(Path(tempfile.gettempdir()) / "rscmd_test_log.jsonl"))

from channel import (  # noqa: E402
    ChannelError,
    ChannelStatistics,
    build_statistics,
    draw_samples,
    dump_channel_csv,
    path_loss_db,
)
from scenario import Scenario, ScenarioConfig  # noqa: E402


def _one_link_scenario(distance_m: float, n_antennas: int = 2) -> Scenario:
    config = ScenarioConfig(n_bs=1, n_users=1, n_antennas=n_antennas, area_half_width_m=2000.0)
    return Scenario(
        config=config,
        bs_positions=np.zeros((1, 2)),
        user_positions=np.array([[distance_m, 0.0]]),
        noise_power_w=config.noise_power_w,
    )


def test_path_loss_values():
    assert math.isclose(path_loss_db(1.0), 148.1)
    assert math.isclose(path_loss_db(0.1), 110.5, abs_tol=1e-9)
    assert math.isclose(path_loss_db(0.4), 148.1 + 37.6 * math.log10(0.4))
    assert abs(path_loss_db(0.4) - 133.138) < 1e-3


def test_path_loss_rejects_zero_distance():
    with pytest.raises(ChannelError):
        path_loss_db(0.0)


def test_large_scale_gain_without_shadowing():
    stats = build_statistics(_one_link_scenario(1000.0), 0.0, 0.0, np.random.default_rng(0))
    assert math.isclose(float(stats.large_scale_gain[0, 0]), 10 ** (-148.1 / 20), rel_tol=1e-12)
    cov = stats.covariance(0, 0)
    assert np.allclose(cov, stats.large_scale_gain[0, 0] ** 2 * np.eye(2))


def test_antenna_gain_scales_amplitude_by_sqrt():
    scenario = _one_link_scenario(250.0)
    base = build_statistics(scenario, 0.0, 0.0, np.random.default_rng(0))
    boosted = build_statistics(scenario, 0.0, 10 * math.log10(2.0), np.random.default_rng(0))
    ratio = boosted.large_scale_gain[0, 0] / base.large_scale_gain[0, 0]
    assert math.isclose(float(ratio), math.sqrt(2.0), rel_tol=1e-12)


def test_zero_gain_link_gives_zero_samples():
    stats = ChannelStatistics(large_scale_gain=np.array([[0.0, 1.0]]), n_antennas=2)
    samples = draw_samples(stats, 50, "statistical", np.random.default_rng(1))
    assert samples.samples.shape == (50, 2, 2)
    assert np.all(samples.user(0) == 0)
    assert np.any(samples.user(1) != 0)


def test_unit_link_power_within_three_standard_errors():
    stats = ChannelStatistics(large_scale_gain=np.array([[1.0]]), n_antennas=1)
    samples = draw_samples(stats, 100_000, "statistical", np.random.default_rng(2))
    power = np.abs(samples.samples[:, 0, 0]) ** 2
    se = power.std(ddof=1) / math.sqrt(power.size)
    assert abs(power.mean() - 1.0) < 3 * se


def test_path_loss_strictly_increasing():
    distances = np.linspace(0.01, 3.0, 500)
    assert np.all(np.diff(path_loss_db(distances)) > 0)


def test_empirical_covariance_converges():
    gains = np.array([[0.3, 1.0], [2e-6, 0.05]])
    stats = ChannelStatistics(large_scale_gain=gains, n_antennas=2)
    samples = draw_samples(stats, 100_000, "statistical", np.random.default_rng(21))
    for n in range(2):
        for k in range(2):
            h = samples.user(k)[:, 2 * n:2 * n + 2]
            empirical = h.T @ h.conj() / h.shape[0]
            target = stats.covariance(n, k)
            assert np.linalg.norm(empirical - target) / np.linalg.norm(target) < 0.03


def test_samples_are_circularly_symmetric():
    stats = ChannelStatistics(large_scale_gain=np.array([[0.4]]), n_antennas=3)
    h = draw_samples(stats, 100_000, "statistical", np.random.default_rng(5)).user(0)
    half = 0.4 ** 2 / 2
    assert np.all(np.abs(h.real.var(axis=0) / half - 1.0) < 0.03)
    assert np.all(np.abs(h.imag.var(axis=0) / half - 1.0) < 0.03)
    # pseudo-covariance E{h²} vanishes for a circular variable
    assert np.all(np.abs((h ** 2).mean(axis=0)) < 0.03 * 2 * half)


def test_samples_are_deterministic():
    stats = ChannelStatistics(large_scale_gain=np.array([[1.0, 0.5], [0.2, 0.1]]), n_antennas=2)
    a = draw_samples(stats, 10, "statistical", np.random.default_rng(9))
    b = draw_samples(stats, 10, "statistical", np.random.default_rng(9))
    assert np.array_equal(a.samples, b.samples)


def test_aggregate_vector_block_layout():
    stats = ChannelStatistics(large_scale_gain=np.array([[1.0], [0.0]]), n_antennas=3)
    samples = draw_samples(stats, 4, "statistical", np.random.default_rng(0))
    h = samples.user(0)
    assert h.shape == (4, 6)
    assert np.any(h[:, :3] != 0)
    assert np.all(h[:, 3:] == 0)


def test_full_csit_keeps_one_realization():
    stats = ChannelStatistics(large_scale_gain=np.array([[1.0]]), n_antennas=2)
    samples = draw_samples(stats, 500, "full", np.random.default_rng(0))
    assert samples.m == 1
    assert samples.true_channel.shape == (1, 2)
    statistical = draw_samples(stats, 5, "statistical", np.random.default_rng(0))
    with pytest.raises(ChannelError):
        statistical.true_channel


def test_per_antenna_gain_db():
    stats = ChannelStatistics(large_scale_gain=np.array([[1.0, 0.1]]), n_antennas=4)
    gain = stats.per_antenna_gain_db()
    assert math.isclose(float(gain[0, 0]), 0.0, abs_tol=1e-12)
    assert math.isclose(float(gain[0, 1]), -20.0)


def test_dump_channel_csv(tmp_path):
    stats = ChannelStatistics(large_scale_gain=np.array([[1.0, 0.5]]), n_antennas=2)
    samples = draw_samples(stats, 3, "statistical", np.random.default_rng(0))
    dump_channel_csv(stats, samples, tmp_path)
    gains = pd.read_csv(tmp_path / "large_scale_gain.csv", index_col=0)
    assert gains.shape == (1, 2)
    table = pd.read_csv(tmp_path / "samples.csv", index_col=0)
    assert table.shape == (2 * 2, 2 * 3)
    assert math.isclose(table.loc["k1_d0", "m2_im"], samples.samples[2, 1, 0].imag)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
