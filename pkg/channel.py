"""
Channel model: distance path loss, log-normal shadowing, i.i.d. Rayleigh small-scale
fading, and Monte-Carlo sample generation for SAA.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from scenario import CsitMode, Scenario

ArrayLike = Union[float, np.ndarray]


class ChannelError(ValueError):
    """Bad channel-model input (non-positive distance, empty sample request)."""


@dataclass(frozen=True)
class ChannelStatistics:
    """Long-term statistics known at the CP (statistical CSIT)."""

    large_scale_gain: np.ndarray  # (N, K) amplitude D_{n,k}
    n_antennas: int

    @property
    def n_bs(self) -> int:
        return self.large_scale_gain.shape[0]

    @property
    def n_users(self) -> int:
        return self.large_scale_gain.shape[1]

    def covariance(self, n: int, k: int) -> np.ndarray:
        """Q_{n,k} = D²·I_L."""
        return (self.large_scale_gain[n, k] ** 2) * np.eye(self.n_antennas)

    def per_antenna_gain_db(self) -> np.ndarray:
        """(N, K) matrix of 10·log10(tr(Q_{n,k})/L); -inf for D = 0."""
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.large_scale_gain ** 2)


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray  # (M, K, N·L) complex aggregate channels h_k^m
    csit_mode: CsitMode

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def true_channel(self) -> np.ndarray:
        """The single realization designated as the actual channel (full CSIT)."""
        if self.csit_mode != "full":
            raise ChannelError("only full-CSIT sample sets carry a true channel")
        return self.samples[0]

    def user(self, k: int) -> np.ndarray:
        """(M, N·L) samples of user k."""
        return self.samples[:, k, :]


def path_loss_db(distance_km: ArrayLike) -> ArrayLike:
    """PL = 148.1 + 37.6·log10(d), d in km."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ChannelError(f"path loss needs a positive distance (got {distance_km})")
    pl = 148.1 + 37.6 * np.log10(d)
    return float(pl) if pl.ndim == 0 else pl


def build_statistics(
    scenario: Scenario,
    shadow_sigma_db: float,
    antenna_gain_db: float,
    rng: np.random.Generator,
) -> ChannelStatistics:
    """D_{n,k} = 10^(-PL/20)·sqrt(g·s) with one log-normal shadowing draw per link."""
    dist = scenario.distances_km()
    pl = path_loss_db(dist)
    shadow_db = rng.normal(0.0, shadow_sigma_db, size=dist.shape)
    g = 10.0 ** (shadow_db / 10.0)
    s = 10.0 ** (antenna_gain_db / 10.0)
    gain = 10.0 ** (-pl / 20.0) * np.sqrt(g * s)
    gain.setflags(write=False)
    return ChannelStatistics(large_scale_gain=gain, n_antennas=scenario.config.n_antennas)


def draw_samples(
    stats: ChannelStatistics,
    m_samples: int,
    csit_mode: CsitMode,
    rng: np.random.Generator,
) -> SampleSet:
    """h_{n,k}^m = D_{n,k}·e^m with e^m ~ CN(0, I_L).

    In full-CSIT mode a single realization is drawn and treated as the true channel.
    """
    if m_samples < 1:
        raise ChannelError("m_samples must be >= 1")
    m = 1 if csit_mode == "full" else int(m_samples)
    n_bs, n_users, n_ant = stats.n_bs, stats.n_users, stats.n_antennas

    shape = (m, n_users, n_bs, n_ant)
    e = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    # D is (N, K); broadcast to (1, K, N, 1)
    h = e * stats.large_scale_gain.T[None, :, :, None]
    h = h.reshape(m, n_users, n_bs * n_ant)
    h.setflags(write=False)
    return SampleSet(samples=h, csit_mode=csit_mode)


def dump_channel_csv(stats: ChannelStatistics, samples: SampleSet, directory: Path) -> None:
    """Write D (one row per BS) and the samples (row = link, columns real/imag interleaved)."""
    directory.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        stats.large_scale_gain,
        index=[f"bs{n}" for n in range(stats.n_bs)],
        columns=[f"user{k}" for k in range(stats.n_users)],
    ).to_csv(directory / "large_scale_gain.csv")

    m, n_users, dims = samples.samples.shape
    links = samples.samples.transpose(1, 2, 0).reshape(n_users * dims, m)
    interleaved = np.empty((links.shape[0], 2 * m))
    interleaved[:, 0::2] = links.real
    interleaved[:, 1::2] = links.imag
    columns = [f"m{i}_{part}" for i in range(m) for part in ("re", "im")]
    index = [f"k{k}_d{d}" for k in range(n_users) for d in range(dims)]
    pd.DataFrame(interleaved, index=index, columns=columns).to_csv(directory / "samples.csv")
