"""
Group-based BS clustering: assign a serving cluster to every private and common
stream under per-BS stream caps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np

from channel import ChannelStatistics
from grouping import MulticastGroup, ReceiverStructure
from scenario import ScenarioConfig

# a stream is ("p", group id) or ("c", common id)
Stream = Tuple[str, int]


class ClusteringError(ValueError):
    """Collective quality requested for an empty user set."""


def channel_quality(n: int, k: int, stats: ChannelStatistics) -> float:
    """q_{n,k} = 10·log10(tr(Q_{n,k})/L) in dB."""
    return float(stats.per_antenna_gain_db()[n, k])


def _mean_quality(users: Sequence[int], quality_db: np.ndarray) -> np.ndarray:
    """(N,) arithmetic mean of dB qualities over a user set."""
    users = sorted(users)
    if not users:
        raise ClusteringError("collective quality of an empty user set")
    return quality_db[:, users].mean(axis=1)


def collective_quality(
    n: int,
    g: int,
    receiver: ReceiverStructure,
    stats: ChannelStatistics,
) -> Tuple[float, float]:
    """(q̃^p, q̃^c) of group g at BS n: mean q over G_g and over the decoders of g's common stream."""
    quality_db = stats.per_antenna_gain_db()
    q_p = _mean_quality(receiver.members(g), quality_db)[n]
    c = receiver.common_owner[g]
    if c < 0:
        raise ClusteringError(f"group {g} has no common stream")
    q_c = _mean_quality(receiver.m_g[c], quality_db)[n]
    return float(q_p), float(q_c)


def _within_threshold(quality: np.ndarray, mu_db: float) -> Tuple[int, ...]:
    best = float(np.max(quality))
    return tuple(int(n) for n in np.flatnonzero(best - quality <= mu_db))


@dataclass(frozen=True)
class CandidateClusters:
    p: Dict[int, Tuple[int, ...]]   # N_g^p before load capping
    c: Dict[int, Tuple[int, ...]]   # N_c^c before load capping


def private_candidate_clusters(
    groups: Sequence[MulticastGroup],
    stats: ChannelStatistics,
    mu_db: float,
) -> Dict[int, Tuple[int, ...]]:
    """N_g^p from group members alone; used to rank interferers before Φ_k exists."""
    quality_db = stats.per_antenna_gain_db()
    return {grp.id: _within_threshold(_mean_quality(grp.members, quality_db), mu_db) for grp in groups}


def candidate_clusters(
    receiver: ReceiverStructure,
    stats: ChannelStatistics,
    mu_db: float,
) -> CandidateClusters:
    """N^o = {n : max_m q̃_m − q̃_n ≤ μ}; commons without decoders get no candidates."""
    quality_db = stats.per_antenna_gain_db()
    private = private_candidate_clusters(receiver.groups, stats, mu_db)
    common = {
        c: _within_threshold(_mean_quality(decoders, quality_db), mu_db)
        for c, decoders in enumerate(receiver.m_g)
        if decoders
    }
    return CandidateClusters(p=private, c=common)


@dataclass(frozen=True)
class ClusterAssignment:
    n_bs: int
    g_n_p: Tuple[FrozenSet[int], ...]   # private streams served by each BS
    g_n_c: Tuple[FrozenSet[int], ...]   # common streams served by each BS
    n_groups: int
    n_common: int
    dropped_streams: Tuple[Stream, ...] = field(default=())

    @property
    def n_g_p(self) -> Tuple[FrozenSet[int], ...]:
        return tuple(frozenset(n for n in range(self.n_bs) if g in self.g_n_p[n]) for g in range(self.n_groups))

    @property
    def n_g_c(self) -> Tuple[FrozenSet[int], ...]:
        return tuple(frozenset(n for n in range(self.n_bs) if c in self.g_n_c[n]) for c in range(self.n_common))

    def load(self, n: int) -> int:
        return len(self.g_n_p[n]) + len(self.g_n_c[n])

    def private_mask(self) -> np.ndarray:
        """(G, N) bool support of private streams."""
        mask = np.zeros((self.n_groups, self.n_bs), dtype=bool)
        for n in range(self.n_bs):
            for g in self.g_n_p[n]:
                mask[g, n] = True
        return mask

    def common_mask(self) -> np.ndarray:
        """(C, N) bool support of common streams."""
        mask = np.zeros((self.n_common, self.n_bs), dtype=bool)
        for n in range(self.n_bs):
            for c in self.g_n_c[n]:
                mask[c, n] = True
        return mask

    def dropped_commons(self) -> List[int]:
        return [i for o, i in self.dropped_streams if o == "c"]

    def dropped_privates(self) -> List[int]:
        return [i for o, i in self.dropped_streams if o == "p"]

    def with_global_common(self, c: int) -> "ClusterAssignment":
        """Serve common stream c from every BS (network-wide common stream)."""
        n_common = max(self.n_common, c + 1)
        return ClusterAssignment(
            n_bs=self.n_bs,
            g_n_p=self.g_n_p,
            g_n_c=tuple(s | {c} for s in self.g_n_c),
            n_groups=self.n_groups,
            n_common=n_common,
            dropped_streams=tuple(s for s in self.dropped_streams if s != ("c", c)),
        )

    def dump_lines(self) -> List[str]:
        return [
            f"{n}: p={sorted(self.g_n_p[n])} c={sorted(self.g_n_c[n])}"
            for n in range(self.n_bs)
        ]

    def check(self, a_max: int) -> List[str]:
        issues: List[str] = []
        for n in range(self.n_bs):
            if self.load(n) > a_max:
                issues.append(f"BS {n} serves {self.load(n)} streams > A_max={a_max}")
        n_g_p, n_g_c = self.n_g_p, self.n_g_c
        for n in range(self.n_bs):
            for g in range(self.n_groups):
                if (n in n_g_p[g]) != (g in self.g_n_p[n]):
                    issues.append(f"private inverse map mismatch at BS {n}, group {g}")
            for c in range(self.n_common):
                if (n in n_g_c[c]) != (c in self.g_n_c[n]):
                    issues.append(f"common inverse map mismatch at BS {n}, stream {c}")
        for o, i in self.dropped_streams:
            support = n_g_p[i] if o == "p" else n_g_c[i]
            if support:
                issues.append(f"stream {o}{i} recorded as dropped but served by {sorted(support)}")
        return issues


def run_clustering(
    receiver: ReceiverStructure,
    stats: ChannelStatistics,
    config: ScenarioConfig,
    include_commons: bool = True,
    fixed_private: Optional[ClusterAssignment] = None,
) -> ClusterAssignment:
    """Greedy group-based clustering with per-BS stream caps.

    Each round gives every remaining stream its strongest remaining candidate BS.
    A BS above A_max then sheds its weakest streams and is retired from every
    candidate set. Rounds repeat until no stream or no BS is left.

    With `fixed_private`, private supports are copied from that assignment and only
    common streams compete for the capacity left at each BS.
    """
    n_bs = stats.n_bs
    a_max = config.a_max_streams
    quality_db = stats.per_antenna_gain_db()
    cands = candidate_clusters(receiver, stats, config.mu_db)

    quality: Dict[Stream, np.ndarray] = {}
    remaining: Dict[Stream, Set[int]] = {}
    served: List[Set[Stream]] = [set() for _ in range(n_bs)]
    fixed: Set[Stream] = set()
    if fixed_private is not None:
        for n in range(n_bs):
            served[n].update(("p", g) for g in fixed_private.g_n_p[n])
        fixed = set().union(*served) if served else set()
    else:
        for g, nodes in cands.p.items():
            quality[("p", g)] = _mean_quality(receiver.members(g), quality_db)
            remaining[("p", g)] = set(nodes)
    if include_commons:
        for c, nodes in cands.c.items():
            quality[("c", c)] = _mean_quality(receiver.m_g[c], quality_db)
            remaining[("c", c)] = set(nodes)

    # group-major, private before common
    order = sorted(remaining, key=lambda s: (s[1], 0 if s[0] == "p" else 1))
    active: List[Stream] = list(order)
    live_bs: Set[int] = set(range(n_bs))

    while active and live_bs:
        still_active: List[Stream] = []
        for stream in active:
            pool = remaining[stream] & live_bs
            if not pool:
                continue
            q = quality[stream]
            best = min(pool, key=lambda n: (-q[n], n))
            remaining[stream].discard(best)
            served[best].add(stream)
            if remaining[stream] & live_bs:
                still_active.append(stream)
        active = still_active

        for n in sorted(live_bs):
            excess = len(served[n]) - a_max
            if excess <= 0:
                continue
            # weakest first; ties drop the higher id, then common before private
            weakest = sorted(
                served[n] - fixed,
                key=lambda s: (quality[s][n], -s[1], 0 if s[0] == "c" else 1),
            )[:excess]
            served[n].difference_update(weakest)
            live_bs.discard(n)
        active = [s for s in active if remaining[s] & live_bs]

    g_n_p = tuple(frozenset(i for o, i in served[n] if o == "p") for n in range(n_bs))
    g_n_c = tuple(frozenset(i for o, i in served[n] if o == "c") for n in range(n_bs))
    supported = set().union(*served) if served else set()
    dropped = tuple(s for s in order if s not in supported)
    if fixed_private is not None:
        dropped = tuple(("p", g) for g in fixed_private.dropped_privates()) + dropped

    return ClusterAssignment(
        n_bs=n_bs,
        g_n_p=g_n_p,
        g_n_c=g_n_c,
        n_groups=receiver.n_groups,
        n_common=receiver.n_common,
        dropped_streams=dropped,
    )
