"""
User demands, multicast groups, and the receiver-side SIC structure
(which common messages each user decodes, and in which order).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np

from channel import ChannelStatistics
from scenario import GroupMode, ScenarioConfig


class ReceiverError(ValueError):
    """Inconsistent decode request (common stream not in Φ_k, empty cluster)."""


# ---------- Demands ----------

@dataclass(frozen=True)
class DemandProfile:
    popularity: np.ndarray  # (F,) probabilities
    requests: np.ndarray    # (K,) requested file index per user


def zipf_popularity(n_files: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n_files + 1, dtype=float)
    weights = ranks ** (-exponent)
    return weights / weights.sum()


def draw_requests(config: ScenarioConfig, rng: np.random.Generator) -> DemandProfile:
    """Zipf popularity p_f ∝ f^(-γ); each user requests one file independently."""
    popularity = zipf_popularity(config.n_files, config.zipf_exponent)
    requests = rng.choice(config.n_files, size=config.n_users, p=popularity)
    return DemandProfile(popularity=popularity, requests=requests.astype(int))


# ---------- Multicast groups ----------

@dataclass(frozen=True)
class MulticastGroup:
    id: int
    file: int
    members: Tuple[int, ...]


def form_groups(requests: Sequence[int], group_mode: GroupMode) -> List[MulticastGroup]:
    """g_le_k: one group per distinct requested file; g_eq_k: one singleton group per user.

    Groups are numbered by their lowest-index member.
    """
    requests = [int(f) for f in requests]
    if group_mode == "g_eq_k":
        return [MulticastGroup(id=k, file=f, members=(k,)) for k, f in enumerate(requests)]

    members_by_file: Dict[int, List[int]] = {}
    for k, f in enumerate(requests):
        members_by_file.setdefault(f, []).append(k)
    # dict preserves first-appearance order, i.e. lowest member first
    return [
        MulticastGroup(id=g, file=f, members=tuple(users))
        for g, (f, users) in enumerate(members_by_file.items())
    ]


# ---------- Receiver structure ----------

@dataclass(frozen=True)
class ReceiverStructure:
    """SIC bookkeeping for every user.

    Common streams are indexed separately from groups. Under RS-CMD common stream c
    belongs to group c; under SCM-RSMA a single stream (index 0) is shared by all.
    """

    groups: Tuple[MulticastGroup, ...]
    user_group: Tuple[int, ...]            # group of each user, -1 if none
    m_g: Tuple[FrozenSet[int], ...]        # decoders of each common stream
    phi_k: Tuple[Tuple[int, ...], ...]     # decoded common streams, in decode order
    common_owner: Tuple[int, ...]          # common stream counted in each group's rate, -1 if none
    common_file: Tuple[int, ...]           # file carried by each common stream, -1 = never cached
    _omega: Tuple[FrozenSet[int], ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        everything = frozenset(range(self.n_common))
        object.__setattr__(self, "_omega", tuple(everything - frozenset(p) for p in self.phi_k))

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_users(self) -> int:
        return len(self.user_group)

    @property
    def n_common(self) -> int:
        return len(self.m_g)

    def omega_k(self, k: int) -> FrozenSet[int]:
        """Common streams user k does not decode (treated as noise)."""
        return self._omega[k]

    def pi_k(self, k: int) -> Dict[int, int]:
        """Decode position (1-based) of each common stream in Φ_k."""
        return {c: pos + 1 for pos, c in enumerate(self.phi_k[k])}

    def psi(self, i: int, k: int) -> FrozenSet[int]:
        """Common streams decoded after i at user k."""
        order = self.phi_k[k]
        if i not in order:
            raise ReceiverError(f"common stream {i} is not decoded by user {k}")
        return frozenset(order[order.index(i) + 1:])

    def psi_tilde(self, i: int, k: int) -> FrozenSet[int]:
        """Common streams decoded before i at user k."""
        order = self.phi_k[k]
        if i not in order:
            raise ReceiverError(f"common stream {i} is not decoded by user {k}")
        return frozenset(order[: order.index(i)])

    def members(self, g: int) -> Tuple[int, ...]:
        return self.groups[g].members

    def without_commons(self, dropped: Sequence[int]) -> "ReceiverStructure":
        """Remove common streams from every Φ_k and empty their decoder sets."""
        gone = frozenset(dropped)
        if not gone:
            return self
        return ReceiverStructure(
            groups=self.groups,
            user_group=self.user_group,
            m_g=tuple(frozenset() if c in gone else m for c, m in enumerate(self.m_g)),
            phi_k=tuple(tuple(c for c in order if c not in gone) for order in self.phi_k),
            common_owner=self.common_owner,
            common_file=self.common_file,
        )

    def active_commons(self) -> List[int]:
        return [c for c, m in enumerate(self.m_g) if m]

    def decode_lists(self) -> Dict[str, List[int]]:
        """Per-user decode order for the run log."""
        return {str(k): list(order) for k, order in enumerate(self.phi_k)}

    def check(self) -> List[str]:
        """Structural invariants; empty list when consistent."""
        issues: List[str] = []
        for c, decoders in enumerate(self.m_g):
            for k in decoders:
                if c not in self.phi_k[k]:
                    issues.append(f"user {k} in M_{c} but {c} not in Φ_{k}")
        for k, order in enumerate(self.phi_k):
            if len(set(order)) != len(order):
                issues.append(f"π_{k} is not a bijection: {order}")
            for c in order:
                if k not in self.m_g[c]:
                    issues.append(f"{c} in Φ_{k} but user {k} not in M_{c}")
                parts = [{c}, set(self.psi(c, k)), set(self.psi_tilde(c, k))]
                if set().union(*parts) != set(order) or sum(len(p) for p in parts) != len(order):
                    issues.append(f"Ψ/Ψ̃ of stream {c} at user {k} do not partition Φ_{k}")
            if self._omega[k] != frozenset(range(self.n_common)) - frozenset(order):
                issues.append(f"Ω_{k} is not the complement of Φ_{k}")
        seen: Dict[int, int] = {}
        for grp in self.groups:
            for k in grp.members:
                if k in seen:
                    issues.append(f"user {k} belongs to groups {seen[k]} and {grp.id}")
                seen[k] = grp.id
            own = self.common_owner[grp.id]
            if own >= 0 and self.m_g[own] and not set(grp.members) <= self.m_g[own]:
                issues.append(f"G_{grp.id} is not contained in M_{own}")
        return issues


def interferer_strength(
    g: int,
    k: int,
    stats: ChannelStatistics,
    candidate_cluster: Sequence[int],
) -> float:
    """Mean over the cluster's BSs of 10·log10(tr(Q_{n,k})/L), in dB."""
    cluster = list(candidate_cluster)
    if not cluster:
        raise ReceiverError(f"empty candidate cluster for group {g}")
    gains_db = stats.per_antenna_gain_db()
    return float(np.mean(gains_db[cluster, k]))


def _user_group_map(groups: Sequence[MulticastGroup], n_users: int) -> List[int]:
    user_group = [-1] * n_users
    for grp in groups:
        for k in grp.members:
            user_group[k] = grp.id
    return user_group


def build_receiver_structure(
    groups: Sequence[MulticastGroup],
    stats: ChannelStatistics,
    clusters_hint: Dict[int, Sequence[int]],
    d_max_common: int,
) -> ReceiverStructure:
    """RS-CMD decode sets: own common plus the d_max_common strongest foreign ones.

    Foreign common messages are decoded weakest first; the own group's common message
    is always the last common stage, right before the private message.
    """
    groups = tuple(groups)
    n_users = stats.n_users
    user_group = _user_group_map(groups, n_users)

    phi: List[Tuple[int, ...]] = []
    for k in range(n_users):
        own = user_group[k]
        if own < 0:
            phi.append(())
            continue
        strengths = {
            grp.id: interferer_strength(grp.id, k, stats, clusters_hint[grp.id])
            for grp in groups if grp.id != own
        }
        ranked = sorted(strengths, key=lambda g: (-strengths[g], g))
        chosen = ranked[:d_max_common]
        ordered = sorted(chosen, key=lambda g: (strengths[g], g))
        phi.append(tuple(ordered) + (own,))

    decoders: List[set] = [set() for _ in groups]
    for k, order in enumerate(phi):
        for c in order:
            decoders[c].add(k)

    return ReceiverStructure(
        groups=groups,
        user_group=tuple(user_group),
        m_g=tuple(frozenset(d) for d in decoders),
        phi_k=tuple(phi),
        common_owner=tuple(grp.id for grp in groups),
        common_file=tuple(grp.file for grp in groups),
    )


def private_only_structure(groups: Sequence[MulticastGroup], n_users: int) -> ReceiverStructure:
    """TIN: no common streams at all."""
    groups = tuple(groups)
    return ReceiverStructure(
        groups=groups,
        user_group=tuple(_user_group_map(groups, n_users)),
        m_g=(),
        phi_k=tuple(() for _ in range(n_users)),
        common_owner=tuple(-1 for _ in groups),
        common_file=(),
    )


def super_common_structure(groups: Sequence[MulticastGroup], n_users: int) -> ReceiverStructure:
    """SCM-RSMA: one network-wide common stream decoded by every grouped user, never cached."""
    groups = tuple(groups)
    user_group = _user_group_map(groups, n_users)
    decoders = frozenset(k for k in range(n_users) if user_group[k] >= 0)
    return ReceiverStructure(
        groups=groups,
        user_group=tuple(user_group),
        m_g=(decoders,),
        phi_k=tuple((0,) if user_group[k] >= 0 else () for k in range(n_users)),
        common_owner=tuple(0 for _ in groups),
        common_file=(-1,),
    )

