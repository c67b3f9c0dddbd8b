"""
Closed-form per-sample math of the rate-splitting receiver model.

Power terms, SINRs, MSEs, MMSE receivers and weights, the rate/WMMSE identity,
sample-average rates, fronthaul accounting, and the sample-averaged statistics
that parameterize the convex subproblem.

Conventions:
  - channels and precoders are aggregate vectors of length D = N·L, block n is
    slice(n*L, (n+1)*L);
  - a projection x = h^H w is computed as sum(conj(h) * w);
  - rates returned to callers are in bit/s; the surrogate uses natural logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from channel import SampleSet
from clustering import ClusterAssignment
from grouping import ReceiverError, ReceiverStructure
from scenario import CachePlacement, ScenarioConfig

LN2 = math.log(2.0)


class NumericalError(ArithmeticError):
    """Non-positive MSE, non-PSD statistics or similar breakdown of the closed forms."""


# ---------- Containers ----------

@dataclass(frozen=True)
class Beamformers:
    w_p: np.ndarray        # (G, D) private precoders
    w_c: np.ndarray        # (C, D) common precoders
    p_mask: np.ndarray     # (G, N) bool
    c_mask: np.ndarray     # (C, N) bool
    n_antennas: int

    @classmethod
    def zeros(cls, clusters: ClusterAssignment, n_antennas: int) -> "Beamformers":
        dims = clusters.n_bs * n_antennas
        return cls(
            w_p=np.zeros((clusters.n_groups, dims), dtype=complex),
            w_c=np.zeros((clusters.n_common, dims), dtype=complex),
            p_mask=clusters.private_mask(),
            c_mask=clusters.common_mask(),
            n_antennas=n_antennas,
        )

    @property
    def n_bs(self) -> int:
        return self.p_mask.shape[1]

    def _dim_mask(self, mask: np.ndarray) -> np.ndarray:
        return np.repeat(mask, self.n_antennas, axis=1)

    def apply_masks(self) -> "Beamformers":
        """Zero every block outside the stream's serving cluster."""
        return Beamformers(
            w_p=np.where(self._dim_mask(self.p_mask), self.w_p, 0.0),
            w_c=np.where(self._dim_mask(self.c_mask), self.w_c, 0.0),
            p_mask=self.p_mask,
            c_mask=self.c_mask,
            n_antennas=self.n_antennas,
        )

    def with_vectors(self, w_p: np.ndarray, w_c: np.ndarray) -> "Beamformers":
        return Beamformers(w_p=w_p, w_c=w_c, p_mask=self.p_mask, c_mask=self.c_mask, n_antennas=self.n_antennas)

    def bs_power(self) -> np.ndarray:
        """(N,) transmit power of every BS."""
        blocks = lambda w: (np.abs(w) ** 2).reshape(w.shape[0], self.n_bs, self.n_antennas).sum(axis=(0, 2))
        return blocks(self.w_p) + blocks(self.w_c)

    def mask_violation(self) -> float:
        """Largest |entry| outside the support (0.0 when masks hold)."""
        out_p = np.abs(self.w_p[~self._dim_mask(self.p_mask)])
        out_c = np.abs(self.w_c[~self._dim_mask(self.c_mask)])
        return float(max(out_p.max(initial=0.0), out_c.max(initial=0.0)))


@dataclass(frozen=True)
class RateAllocation:
    """Rates in bit/s. r_c is indexed by common stream id."""

    r_bar: float
    r_p: np.ndarray
    r_c: np.ndarray

    @classmethod
    def zeros(cls, n_groups: int, n_common: int) -> "RateAllocation":
        return cls(r_bar=0.0, r_p=np.zeros(n_groups), r_c=np.zeros(n_common))

    def group_rates(self, receiver: ReceiverStructure) -> np.ndarray:
        """(G,) R̄_g^p plus the common rate counted for each group."""
        rates = np.array(self.r_p, dtype=float)
        for g, c in enumerate(receiver.common_owner):
            if c >= 0 and c < len(self.r_c):
                rates[g] += self.r_c[c]
        return rates

    def check(self, receiver: ReceiverStructure, tol: float = 1e-6) -> List[str]:
        issues: List[str] = []
        if self.r_bar < -tol or np.any(self.r_p < -tol) or np.any(self.r_c < -tol):
            issues.append("negative rate")
        scale = max(1.0, abs(self.r_bar))
        slack = self.group_rates(receiver) - self.r_bar
        if np.any(slack < -tol * scale):
            issues.append(f"R̄ exceeds a group rate by {float(-slack.min()):.3g} bit/s")
        return issues


@dataclass(frozen=True)
class Limits:
    """Per-BS power (W) and fronthaul (bit/s) caps."""

    p_max_w: np.ndarray
    c_max_bps: np.ndarray

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "Limits":
        return cls(
            p_max_w=np.full(config.n_bs, config.p_max_w),
            c_max_bps=np.full(config.n_bs, config.c_max_bps),
        )


@dataclass(frozen=True)
class StreamPairs:
    """Index of the (stream, user) pairs that carry a rate constraint.

    Private pairs are (g, k) with k in G_g; common pairs are (c, k) with c in Φ_k.
    """

    private: Tuple[Tuple[int, int], ...]
    common: Tuple[Tuple[int, int], ...]

    @classmethod
    def from_receiver(cls, receiver: ReceiverStructure) -> "StreamPairs":
        private = tuple((grp.id, k) for grp in receiver.groups for k in grp.members)
        common = tuple(
            (c, k)
            for c in range(receiver.n_common)
            for k in sorted(receiver.m_g[c])
        )
        return cls(private=private, common=common)

    def of(self, o: str) -> Tuple[Tuple[int, int], ...]:
        return self.private if o == "p" else self.common


@dataclass(frozen=True)
class WmmseState:
    """Per-sample MMSE receivers and weights, shape (M, P) per stream kind."""

    pairs: StreamPairs
    u_p: np.ndarray
    rho_p: np.ndarray
    u_c: np.ndarray
    rho_c: np.ndarray


@dataclass(frozen=True)
class AuxiliaryStats:
    """Sample averages t̄, z̄, f̄, Ȳ per (stream, user) pair."""

    pairs: StreamPairs
    t_p: np.ndarray    # (P,)
    z_p: np.ndarray    # (P,)
    f_p: np.ndarray    # (P, D)
    y_p: np.ndarray    # (P, D, D)
    t_c: np.ndarray
    z_c: np.ndarray
    f_c: np.ndarray
    y_c: np.ndarray
    noise_power: float
    _index: Dict[Tuple[str, int, int], int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        index = {("p", g, k): i for i, (g, k) in enumerate(self.pairs.private)}
        index.update({("c", c, k): i for i, (c, k) in enumerate(self.pairs.common)})
        object.__setattr__(self, "_index", index)

    def get(self, o: str, g: int, k: int) -> Tuple[float, float, np.ndarray, np.ndarray]:
        """(t̄, z̄, f̄, Ȳ) of stream (o, g) at user k."""
        i = self._index.get((o, g, k))
        if i is None:
            raise ReceiverError(f"no statistics for stream {o}{g} at user {k}")
        if o == "p":
            return float(self.t_p[i]), float(self.z_p[i]), self.f_p[i], self.y_p[i]
        return float(self.t_c[i]), float(self.z_c[i]), self.f_c[i], self.y_c[i]

    def is_finite(self) -> bool:
        arrays = (self.t_p, self.z_p, self.f_p, self.y_p, self.t_c, self.z_c, self.f_c, self.y_c)
        return all(bool(np.all(np.isfinite(a))) for a in arrays)


# ---------- Single-user closed forms ----------

def _projection(h_k: np.ndarray, w: np.ndarray) -> complex:
    return complex(np.vdot(h_k, w))


def power_terms(
    k: int,
    g: int,
    o: str,
    h_k: np.ndarray,
    w: Beamformers,
    receiver: ReceiverStructure,
    noise_power: float,
) -> Tuple[float, float]:
    """(T, I) of stream (o, g) at user k.

    I collects every private stream but g's (all of them for a common stage), the
    commons user k never decodes, the commons still to be decoded after g, and noise.
    """
    pp = np.abs(w.w_p.conj() @ h_k) ** 2
    pc = np.abs(w.w_c.conj() @ h_k) ** 2
    undecoded = sum(pc[l] for l in receiver.omega_k(k))
    if o == "p":
        interference = float(pp.sum() - pp[g] + undecoded + noise_power)
        return float(pp[g]) + interference, interference
    if g not in receiver.phi_k[k]:
        raise ReceiverError(f"user {k} does not decode common stream {g}")
    later = sum(pc[m] for m in receiver.psi(g, k))
    interference = float(pp.sum() + undecoded + later + noise_power)
    return float(pc[g]) + interference, interference


def _stream_vector(w: Beamformers, o: str, g: int) -> np.ndarray:
    return w.w_p[g] if o == "p" else w.w_c[g]


def sinr(k: int, g: int, o: str, h_k: np.ndarray, w: Beamformers, receiver: ReceiverStructure, noise_power: float) -> float:
    total, interference = power_terms(k, g, o, h_k, w, receiver, noise_power)
    return (total - interference) / interference


def mse(
    k: int,
    g: int,
    o: str,
    h_k: np.ndarray,
    w: Beamformers,
    u: complex,
    receiver: ReceiverStructure,
    noise_power: float,
) -> float:
    """e = |u|²T − 2Re{u·h^H w} + 1."""
    total, _ = power_terms(k, g, o, h_k, w, receiver, noise_power)
    x = _projection(h_k, _stream_vector(w, o, g))
    return float(abs(u) ** 2 * total - 2.0 * (u * x).real + 1.0)


def mmse_receiver(
    k: int,
    g: int,
    o: str,
    h_k: np.ndarray,
    w: Beamformers,
    receiver: ReceiverStructure,
    noise_power: float,
) -> complex:
    """u = (w^o_g)^H h_k / T."""
    total, _ = power_terms(k, g, o, h_k, w, receiver, noise_power)
    return complex(np.vdot(_stream_vector(w, o, g), h_k)) / total


def optimal_weight(e_mmse: float) -> float:
    if not e_mmse > 0:
        raise NumericalError(f"optimal weight needs a positive MSE (got {e_mmse})")
    return 1.0 / e_mmse


def rate_identity_check(
    k: int,
    g: int,
    o: str,
    h_k: np.ndarray,
    w: Beamformers,
    receiver: ReceiverStructure,
    noise_power: float,
) -> Tuple[float, float]:
    """(log2(1+γ), (ln ρ* − ρ*·e(u*) + 1)/ln 2); both sides agree at the MMSE point."""
    gamma = sinr(k, g, o, h_k, w, receiver, noise_power)
    u = mmse_receiver(k, g, o, h_k, w, receiver, noise_power)
    e = mse(k, g, o, h_k, w, u, receiver, noise_power)
    rho = optimal_weight(e)
    return math.log2(1.0 + gamma), (math.log(rho) - rho * e + 1.0) / LN2


# ---------- Vectorized over samples ----------

@dataclass(frozen=True)
class StageTerms:
    """Per-sample total power T and signal |h^H w|² for every constraint pair, shape (M, P)."""

    pairs: StreamPairs
    total_p: np.ndarray
    signal_p: np.ndarray
    proj_p: np.ndarray     # h^H w of the stream itself, complex
    total_c: np.ndarray
    signal_c: np.ndarray
    proj_c: np.ndarray


def _omega_matrix(receiver: ReceiverStructure) -> np.ndarray:
    out = np.zeros((receiver.n_users, receiver.n_common), dtype=bool)
    for k in range(receiver.n_users):
        for l in receiver.omega_k(k):
            out[k, l] = True
    return out


def stage_terms(
    w: Beamformers,
    samples: np.ndarray,
    receiver: ReceiverStructure,
    noise_power: float,
    pairs: Optional[StreamPairs] = None,
) -> StageTerms:
    """Evaluate every power term at once. `samples` has shape (M, K, D)."""
    pairs = pairs or StreamPairs.from_receiver(receiver)
    m = samples.shape[0]
    proj_p = np.einsum("mkd,gd->mkg", samples.conj(), w.w_p)
    proj_c = np.einsum("mkd,cd->mkc", samples.conj(), w.w_c)
    pp = np.abs(proj_p) ** 2
    pc = np.abs(proj_c) ** 2

    # private power summed over all groups plus undecoded commons: (M, K)
    omega = _omega_matrix(receiver).astype(float)
    base = pp.sum(axis=2) + np.einsum("mkc,kc->mk", pc, omega) + noise_power

    def _empty() -> np.ndarray:
        return np.zeros((m, 0))

    if pairs.private:
        gs = np.array([g for g, _ in pairs.private])
        ks = np.array([k for _, k in pairs.private])
        signal_p = pp[:, ks, gs]
        total_p = base[:, ks]
        x_p = proj_p[:, ks, gs]
    else:
        signal_p, total_p, x_p = _empty(), _empty(), _empty().astype(complex)

    if pairs.common:
        cs = np.array([c for c, _ in pairs.common])
        ks = np.array([k for _, k in pairs.common])
        later = np.zeros((len(pairs.common), receiver.n_common))
        for i, (c, k) in enumerate(pairs.common):
            for l in receiver.psi(c, k):
                later[i, l] = 1.0
        pc_pairs = pc[:, ks, :]                        # (M, P, C)
        signal_c = pc[:, ks, cs]
        total_c = base[:, ks] + np.einsum("mpc,pc->mp", pc_pairs, later) + signal_c
        x_c = proj_c[:, ks, cs]
    else:
        signal_c, total_c, x_c = _empty(), _empty(), _empty().astype(complex)

    return StageTerms(
        pairs=pairs,
        total_p=total_p,
        signal_p=signal_p,
        proj_p=x_p,
        total_c=total_c,
        signal_c=signal_c,
        proj_c=x_c,
    )


def _pair_rates(total: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """(P,) sample-average log2(1 + γ) per pair."""
    if total.shape[1] == 0:
        return np.zeros(0)
    gamma = signal / (total - signal)
    return np.log2(1.0 + gamma).mean(axis=0)


def sample_average_rate(
    g: int,
    o: str,
    w: Beamformers,
    samples: SampleSet,
    receiver: ReceiverStructure,
    noise_power: float,
    bandwidth_hz: float,
) -> Dict[int, float]:
    """Per eligible user: (B/M)·Σ_m log2(1 + γ(m)) in bit/s. The binding bound is the min."""
    terms = stage_terms(w, samples.samples, receiver, noise_power)
    if o == "p":
        rates = _pair_rates(terms.total_p, terms.signal_p)
        pairs = terms.pairs.private
    else:
        rates = _pair_rates(terms.total_c, terms.signal_c)
        pairs = terms.pairs.common
    return {k: bandwidth_hz * float(r) for (s, k), r in zip(pairs, rates) if s == g}


def stream_bounds(
    w: Beamformers,
    samples: np.ndarray,
    receiver: ReceiverStructure,
    noise_power: float,
    bandwidth_hz: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """(G,) private and (C,) common achievable rates in bit/s: min over eligible users.

    Streams without eligible users get 0.
    """
    terms = stage_terms(w, samples, receiver, noise_power)
    rate_p = _pair_rates(terms.total_p, terms.signal_p)
    rate_c = _pair_rates(terms.total_c, terms.signal_c)
    bound_p = np.full(receiver.n_groups, np.inf)
    bound_c = np.full(receiver.n_common, np.inf)
    for (g, _), r in zip(terms.pairs.private, rate_p):
        bound_p[g] = min(bound_p[g], r)
    for (c, _), r in zip(terms.pairs.common, rate_c):
        bound_c[c] = min(bound_c[c], r)
    bound_p[np.isinf(bound_p)] = 0.0
    bound_c[np.isinf(bound_c)] = 0.0
    return bandwidth_hz * bound_p, bandwidth_hz * bound_c


def _aux_for_kind(
    total: np.ndarray,
    signal: np.ndarray,
    proj: np.ndarray,
    h_pairs: np.ndarray,
) -> Tuple[np.ndarray, ...]:
    """u, ρ and the four sample averages for one stream kind."""
    m = total.shape[0]
    interference = total - signal
    u = proj.conj() / total
    e = interference / total
    if np.any(e <= 0):
        raise NumericalError("non-positive MMSE encountered in sample statistics")
    rho = 1.0 / e
    weight = rho * np.abs(u) ** 2                          # (M, P)
    t_bar = weight.mean(axis=0)
    z_bar = (1.0 - rho + np.log(rho)).mean(axis=0)
    f_bar = np.einsum("mp,mpd->pd", rho * u.conj(), h_pairs) / m
    y_bar = np.einsum("mp,mpd,mpe->pde", weight, h_pairs, h_pairs.conj()) / m
    return u, rho, t_bar, z_bar, f_bar, y_bar


def update_aux(
    w: Beamformers,
    samples: np.ndarray,
    receiver: ReceiverStructure,
    noise_power: float,
) -> Tuple[WmmseState, AuxiliaryStats]:
    """Closed-form receivers and weights per sample, then the sample averages
    t̄ = mean ρ|u|², z̄ = mean(1 − ρ + ln ρ), f̄ = mean ρ·h·u*, Ȳ = mean ρ|u|²·h h^H.
    """
    terms = stage_terms(w, samples, receiver, noise_power)
    pairs = terms.pairs
    dims = samples.shape[2]

    def _kind(total, signal, proj, kind_pairs):
        if not kind_pairs:
            m = samples.shape[0]
            empty = np.zeros((m, 0))
            return (empty.astype(complex), empty, np.zeros(0), np.zeros(0),
                    np.zeros((0, dims), dtype=complex), np.zeros((0, dims, dims), dtype=complex))
        ks = np.array([k for _, k in kind_pairs])
        return _aux_for_kind(total, signal, proj, samples[:, ks, :])

    u_p, rho_p, t_p, z_p, f_p, y_p = _kind(terms.total_p, terms.signal_p, terms.proj_p, pairs.private)
    u_c, rho_c, t_c, z_c, f_c, y_c = _kind(terms.total_c, terms.signal_c, terms.proj_c, pairs.common)

    state = WmmseState(pairs=pairs, u_p=u_p, rho_p=rho_p, u_c=u_c, rho_c=rho_c)
    aux = AuxiliaryStats(
        pairs=pairs,
        t_p=t_p, z_p=z_p, f_p=f_p, y_p=y_p,
        t_c=t_c, z_c=z_c, f_c=f_c, y_c=y_c,
        noise_power=noise_power,
    )
    return state, aux


# ---------- Fronthaul ----------

def fronthaul_coefficients(
    receiver: ReceiverStructure,
    placement: CachePlacement,
    n_bs: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """(G, N) and (C, N) coefficients 1 − c_{f,n}; never-cached commons cost 1 everywhere."""
    coef_p = np.ones((receiver.n_groups, n_bs))
    for grp in receiver.groups:
        coef_p[grp.id] = 1.0 - placement.matrix[grp.file, :n_bs]
    coef_c = np.ones((receiver.n_common, n_bs))
    for c, f in enumerate(receiver.common_file):
        if f >= 0:
            coef_c[c] = 1.0 - placement.matrix[f, :n_bs]
    return coef_p, coef_c


def fronthaul_load(
    n: int,
    rates: RateAllocation,
    clusters: ClusterAssignment,
    placement: CachePlacement,
    receiver: ReceiverStructure,
) -> float:
    """Σ_{g∈𝒢_n^p}(1−c)·R̄_g^p + Σ_{c∈𝒢_n^c}(1−c)·R̄_c^c in bit/s."""
    coef_p, coef_c = fronthaul_coefficients(receiver, placement, clusters.n_bs)
    load = sum(coef_p[g, n] * rates.r_p[g] for g in clusters.g_n_p[n])
    load += sum(coef_c[c, n] * rates.r_c[c] for c in clusters.g_n_c[n])
    return float(load)


# ---------- Independent constraint check ----------

@dataclass(frozen=True)
class ConstraintReport:
    power_w: np.ndarray           # (N,)
    fronthaul_bps: np.ndarray     # (N,)
    power_violation: float        # max relative excess over P_n^max
    fronthaul_violation: float    # max relative excess over max(C_n^max, 1 bit/s)
    rate_violation: float         # max R̄ − (R̄^p + R̄^c) in bit/s, clipped at 0
    mask_violation: float

    @property
    def max_violation(self) -> float:
        return max(self.power_violation, self.fronthaul_violation, self.mask_violation)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


def constraint_report(
    w: Beamformers,
    rates: RateAllocation,
    clusters: ClusterAssignment,
    placement: CachePlacement,
    receiver: ReceiverStructure,
    limits: Limits,
) -> ConstraintReport:
    """Re-evaluate power and fronthaul constraints from first principles."""
    power = w.bs_power()
    fronthaul = np.array([fronthaul_load(n, rates, clusters, placement, receiver) for n in range(clusters.n_bs)])
    # zero caps are judged on absolute excess
    p_ref = np.where(limits.p_max_w > 0, limits.p_max_w, 1.0)
    c_ref = np.maximum(limits.c_max_bps, 1.0)
    power_violation = float(np.max(np.maximum(power - limits.p_max_w, 0.0) / p_ref, initial=0.0))
    fronthaul_violation = float(np.max(np.maximum(fronthaul - limits.c_max_bps, 0.0) / c_ref, initial=0.0))
    gap = rates.r_bar - rates.group_rates(receiver)
    return ConstraintReport(
        power_w=power,
        fronthaul_bps=fronthaul,
        power_violation=power_violation,
        fronthaul_violation=fronthaul_violation,
        rate_violation=float(max(gap.max(initial=0.0), 0.0)),
        mask_violation=w.mask_violation(),
    )


# ---------- Monte-Carlo signal oracle ----------

@dataclass(frozen=True)
class StageEstimate:
    stream: Tuple[str, int]   # ("c", i) for a common stage, ("p", g) for the private stage
    power: float              # empirical mean received power at this stage
    std_error: float


def received_power_oracle(
    k: int,
    h_k: np.ndarray,
    w: Beamformers,
    receiver: ReceiverStructure,
    noise_power: float,
    n_symbols: int,
    rng: np.random.Generator,
    chunk: int = 200_000,
) -> List[StageEstimate]:
    """Simulate y_k with unit-power circular Gaussian symbols and AWGN, cancel decoded
    commons in decode order, and measure the received power before each stage.
    """
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    x = np.concatenate([w.w_p.conj() @ h_k, w.w_c.conj() @ h_k])   # per-stream gains h^H w
    n_p = w.w_p.shape[0]
    order = list(receiver.phi_k[k])
    g_k = receiver.user_group[k]

    # cancelled stream columns before each stage
    stages: List[Tuple[Tuple[str, int], List[int]]] = []
    for pos, c in enumerate(order):
        stages.append((("c", c), [n_p + j for j in order[:pos]]))
    stages.append((("p", g_k), [n_p + j for j in order]))

    sums = np.zeros(len(stages))
    sq_sums = np.zeros(len(stages))
    done = 0
    while done < n_symbols:
        size = min(chunk, n_symbols - done)
        shape = (size, x.size)
        s = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        noise = np.sqrt(noise_power / 2.0) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))
        contrib = s * x[None, :]
        y = contrib.sum(axis=1) + noise
        for i, (_, cancelled) in enumerate(stages):
            residual = y - contrib[:, cancelled].sum(axis=1) if cancelled else y
            p = np.abs(residual) ** 2
            sums[i] += p.sum()
            sq_sums[i] += (p ** 2).sum()
        done += size

    means = sums / n_symbols
    variances = np.maximum(sq_sums / n_symbols - means ** 2, 0.0)
    return [
        StageEstimate(stream=label, power=float(means[i]), std_error=float(np.sqrt(variances[i] / n_symbols)))
        for i, (label, _) in enumerate(stages)
    ]


def analytic_stage_powers(
    k: int,
    h_k: np.ndarray,
    w: Beamformers,
    receiver: ReceiverStructure,
    noise_power: float,
) -> List[Tuple[Tuple[str, int], float]]:
    """Analytic T at each SIC stage, in the same order as received_power_oracle."""
    out = [(("c", c), power_terms(k, c, "c", h_k, w, receiver, noise_power)[0]) for c in receiver.phi_k[k]]
    g_k = receiver.user_group[k]
    out.append((("p", g_k), power_terms(k, g_k, "p", h_k, w, receiver, noise_power)[0]))
    return out
