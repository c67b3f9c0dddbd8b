"""
In-package invariant suite behind the `check` command.

Every check returns a CheckResult and never raises; a crash inside a check is
reported as a failure with the exception text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from clustering import private_candidate_clusters, run_clustering
from grouping import build_receiver_structure
from scenario import CachePlacement, ScenarioConfig, validate_scenario
from solver import build_instance, prepare_structure, run_scheme
from wmmse_core import (
    Beamformers,
    RateAllocation,
    fronthaul_load,
    mmse_receiver,
    mse,
    rate_identity_check,
    sinr,
    update_aux,
)

SMALL = dict(
    n_bs=3, n_users=6, n_files=3, n_antennas=2, m_samples=30, m_eval_samples=30,
    cache_size_files=1, max_outer_iters=30, area_half_width_m=300.0,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _random_beamformers(instance, receiver, clusters, rng: np.random.Generator) -> Beamformers:
    w = Beamformers.zeros(clusters, instance.config.n_antennas)
    scale = math.sqrt(instance.config.p_max_w / max(w.w_p.shape[1], 1))
    shape_p, shape_c = w.w_p.shape, w.w_c.shape
    w_p = scale * (rng.standard_normal(shape_p) + 1j * rng.standard_normal(shape_p))
    w_c = scale * (rng.standard_normal(shape_c) + 1j * rng.standard_normal(shape_c))
    return w.with_vectors(w_p, w_c).apply_masks()


def check_scenarios(seeds: int) -> CheckResult:
    config = ScenarioConfig(**SMALL)
    for seed in range(seeds):
        instance = build_instance(config, seed)
        issues = validate_scenario(instance.scenario, instance.placement)
        if issues:
            return CheckResult("scenario validity", False, f"seed {seed}: {issues[0]}")
    return CheckResult("scenario validity", True, f"{seeds} seeds")


def check_structures(seeds: int) -> CheckResult:
    config = ScenarioConfig(**SMALL)
    for seed in range(seeds):
        instance = build_instance(config, seed)
        receiver, clusters = prepare_structure(instance, "rs_cmd")
        issues = receiver.check() + clusters.check(config.a_max_streams)
        # same inputs, same clusters
        hint = private_candidate_clusters(instance.groups, instance.stats, config.mu_db)
        again = run_clustering(
            build_receiver_structure(instance.groups, instance.stats, hint, config.d_max_common),
            instance.stats,
            config,
        )
        if again.g_n_p != clusters.g_n_p:
            issues.append("clustering is not deterministic")
        if issues:
            return CheckResult("receiver/clustering invariants", False, f"seed {seed}: {issues[0]}")
    return CheckResult("receiver/clustering invariants", True, f"{seeds} seeds")


def check_closed_forms(draws: int) -> CheckResult:
    rng = np.random.default_rng(7)
    config = ScenarioConfig(**SMALL)
    worst_identity = worst_mse = worst_grad = 0.0
    for seed in range(draws):
        instance = build_instance(config, seed)
        receiver, clusters = prepare_structure(instance, "rs_cmd")
        w = _random_beamformers(instance, receiver, clusters, rng)
        noise = instance.scenario.noise_power_w
        h = instance.samples.samples[0]
        for k in range(receiver.n_users):
            g = receiver.user_group[k]
            streams = [("p", g)] + [("c", c) for c in receiver.phi_k[k]]
            for o, i in streams:
                lhs, rhs = rate_identity_check(k, i, o, h[k], w, receiver, noise)
                worst_identity = max(worst_identity, abs(lhs - rhs))
                u = mmse_receiver(k, i, o, h[k], w, receiver, noise)
                e = mse(k, i, o, h[k], w, u, receiver, noise)
                gamma = sinr(k, i, o, h[k], w, receiver, noise)
                worst_mse = max(worst_mse, abs(e - 1.0 / (1.0 + gamma)))
                step = 1e-6 * max(abs(u), 1e-12)
                d_re = (mse(k, i, o, h[k], w, u + step, receiver, noise)
                        - mse(k, i, o, h[k], w, u - step, receiver, noise)) / (2 * step)
                d_im = (mse(k, i, o, h[k], w, u + 1j * step, receiver, noise)
                        - mse(k, i, o, h[k], w, u - 1j * step, receiver, noise)) / (2 * step)
                worst_grad = max(worst_grad, abs(d_re) * abs(u), abs(d_im) * abs(u))
    passed = worst_identity < 1e-9 and worst_mse < 1e-12 and worst_grad < 1e-6
    return CheckResult(
        "rate identity / MMSE closed forms",
        passed,
        f"identity {worst_identity:.1e}, e_mmse {worst_mse:.1e}, scaled gradient {worst_grad:.1e}",
    )


def check_statistics(seeds: int) -> CheckResult:
    rng = np.random.default_rng(11)
    config = ScenarioConfig(**SMALL)
    worst = 0.0
    for seed in range(seeds):
        instance = build_instance(config, seed)
        receiver, clusters = prepare_structure(instance, "rs_cmd")
        w = _random_beamformers(instance, receiver, clusters, rng)
        _, aux = update_aux(w, instance.samples.samples, receiver, instance.scenario.noise_power_w)
        for y in list(aux.y_p) + list(aux.y_c):
            eig = np.linalg.eigvalsh(0.5 * (y + y.conj().T))
            worst = min(worst, float(eig.min()) / max(1.0, float(eig.max())))
        if np.any(aux.t_p < 0) or np.any(aux.t_c < 0):
            return CheckResult("statistics PSD", False, f"seed {seed}: negative t̄")
    return CheckResult("statistics PSD", worst >= -1e-10, f"min scaled eigenvalue {worst:.1e}")


def check_fronthaul_monotone(seeds: int) -> CheckResult:
    config = ScenarioConfig(**SMALL)
    rng = np.random.default_rng(3)
    for seed in range(seeds):
        instance = build_instance(config, seed)
        receiver, clusters = prepare_structure(instance, "rs_cmd")
        rates = RateAllocation(
            r_bar=0.0,
            r_p=rng.uniform(0, 1e6, receiver.n_groups),
            r_c=rng.uniform(0, 1e6, receiver.n_common),
        )
        bigger = np.array(instance.placement.matrix)
        bigger[rng.integers(0, config.n_files), :] = 1
        superset = CachePlacement(bigger)
        for n in range(config.n_bs):
            before = fronthaul_load(n, rates, clusters, instance.placement, receiver)
            after = fronthaul_load(n, rates, clusters, superset, receiver)
            if after > before + 1e-9:
                return CheckResult("fronthaul vs cache superset", False, f"seed {seed}, BS {n}")
    return CheckResult("fronthaul vs cache superset", True, f"{seeds} seeds")


def check_small_solves(seeds: int) -> CheckResult:
    config = ScenarioConfig(**SMALL)
    for seed in range(seeds):
        instance = build_instance(config, seed)
        for scheme in ("tin", "rs_cmd", "scm_rsma"):
            result = run_scheme(scheme, instance)
            trace = [r / config.bandwidth_hz for r in result.objective_trace()]
            dips = [b - a for a, b in zip(trace, trace[1:]) if b - a < -config.ascent_tol]
            if dips:
                return CheckResult("monotone ascent / feasibility", False, f"seed {seed} {scheme}: dip {min(dips):.2e}")
            if result.report is not None and not result.report.ok(1e-6):
                return CheckResult(
                    "monotone ascent / feasibility", False,
                    f"seed {seed} {scheme}: violation {result.report.max_violation:.2e}",
                )
    return CheckResult("monotone ascent / feasibility", True, f"{seeds} seeds × 3 schemes")


def run_checks(quick: bool = True, only: Optional[List[str]] = None) -> List[CheckResult]:
    """Run the suite; `only` keeps the checks whose key contains any given substring."""
    n = 5 if quick else 100
    suite: List[Tuple[str, Callable[[], CheckResult]]] = [
        ("scenarios", lambda: check_scenarios(n)),
        ("structures", lambda: check_structures(n)),
        ("closed_forms", lambda: check_closed_forms(3 if quick else 20)),
        ("statistics", lambda: check_statistics(3 if quick else 20)),
        ("fronthaul", lambda: check_fronthaul_monotone(n)),
        ("solves", lambda: check_small_solves(1 if quick else 5)),
    ]
    if only:
        suite = [(key, check) for key, check in suite if any(s in key for s in only)]
    results: List[CheckResult] = []
    for key, check in suite:
        try:
            results.append(check())
        except Exception as e:
            results.append(CheckResult(key, False, f"{type(e).__name__}: {e}"))
    return results
