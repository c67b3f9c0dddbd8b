"""
Per-iteration convex subproblem: maximize R̄ subject to the WMMSE rate rows, per-BS
power cones, cache-adjusted fronthaul limits and the min-rate links.

The model is built once per run with cvxpy parameters (factors, linear terms and
constants of every rate row) and re-solved every outer iteration with new values.
Rates inside the model are spectral efficiencies (bit/s/Hz); they are scaled back
to bit/s on the way out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import cvxpy as cp
import numpy as np
from scipy import linalg

from clustering import ClusterAssignment
from grouping import ReceiverStructure
from scenario import CachePlacement
from wmmse_core import (
    LN2,
    AuxiliaryStats,
    Beamformers,
    Limits,
    NumericalError,
    RateAllocation,
    fronthaul_coefficients,
)

StreamKey = Tuple[str, int]

PSD_FLOOR = -1e-10
SOLVER_PREFERENCE = ("CLARABEL", "ECOS", "SCS")


@dataclass(frozen=True)
class RateRow:
    """One WMMSE rate constraint of stream `stream` at user `user`:

        Σ_{s∈terms} w_s^H Ȳ w_s − 2Re{f̄^H w_stream} + ln2·r_stream + σ²t̄ − z̄ ≤ 0
    """

    stream: StreamKey
    user: int
    terms: Tuple[StreamKey, ...]
    y_bar: np.ndarray       # (D, D) Hermitian PSD
    f_bar: np.ndarray       # (D,)
    constant: float         # σ²t̄ − z̄
    factor: np.ndarray      # (2D, 2D) real, ‖factor @ [Re w; Im w]‖² = w^H Ȳ w
    f_real: np.ndarray      # (2D,) [Re f̄; Im f̄]


@dataclass(frozen=True)
class ConicProblem:
    n_bs: int
    n_antennas: int
    bandwidth_hz: float
    support: Dict[StreamKey, np.ndarray]     # supported dimension indices per stream
    rows: Tuple[RateRow, ...]
    common_owner: Tuple[int, ...]
    n_groups: int
    n_common: int
    p_max_w: np.ndarray                      # (N,)
    c_max_se: np.ndarray                     # (N,) fronthaul caps in bit/s/Hz
    fronthaul: Dict[StreamKey, np.ndarray]   # (N,) cost coefficient per served stream

    @property
    def dims(self) -> int:
        return self.n_bs * self.n_antennas

    def active_commons(self) -> List[int]:
        return sorted(i for o, i in self.support if o == "c")

    def structure_key(self) -> Tuple:
        """Everything that fixes the compiled model; parameter values excluded."""
        return (
            self.n_bs,
            self.n_antennas,
            tuple(sorted((s, tuple(idx)) for s, idx in self.support.items())),
            tuple((r.stream, r.user, r.terms) for r in self.rows),
            self.common_owner,
            tuple(self.p_max_w),
            tuple(self.c_max_se),
            tuple(sorted((s, tuple(c)) for s, c in self.fronthaul.items())),
        )

    def size_report(self) -> Dict[str, int]:
        """Constraint count d1 and real variable count d2."""
        n_fronthaul = sum(
            1 for n in range(self.n_bs)
            if any(coef[n] > 0 for coef in self.fronthaul.values())
        )
        n_rates = 1 + self.n_groups + len(self.active_commons())
        d1 = len(self.rows) + self.n_bs + n_fronthaul + self.n_groups + n_rates
        d2 = sum(2 * len(idx) for idx in self.support.values()) + n_rates
        return {"d1_constraints": d1, "d2_variables": d2}


@dataclass(frozen=True)
class KktResiduals:
    primal: float
    dual: float
    gap: float


@dataclass(frozen=True)
class SubproblemSolution:
    status: str
    w: Optional[Beamformers]
    rates: Optional[RateAllocation]
    objective: float                 # R̄ in bit/s
    kkt_residuals: KktResiduals
    solver: str = ""
    message: str = ""


# ---------- Building ----------

def psd_factor(y_bar: np.ndarray, label: str) -> np.ndarray:
    """Real factor F of size 2D×2D with ‖F z‖² = w^H Ȳ w for z = [Re w; Im w]."""
    herm = 0.5 * (y_bar + y_bar.conj().T)
    eigvals, eigvecs = linalg.eigh(herm)
    scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
    if eigvals.size and eigvals.min() < PSD_FLOOR * scale:
        raise NumericalError(f"Ȳ of {label} is not PSD (min eigenvalue {eigvals.min():.3e})")
    eigvals = np.clip(eigvals, 0.0, None)
    g = np.sqrt(eigvals)[:, None] * eigvecs.conj().T
    gr, gi = g.real, g.imag
    return np.block([[gr, -gi], [gi, gr]])


def _support(mask: np.ndarray, n_antennas: int) -> np.ndarray:
    return np.flatnonzero(np.repeat(mask, n_antennas))


def build_subproblem(
    aux: AuxiliaryStats,
    clusters: ClusterAssignment,
    placement: CachePlacement,
    receiver: ReceiverStructure,
    limits: Limits,
    n_antennas: int,
    bandwidth_hz: float,
) -> ConicProblem:
    """Assemble the numeric data of one subproblem from the current statistics."""
    if not aux.is_finite():
        raise NumericalError("auxiliary statistics contain non-finite values")

    support: Dict[StreamKey, np.ndarray] = {}
    p_mask, c_mask = clusters.private_mask(), clusters.common_mask()
    for g in range(receiver.n_groups):
        idx = _support(p_mask[g], n_antennas)
        if idx.size:
            support[("p", g)] = idx
    for c in receiver.active_commons():
        idx = _support(c_mask[c], n_antennas)
        if idx.size:
            support[("c", c)] = idx

    privates = tuple(("p", g) for g in range(receiver.n_groups) if ("p", g) in support)

    rows: List[RateRow] = []
    for o, pairs in (("p", aux.pairs.private), ("c", aux.pairs.common)):
        for g, k in pairs:
            if o == "c" and ("c", g) not in support:
                continue
            t_bar, z_bar, f_bar, y_bar = aux.get(o, g, k)
            terms = list(privates)
            terms += [("c", l) for l in sorted(receiver.omega_k(k)) if ("c", l) in support]
            if o == "c":
                terms += [("c", m) for m in sorted(receiver.psi(g, k)) if ("c", m) in support]
                terms.append(("c", g))
            rows.append(RateRow(
                stream=(o, g),
                user=k,
                terms=tuple(terms),
                y_bar=y_bar,
                f_bar=f_bar,
                constant=aux.noise_power * t_bar - z_bar,
                factor=psd_factor(y_bar, f"(g={g}, k={k}, o={o})"),
                f_real=np.concatenate([f_bar.real, f_bar.imag]),
            ))

    coef_p, coef_c = fronthaul_coefficients(receiver, placement, clusters.n_bs)
    fronthaul: Dict[StreamKey, np.ndarray] = {}
    for o, i in support:
        coef = coef_p[i] if o == "p" else coef_c[i]
        served = (p_mask[i] if o == "p" else c_mask[i]).astype(float)
        fronthaul[(o, i)] = coef * served

    return ConicProblem(
        n_bs=clusters.n_bs,
        n_antennas=n_antennas,
        bandwidth_hz=bandwidth_hz,
        support=support,
        rows=tuple(rows),
        common_owner=receiver.common_owner,
        n_groups=receiver.n_groups,
        n_common=receiver.n_common,
        p_max_w=np.asarray(limits.p_max_w, dtype=float),
        c_max_se=np.asarray(limits.c_max_bps, dtype=float) / bandwidth_hz,
        fronthaul=fronthaul,
    )


# ---------- cvxpy model ----------

def _embedding(idx: np.ndarray, dims: int) -> np.ndarray:
    """(2D, 2n) selection matrix mapping [a; b] on the support into [Re w; Im w]."""
    n = idx.size
    e = np.zeros((2 * dims, 2 * n))
    e[idx, np.arange(n)] = 1.0
    e[dims + idx, n + np.arange(n)] = 1.0
    return e


class SubproblemModel:
    """Compiled cvxpy model for one run's fixed structure."""

    def __init__(self, problem: ConicProblem):
        self.key = problem.structure_key()
        dims = problem.dims
        L = problem.n_antennas

        self.x: Dict[StreamKey, cp.Variable] = {
            s: cp.Variable(2 * idx.size, name=f"w_{s[0]}{s[1]}") for s, idx in problem.support.items()
        }
        self.z: Dict[StreamKey, cp.Expression] = {
            s: _embedding(problem.support[s], dims) @ self.x[s] for s in self.x
        }
        self.r_bar = cp.Variable(name="r_bar")
        self.r_p = cp.Variable(problem.n_groups, name="r_p")
        active = problem.active_commons()
        self.r_c = {c: cp.Variable(name=f"r_c{c}") for c in active}

        def rate_of(s: StreamKey) -> cp.Expression:
            return self.r_p[s[1]] if s[0] == "p" else self.r_c[s[1]]

        constraints: List[cp.Constraint] = []
        self.factors: List[cp.Parameter] = []
        self.linears: List[cp.Parameter] = []
        self.constants: List[cp.Parameter] = []
        for i, row in enumerate(problem.rows):
            factor = cp.Parameter((2 * dims, 2 * dims), name=f"F{i}")
            linear = cp.Parameter(2 * dims, name=f"f{i}")
            constant = cp.Parameter(name=f"c{i}")
            self.factors.append(factor)
            self.linears.append(linear)
            self.constants.append(constant)

            if len(row.terms) > 1:
                stacked = cp.vstack([self.z[s] for s in row.terms])
                quad = cp.sum_squares(factor @ stacked.T)
            elif row.terms:
                quad = cp.sum_squares(factor @ self.z[row.terms[0]])
            else:
                quad = 0.0
            lin = linear @ self.z[row.stream] if row.stream in self.z else 0.0
            constraints.append(quad - 2.0 * lin + LN2 * rate_of(row.stream) + constant <= 0)

        # per-BS power
        for n in range(problem.n_bs):
            parts = []
            for s, idx in problem.support.items():
                local = np.flatnonzero((idx >= n * L) & (idx < (n + 1) * L))
                if local.size:
                    half = idx.size
                    parts.append(self.x[s][np.concatenate([local, half + local])])
            if parts:
                constraints.append(cp.norm(cp.hstack(parts), 2) <= math.sqrt(max(problem.p_max_w[n], 0.0)))

        # cache-adjusted fronthaul
        for n in range(problem.n_bs):
            terms = [coef[n] * rate_of(s) for s, coef in problem.fronthaul.items() if coef[n] > 0]
            if terms:
                constraints.append(cp.sum(cp.hstack(terms)) <= problem.c_max_se[n])

        # min-rate links
        for g in range(problem.n_groups):
            c = problem.common_owner[g]
            group_rate = self.r_p[g] + self.r_c[c] if c >= 0 and c in self.r_c else self.r_p[g]
            constraints.append(self.r_bar <= group_rate)

        constraints.append(self.r_p >= 0)
        constraints += [r >= 0 for r in self.r_c.values()]
        constraints.append(self.r_bar >= 0)

        self.constraints = constraints
        self.problem = cp.Problem(cp.Maximize(self.r_bar), constraints)

    def load(self, problem: ConicProblem) -> None:
        if problem.structure_key() != self.key:
            raise ValueError("subproblem structure changed; build a new model")
        for row, factor, linear, constant in zip(problem.rows, self.factors, self.linears, self.constants):
            factor.value = row.factor
            linear.value = row.f_real
            constant.value = row.constant


def available_solvers() -> List[str]:
    installed = set(cp.installed_solvers())
    return [name for name in SOLVER_PREFERENCE if name in installed]


def _solver_options(name: str, tol: float, max_iters: int) -> Dict[str, float]:
    if name == "CLARABEL":
        return {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol, "max_iter": max_iters}
    if name == "ECOS":
        return {"abstol": tol, "reltol": tol, "feastol": tol, "max_iters": max_iters}
    # first-order solver needs far more iterations
    return {"eps_abs": tol, "eps_rel": tol, "max_iters": max(max_iters, 100) * 100}


def kkt_residuals(model: SubproblemModel) -> KktResiduals:
    """Primal violation, dual-sign violation and complementary slackness of the last solve."""
    primal = dual = gap = 0.0
    for con in model.constraints:
        viol = con.violation()
        primal = max(primal, float(np.max(np.atleast_1d(viol), initial=0.0)))
        lam = con.dual_value
        if lam is None or isinstance(lam, list):
            continue
        lam = np.asarray(lam, dtype=float)
        slack = -np.asarray(con.expr.value, dtype=float)
        dual = max(dual, float(max(0.0, -lam.min(initial=0.0))))
        gap += float(np.sum(lam * slack))
    return KktResiduals(primal=primal, dual=dual, gap=abs(gap))


def _map_status(status: str, primal: float) -> str:
    if status == cp.OPTIMAL:
        return "optimal"
    if status == cp.OPTIMAL_INACCURATE:
        return "optimal" if primal <= 1e-6 else "numerical_failure"
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return "infeasible"
    if status == cp.USER_LIMIT:
        return "max_iters"
    return "numerical_failure"


def _extract(problem: ConicProblem, model: SubproblemModel, template: Beamformers) -> Tuple[Beamformers, RateAllocation]:
    dims = problem.dims
    w_p = np.zeros((problem.n_groups, dims), dtype=complex)
    w_c = np.zeros((problem.n_common, dims), dtype=complex)
    for s, idx in problem.support.items():
        x = np.asarray(model.x[s].value, dtype=float)
        n = idx.size
        target = w_p if s[0] == "p" else w_c
        target[s[1], idx] = x[:n] + 1j * x[n:]

    bw = problem.bandwidth_hz
    r_c = np.zeros(problem.n_common)
    for c, var in model.r_c.items():
        r_c[c] = max(float(var.value), 0.0)
    rates = RateAllocation(
        r_bar=bw * max(float(model.r_bar.value), 0.0),
        r_p=bw * np.clip(np.asarray(model.r_p.value, dtype=float), 0.0, None),
        r_c=bw * r_c,
    )
    return template.with_vectors(w_p, w_c).apply_masks(), rates


def solve(
    problem: ConicProblem,
    template: Beamformers,
    tol: float = 1e-7,
    max_iters: int = 200,
    model: Optional[SubproblemModel] = None,
) -> Tuple[SubproblemSolution, SubproblemModel]:
    """Solve one subproblem; returns the solution and the (possibly reused) model.

    Solvers are tried in preference order until one reports a usable status.
    """
    if model is None or model.key != problem.structure_key():
        model = SubproblemModel(problem)
    model.load(problem)

    empty = KktResiduals(primal=math.inf, dual=math.inf, gap=math.inf)
    solvers = available_solvers()
    if not solvers:
        return SubproblemSolution("numerical_failure", None, None, 0.0, empty, message="no conic solver installed"), model

    last = SubproblemSolution("numerical_failure", None, None, 0.0, empty)
    for name in solvers:
        try:
            model.problem.solve(solver=name, **_solver_options(name, tol, max_iters))
        except cp.error.SolverError as e:
            last = SubproblemSolution("numerical_failure", None, None, 0.0, empty, solver=name, message=str(e))
            continue

        raw = model.problem.status
        if raw in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            residuals = kkt_residuals(model)
            status = _map_status(raw, residuals.primal)
            if status == "optimal":
                w, rates = _extract(problem, model, template)
                return SubproblemSolution(status, w, rates, rates.r_bar, residuals, solver=name), model
            last = SubproblemSolution(status, None, None, 0.0, residuals, solver=name, message=raw)
            continue
        last = SubproblemSolution(_map_status(raw, math.inf), None, None, 0.0, empty, solver=name, message=raw)
        if last.status == "infeasible":
            break
    return last, model


# ---------- Independent check ----------

def row_violations(problem: ConicProblem, w: Beamformers, rates: RateAllocation) -> np.ndarray:
    """Left-hand side of every rate row evaluated in complex arithmetic (≤ 0 when satisfied)."""
    out = np.zeros(len(problem.rows))
    bw = problem.bandwidth_hz
    for i, row in enumerate(problem.rows):
        vec = lambda s: w.w_p[s[1]] if s[0] == "p" else w.w_c[s[1]]
        quad = sum(float(np.real(np.vdot(vec(s), row.y_bar @ vec(s)))) for s in row.terms)
        lin = float(np.real(np.vdot(row.f_bar, vec(row.stream))))
        rate = rates.r_p[row.stream[1]] if row.stream[0] == "p" else rates.r_c[row.stream[1]]
        out[i] = quad - 2.0 * lin + LN2 * rate / bw + row.constant
    return out


def dump_problem(model: SubproblemModel, path: Path, solver: Optional[str] = None) -> Path:
    """Write the canonical conic form as plain text.

    Sections: VARIABLES (name size), CONES (solver cone dims), OBJECTIVE c, then
    A as (row col value) triplets and b, one entry per line.
    """
    solver = solver or (available_solvers() or ["SCS"])[0]
    data, _, _ = model.problem.get_problem_data(solver)
    a = data["A"].tocoo()
    lines = ["VARIABLES"]
    lines += [f"{var.name()} {var.size}" for var in model.problem.variables()]
    lines.append("CONES")
    lines.append(str(data.get("dims", "")))
    lines.append(f"OBJECTIVE {len(data['c'])}")
    lines += [f"{v:.17g}" for v in data["c"]]
    lines.append(f"A {a.shape[0]} {a.shape[1]} {a.nnz}")
    lines += [f"{r} {c} {v:.17g}" for r, c, v in zip(a.row, a.col, a.data)]
    lines.append(f"B {len(data['b'])}")
    lines += [f"{v:.17g}" for v in data["b"]]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
