"""The full conjugacy iteration: geometric schedule, polynomial approximants,
the bound ledger, step chaining, and convergence detection.

The schedule fixes K_nu = b^nu, s_nu = r/b^nu (so s_nu K_nu = r for every nu)
and the per-step inversion gain b^{nu(tau+1)}; the analyticity budget r is the
smallest value making the per-step decay factor theta = 4^n e^{-r/2} at most
1/(2 b^{tau+1}).  The ledger tracks the guaranteed bounds

    eps_nu  = B sum_{mu<=nu} theta^{nu-mu} rho_mu / m_mu,   B = 2 e^r,
    delta_nu = prod_{mu<nu} (1 + 4 gain_mu eps_mu) - 1,

against which every measured residual norm is compared.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .diophantine import FrequencyData, half_ball
from .errors import ConfigurationError, PreconditionError, StepPreconditionError
from .fourier import (
    PRUNE_REL,
    FourierSeries,
    TorusMapField,
    TorusTransform,
    field_to_dict,
    pullback,
)
from .norms import block_increment_check, norm_block, norm_exp, norm_m, norm_mean_l2
from .reporting import BoundReport
from .step import StepInput, run_step

#: pre-run smallness gate: 2 A B eps must stay below this
GATE_LIMIT = 1.0 / 32.0


@dataclass(frozen=True)
class Schedule:
    """Geometric truncation/width schedule with its ledger constants.

    b     -- block base (>= 2; the ledger recursion needs b >= 4)
    tau   -- diophantine exponent the gains are calibrated to
    r     -- analyticity budget; s_nu K_nu = r for every nu
    theta -- per-step decay factor 4^n e^{-r/2}
    B     -- ledger scale 2 e^r
    A     -- sup of gain_nu / m_nu (= b^{tau+1} for the power weights)
    """

    n: int
    b: int
    tau: float
    r: float
    theta: float
    B: float
    A: float
    nu_max: int
    K: tuple
    s: tuple
    gain: tuple
    m: tuple

    def m_of(self, idx):
        """Mode weights m_k = |k|^{tau+1} (l1 order)."""
        ell = np.abs(np.asarray(idx, dtype=np.float64)).sum(axis=-1)
        return ell ** (self.tau + 1.0)

    def to_dict(self):
        return {
            "n": self.n,
            "b": self.b,
            "tau": self.tau,
            "r": self.r,
            "theta": self.theta,
            "B": self.B,
            "A": self.A,
            "nu_max": self.nu_max,
            "K": list(self.K),
            "s": list(self.s),
            "gain": list(self.gain),
            "m": list(self.m),
        }


def build_schedule(n, tau, b=4, nu_max=6, theta_margin=0.0):
    """Fix r from the decay condition and materialize all per-step parameters.

    ``theta_margin`` adds to r beyond the smallest admissible value, shrinking
    theta below its ceiling 1/(2 b^{tau+1}).
    """
    if b < 2 or int(b) != b:
        raise ConfigurationError("block base must be an integer >= 2")
    if tau < n - 1:
        raise ConfigurationError(f"tau must be >= n - 1 = {n - 1}")
    b = int(b)
    if b < 4:
        warnings.warn(
            "block base below 4: the ledger recursion assumes s_{nu+1} <= s_nu/4 "
            "and its guarantees degrade",
            stacklevel=2,
        )
    r = 2.0 * math.log(2.0 * 4.0**n * float(b) ** (tau + 1.0)) + theta_margin
    theta = 4.0**n * math.exp(-r / 2.0)
    B = 2.0 * math.exp(r)
    A = float(b) ** (tau + 1.0)
    K = tuple(b**nu for nu in range(nu_max + 1))
    s = tuple(r / b**nu for nu in range(nu_max + 1))
    gain = tuple(float(b) ** (nu * (tau + 1.0)) for nu in range(nu_max + 1))
    m = tuple(1.0 if nu == 0 else float(K[nu - 1] + 1) ** (tau + 1.0) for nu in range(nu_max + 1))
    return Schedule(
        n=n, b=b, tau=float(tau), r=r, theta=theta, B=B, A=A,
        nu_max=nu_max, K=K, s=s, gain=gain, m=m,
    )


def approximants(P, schedule):
    """Truncation ladder (P_nu, dP_nu) with dP_nu supported on K_{nu-1} < |k| <= K_nu.

    The increments telescope exactly: sum_{mu<=nu} dP_mu = P_nu.  P must have
    zero mean (constants belong to the modifier, not the iteration).
    """
    if np.abs(P.mean()).max() > 0:
        raise PreconditionError("approximants need a zero-mean perturbation")
    out = []
    prev = TorusMapField.zero(P.n)
    for nu in range(schedule.nu_max + 1):
        p_nu = P.project(schedule.K[nu], "low")
        out.append((p_nu, p_nu - prev))
        prev = p_nu
    return out


def ledger_update(eps_prev, rho_next, m_next, schedule):
    """One ledger step: eps_{nu+1} = theta eps_nu + (B/m_{nu+1}) rho_{nu+1}."""
    return schedule.theta * eps_prev + schedule.B / m_next * rho_next


def ledger_eps(rhos, schedule):
    """Closed-form ledger eps_nu = B sum_{mu<=nu} theta^{nu-mu} rho_mu / m_mu."""
    eps = []
    for nu in range(len(rhos)):
        total = 0.0
        for mu in range(nu + 1):
            total += schedule.theta ** (nu - mu) / schedule.m[mu] * rhos[mu]
        eps.append(schedule.B * total)
    return eps


def ledger_delta(eps, schedule):
    """Jacobian ledger delta_nu = prod_{mu<nu} (1 + 4 gain_mu eps_mu) - 1.

    Evaluated as expm1(sum log1p(.)) so tiny factors keep full relative
    accuracy instead of drowning in the 1.0 offsets.
    """
    out = []
    log_prod = 0.0
    for nu in range(len(eps)):
        out.append(math.expm1(log_prod))
        log_prod += math.log1p(4.0 * schedule.gain[nu] * eps[nu])
    return out


def smallness_gate(rhos, schedule):
    """Pre-run gate 2 A B eps <= 1/32 with eps = sum_nu rho_nu.

    Sufficient (with margin) for 4 gain_nu eps_nu <= 1/4 and delta_nu <= 1/7
    along the whole ledger, which keeps every step admissible a priori.
    """
    eps_total = float(sum(rhos))
    value = 2.0 * schedule.A * schedule.B * eps_total
    return BoundReport("smallness_gate", value, GATE_LIMIT, {"eps": eps_total})


# -- fixtures -----------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationReport:
    size: float
    decay_exponent: float
    max_order: int
    norm_rb: float
    eps_m: float
    sub_cn: bool
    shell_decay: dict  # |k| -> max |p_k| |k|^n over the shell


def generate_perturbation(
    n, tau, b, size, decay_exponent, seed, max_order=16, forced_mode=None
):
    """Random real perturbation with the power-law profile
    p_k = size * xi_k * |k|^{-(tau+1)} * (1 + |k|)^{-decay_exponent},
    unit complex xi_k with conjugate symmetry, supported on 0 < |k| <= max_order.

    The report carries |P|_{tau+1,b}, the ledger mass eps = sum_nu |dP_nu|_m,
    and the regularity flag: with this profile |p_k| |k|^n stays bounded away
    from zero precisely when decay_exponent <= n - tau - 1, which marks the
    perturbation as rougher than C^n while |P|_{tau+1,b} stays finite.
    """
    rng = np.random.default_rng(seed)
    comps = []
    if forced_mode is not None:
        k = np.asarray(forced_mode, dtype=np.int64)
        base = FourierSeries(n, np.stack([k, -k]), [0.5 * size, 0.5 * size])
        comps = [base] + [FourierSeries(n) for _ in range(n - 1)]
    else:
        rows = [chunk for chunk in half_ball(n, max_order)]
        half = np.vstack(rows)
        ell = np.abs(half).sum(axis=1).astype(np.float64)
        profile = ell ** (-(tau + 1.0)) * (1.0 + ell) ** (-decay_exponent)
        for _ in range(n):
            phases = rng.uniform(0.0, 2.0 * np.pi, half.shape[0])
            vals = 0.5 * size * profile * np.exp(1j * phases)
            idx = np.vstack([half, -half])
            val = np.concatenate([vals, np.conj(vals)])
            comps.append(FourierSeries(n, idx, val))
    P = TorusMapField(comps)

    m_of = lambda idx: np.abs(np.asarray(idx, dtype=np.float64)).sum(axis=-1) ** (tau + 1.0)
    eps_m = _ledger_mass(P, b, m_of)
    shell = {}
    for c in P.components:
        if c.m == 0:
            continue
        ell = c.l1()
        prof = np.abs(c.val) * ell.astype(np.float64) ** n
        for o in np.unique(ell):
            shell[int(o)] = max(shell.get(int(o), 0.0), float(prof[ell == o].max()))
    report = PerturbationReport(
        size=float(size),
        decay_exponent=float(decay_exponent),
        max_order=int(max_order),
        norm_rb=norm_block(P, tau + 1.0, b),
        eps_m=eps_m,
        sub_cn=bool(decay_exponent <= n - tau - 1.0 + 1e-12),
        shell_decay=shell,
    )
    return P, report


def _ledger_mass(P, b, m_of):
    """eps = sum over base-b blocks of the m-weighted l2 mass (max over components)."""
    total = 0.0
    top = P.order
    nu = 0
    lo = 0
    while True:
        hi = b**nu
        blocks = []
        for c in P.components:
            if c.m == 0:
                blocks.append(0.0)
                continue
            ell = c.l1()
            keep = (ell > lo) & (ell <= hi)
            sub = FourierSeries(c.n, c.idx[keep], c.val[keep])
            blocks.append(norm_m(sub, m_of) if sub.m else 0.0)
        total += max(blocks)
        if hi >= top:
            break
        lo = hi
        nu += 1
    return total


def size_for_gate(unit_eps, schedule, fraction=0.5):
    """Scale factor putting 2 A B eps at ``fraction`` of the gate limit."""
    if unit_eps <= 0:
        raise ConfigurationError("unit perturbation has no ledger mass")
    return fraction * GATE_LIMIT / (2.0 * schedule.A * schedule.B * unit_eps)


# -- the iteration -------------------------------------------------------------


@dataclass
class ConjugacyState:
    """Immutable snapshot of the iteration before step nu."""

    nu: int
    Y: np.ndarray
    transform: TorusTransform
    residual_norm: float
    eps_bound: float
    residual: TorusMapField = None
    truncated: TorusMapField = None  # the approximant P_nu this state conjugates


@dataclass
class RunResult:
    omega: tuple
    schedule: Schedule
    Y: np.ndarray
    transform: TorusTransform
    residual: TorusMapField
    perturbation: TorusMapField
    ledger: list = field(default_factory=list)       # per-nu dict rows
    reports: list = field(default_factory=list)      # BoundReports
    snapshots: list = field(default_factory=list)    # ConjugacyState
    stopped: str = "nu_max"
    budget: float = 0.0
    initial_size: float = 0.0

    def to_dict(self, include_snapshots=True):
        out = {
            "schema_version": 1,
            "omega": list(self.omega),
            "schedule": self.schedule.to_dict(),
            "Y": [float(y) for y in self.Y],
            "psi_hat": field_to_dict(self.transform.displacement),
            "residual_final": field_to_dict(self.residual),
            "perturbation": field_to_dict(self.perturbation),
            "ledger": self.ledger,
            "reports": [r.to_dict() for r in self.reports],
            "stopped": self.stopped,
            "budget": self.budget,
            "initial_size": self.initial_size,
        }
        if include_snapshots:
            out["snapshots"] = [
                {
                    "nu": st.nu,
                    "Y": [float(y) for y in st.Y],
                    "psi_hat": field_to_dict(st.transform.displacement),
                    "residual_norm": st.residual_norm,
                    "eps_bound": st.eps_bound,
                }
                for st in self.snapshots
            ]
        return out


def run(
    P,
    freq: FrequencyData,
    schedule: Schedule,
    q_floor_rel=1e-14,
    fp_tol_rel=1e-13,
    max_iter=60,
    grid_factor=2,
    prune_rel=PRUNE_REL,
    check_identity=True,
):
    """Drive the step over the schedule, starting from Y = mean(P), Psi = I.

    The constant part of P is absorbed into the modifier up front; the
    oscillatory part feeds the truncation ladder.  Each cycle consumes
    (Psi_nu, Q_nu) at (K_nu, s_nu), produces (Z_nu, Phi_nu, Q_nu^+), and
    chains  Y += Z,  Psi <- Psi o Phi,  Q <- Q^+ + Psi^* dP_{nu+1}.
    Raises a structured precondition error (carrying nu) when the gate or a
    step rejects; records every bound check along the way.
    """
    if freq.n != P.n:
        raise PreconditionError("frequency/perturbation dimension mismatch")
    if freq.alpha < 1.0 - 1e-9:
        raise PreconditionError(
            "frequency data must be time-normalized (alpha >= 1) so the schedule "
            "gains dominate the divisors; call FrequencyData.normalized() first"
        )
    omega = freq.omega
    n = P.n

    Y = np.real(P.mean()).astype(np.float64)
    P_osc = P - TorusMapField.constant(P.mean())
    ladder = approximants(P_osc, schedule)
    rhos = [norm_m(dp, schedule.m_of) if not dp.is_zero else 0.0 for _, dp in ladder]
    gate = smallness_gate(rhos, schedule)
    reports = [gate]
    if not gate.passed():
        raise StepPreconditionError(
            f"smallness gate failed: 2*A*B*eps = {gate.lhs:.4g} > {gate.rhs:.4g}",
            nu=0,
            bound=gate,
        )
    eps = ledger_eps(rhos, schedule)
    deltas = ledger_delta(eps, schedule)

    transform = TorusTransform.identity(n)
    Q = ladder[0][1]
    initial_size = norm_mean_l2(Q, 0.0)
    q_floor = q_floor_rel * max(initial_size, 1e-300)

    ledger_rows = []
    snapshots = []
    budget = 0.0
    stopped = "nu_max"

    for nu in range(schedule.nu_max + 1):
        K, s, gain = schedule.K[nu], schedule.s[nu], schedule.gain[nu]
        q_meas = norm_mean_l2(Q, s)
        dpsi_meas = norm_exp(transform.displacement.jacobian(), s)
        reports.append(
            BoundReport("ledger_domination", q_meas, eps[nu], {"nu": nu, "s": s})
        )
        reports.append(
            BoundReport("jacobian_ledger", dpsi_meas, deltas[nu], {"nu": nu, "s": s})
        )
        if K in freq.table:
            reports.append(
                BoundReport(
                    "gain_dominates_divisors", freq.table[K], gain / K, {"nu": nu, "K": K}
                )
            )
        dp_nu = ladder[nu][1]
        if not dp_nu.is_zero:
            reports.append(
                block_increment_check(dp_nu, s, schedule.m[nu], schedule.m_of, nu=nu)
            )
        snapshots.append(
            ConjugacyState(
                nu=nu,
                Y=Y.copy(),
                transform=transform,
                residual_norm=q_meas,
                eps_bound=eps[nu],
                residual=Q,
                truncated=ladder[nu][0],
            )
        )

        inp = StepInput(
            transform=transform,
            residual=Q,
            omega=omega,
            K=K,
            s=s,
            gain=gain,
            nu=nu,
            fp_tol=fp_tol_rel * max(4.0 * gain * q_meas, 1e-280),
            max_iter=max_iter,
            grid_factor=grid_factor,
            prune_rel=prune_rel,
        )
        out = run_step(inp, check_identity=check_identity)
        reports.extend(out.reports)
        budget += out.diagnostics.get("discarded", 0.0) + out.diagnostics.get("solve_residual", 0.0)

        old_jac = transform.displacement.jacobian()
        phi_transform = TorusTransform(out.displacement)
        transform, comp_rep = transform.compose_inner(
            phi_transform, with_report=True, grid_factor=grid_factor, prune_rel=prune_rel
        )
        transform = TorusTransform(transform.displacement.symmetrized())
        budget += comp_rep.discarded
        Y = Y + out.modifier

        new_jac = transform.displacement.jacobian()
        jac_step = norm_exp(new_jac - old_jac, 0.0)
        reports.append(
            BoundReport("modifier_increment", float(np.abs(out.modifier).max()), 4.0 * eps[nu], {"nu": nu})
        )
        reports.append(
            BoundReport("jacobian_increment", jac_step, 8.0 * gain * eps[nu], {"nu": nu})
        )

        row = {
            "nu": int(nu),
            "K": int(K),
            "s": float(s),
            "gain": float(gain),
            "m_nu": float(schedule.m[nu]),
            "rho": float(rhos[nu]),
            "eps_bound": float(eps[nu]),
            "q_measured": float(q_meas),
            "delta_bound": float(deltas[nu]),
            "dpsi_measured": float(dpsi_meas),
            "z_sup": float(np.abs(out.modifier).max()),
            "jacobian_step": float(jac_step),
            "iterations": int(out.diagnostics["iterations"]),
            "contraction_max": float(max(out.diagnostics["contraction_factors"], default=0.0)),
            "fp_residual": float(out.diagnostics["fp_residual"]),
            "solve_residual": float(out.diagnostics.get("solve_residual", 0.0)),
            "discarded": float(out.diagnostics.get("discarded", 0.0)),
        }
        for rep in out.reports:
            if rep.check == "step_conjugacy_identity":
                row["identity_sup"] = rep.lhs
                row["identity_budget"] = rep.budget
        ledger_rows.append(row)

        Q = out.residual_next
        if nu + 1 <= schedule.nu_max:
            dp_next = ladder[nu + 1][1]
            if not dp_next.is_zero:
                moved, pull_rep = pullback(
                    dp_next,
                    transform,
                    s=schedule.s[nu + 1],
                    out_cap=2 * schedule.K[nu + 1],
                    with_report=True,
                    grid_factor=grid_factor,
                    prune_rel=prune_rel,
                )
                budget += pull_rep.discarded
                Q = Q + moved.symmetrized()
        if norm_mean_l2(Q, 0.0) < q_floor:
            stopped = "q_floor"
            # keep the post-step state as the final snapshot and stop early
            if nu < schedule.nu_max:
                break

    snapshots.append(
        ConjugacyState(
            nu=len(snapshots),
            Y=Y.copy(),
            transform=transform,
            residual_norm=norm_mean_l2(Q, 0.0),
            eps_bound=eps[-1] * schedule.theta,
            residual=Q,
            truncated=ladder[-1][0],
        )
    )
    return RunResult(
        omega=tuple(omega),
        schedule=schedule,
        Y=Y,
        transform=transform,
        residual=Q,
        perturbation=P,
        ledger=ledger_rows,
        reports=reports,
        snapshots=snapshots,
        stopped=stopped,
        budget=budget,
        initial_size=initial_size,
    )
