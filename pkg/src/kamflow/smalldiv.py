"""Inverting the flow derivative on mean-zero trigonometric polynomials.

The equation d_omega phi = f (d_omega = sum_i omega_i d_i) has, for
nonresonant omega and mean-zero polynomial f, the unique mean-zero solution
with coefficients f_k / (i <k, omega>).  This module provides that diagonal
inverse plus the norm bounds the conjugacy step relies on: the solution bound
through the largest inverse divisor, and the width-shrink estimate for
high-frequency tails.
"""

from __future__ import annotations

import math

import numpy as np

from .diophantine import RESONANCE_REL
from .errors import PreconditionError, ResonanceError
from .fourier import FourierSeries, TorusMapField, partial_derivative, project
from .norms import log_weight, norm_exp, norm_mean_l2
from .numutil import lattice_dot
from .reporting import BoundReport


def solve_cohomological(f, omega, K=None):
    """Solve d_omega phi = f coefficientwise: phi_k = f_k / (i <k, omega>).

    ``f`` must have zero constant term and (when K is given) order <= K.
    The result has zero mean and satisfies the equation exactly at the
    coefficient level, up to one rounding per coefficient.
    """
    if isinstance(f, TorusMapField):
        return TorusMapField([solve_cohomological(c, omega, K) for c in f.components])
    if f.m == 0:
        return f
    ell = f.l1()
    if (ell == 0).any() and abs(f.val[ell == 0][0]) > 0:
        raise PreconditionError("right-hand side must have zero constant term")
    if K is not None and f.order > K:
        raise PreconditionError(f"right-hand side order {f.order} exceeds K={K}")
    keep = ell > 0
    idx = f.idx[keep]
    val = f.val[keep]
    omega = np.asarray(omega, dtype=np.float64)
    divs = lattice_dot(idx, omega)
    scale = RESONANCE_REL * np.abs(idx).sum(axis=1) * np.max(np.abs(omega))
    bad = np.abs(divs) < scale
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise ResonanceError(f"resonant divisor at k={tuple(idx[j])}", k=idx[j])
    return FourierSeries(f.n, idx, val / (1j * divs))


def inversion_bound_check(f, omega, s, K):
    """Solution bound |L f|_s <= C Omega |||f|||_s with C = 2^n e^{sK},
    Omega the largest inverse divisor up to order K."""
    from .diophantine import omega_max

    sol = solve_cohomological(f, omega, K)
    n = f.n
    Om = omega_max(omega, K)
    lhs = norm_exp(sol, s)
    rhs = 2.0**n * math.exp(s * K) * Om * norm_mean_l2(f, s)
    return BoundReport("small_divisor_bound", lhs, rhs, {"s": s, "K": K, "n": n})


def cutoff_check(f_tail, s, alpha, K):
    """Width-shrink for tails: |||f|||_{alpha s} <= alpha^{-n/2} e^{(alpha-1)sK} |||f|||_s
    for f supported on |k| >= K (the boundary shell is included)."""
    if not (0 < alpha <= 1):
        raise PreconditionError("need 0 < alpha <= 1")
    if f_tail.m and int(f_tail.l1().min()) < K:
        raise PreconditionError(f"tail series carries modes below order {K}")
    n = f_tail.n
    lhs = norm_mean_l2(f_tail, alpha * s)
    rhs = alpha ** (-n / 2.0) * math.exp((alpha - 1.0) * s * K) * norm_mean_l2(f_tail, s)
    return BoundReport("tail_cutoff", lhs, rhs, {"s": s, "alpha": alpha, "K": K, "n": n})


def scaled_inversion_check(f, omega, s, K, gain, nu=None):
    """Geometry-adapted solution bound used by the scheme's schedule:

        max(K |L f|_s, |D(L f)|_s) <= 2^n e^{sK} * gain * |||f|||_s

    valid whenever Omega(K) <= gain / K (the schedule guarantees this for its
    per-step gain).  The derivative norm is the row-sum over partials.
    """
    sol = solve_cohomological(f, omega, K)
    n = f.n
    d_norm = sum(norm_exp(partial_derivative(sol, j), s) for j in range(n))
    lhs = max(K * norm_exp(sol, s), d_norm)
    rhs = 2.0**n * math.exp(s * K) * gain * norm_mean_l2(f, s)
    params = {"s": s, "K": K, "gain": gain}
    if nu is not None:
        params["nu"] = nu
    return BoundReport("scaled_inversion", lhs, rhs, params)


def commutes_with_projection(f, omega, K):
    """Measured identity L(Pi f) = Pi(L f) (and likewise for the oscillatory part)."""
    low_first = solve_cohomological(project(f, K, "oscillatory"), omega)
    first_low = project(solve_cohomological(project(f, f.order, "oscillatory"), omega), K, "oscillatory")
    return low_first.max_diff(first_low)
