"""Frequency-vector analysis: small-divisor extrema, empirical diophantine
constants, and the accumulated small-divisor sum estimate.

Everything enumerates the l1 ball exhaustively (no lattice shortcuts); at desk
scale (|k| <= 512, n <= 3) this is cheap and removes a correctness risk.
Divisors <k, omega> are computed in compensated arithmetic because the
near-resonant ones lose relative precision exactly where they matter most.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ResonanceError
from .numutil import lattice_dot
from .reporting import BoundReport

#: |<k, omega>| below this multiple of |k| * max|omega_i| is flagged as resonant
RESONANCE_REL = 1e-14

#: exhaustive-enumeration ceiling (per the dimension guard in half_ball)
ENUMERATION_LIMIT = 512


def half_ball(n, K, chunk_hint=None):
    """Canonical representatives of the punctured l1 ball |k| <= K in Z^n.

    Yields integer arrays (chunks) covering one of each +-k pair: the first
    nonzero coordinate is positive.  Chunked by the leading coordinate so the
    n = 3 ball never materializes at once.
    """
    if K < 1:
        raise PreconditionError("enumeration needs K >= 1 (empty index set)")
    if n > 3 and K > 64:
        raise PreconditionError("exhaustive enumeration is limited to n <= 3 beyond K = 64")
    if K > ENUMERATION_LIMIT:
        raise PreconditionError(f"enumeration limited to |k| <= {ENUMERATION_LIMIT}")
    if n == 1:
        yield np.arange(1, K + 1, dtype=np.int64).reshape(-1, 1)
        return

    def rest(budget, dims):
        """All integer vectors of length dims with l1 norm <= budget."""
        if dims == 1:
            return np.arange(-budget, budget + 1, dtype=np.int64).reshape(-1, 1)
        out = []
        for lead in range(-budget, budget + 1):
            tail = rest(budget - abs(lead), dims - 1)
            lead_col = np.full((tail.shape[0], 1), lead, dtype=np.int64)
            out.append(np.hstack([lead_col, tail]))
        return np.vstack(out)

    # leading coordinate positive
    for lead in range(1, K + 1):
        tail = rest(K - lead, n - 1)
        lead_col = np.full((tail.shape[0], 1), lead, dtype=np.int64)
        yield np.hstack([lead_col, tail])
    # leading coordinate zero: recurse on the remaining dims
    for sub in half_ball(n - 1, K):
        zero_col = np.zeros((sub.shape[0], 1), dtype=np.int64)
        yield np.hstack([zero_col, sub])


def _resonance_guard(ks, divisors, omega):
    scale = RESONANCE_REL * np.abs(ks).sum(axis=1) * np.max(np.abs(omega))
    bad = np.abs(divisors) < scale
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise ResonanceError(
            f"exact resonance within floating-point trust at k={tuple(ks[j])}", k=ks[j]
        )


def min_divisor(omega, K):
    """(min |<k, omega>|, arg-min k) over the punctured l1 ball of radius K."""
    omega = np.asarray(omega, dtype=np.float64)
    best = math.inf
    best_k = None
    for ks in half_ball(omega.shape[0], K):
        divs = lattice_dot(ks, omega)
        _resonance_guard(ks, divs, omega)
        j = int(np.abs(divs).argmin())
        if abs(divs[j]) < best:
            best = abs(divs[j])
            best_k = tuple(int(x) for x in ks[j])
    return best, best_k


def omega_max(omega, K):
    """Largest inverse divisor max_{0 < |k| <= K} |<k, omega>|^{-1}."""
    smallest, _ = min_divisor(omega, K)
    return 1.0 / smallest


def omega_table(omega, Ks):
    """{K: Omega(K)} for the given probe orders (nondecreasing in K)."""
    return {int(K): omega_max(omega, int(K)) for K in sorted(set(int(K) for K in Ks))}


def fit_alpha(omega, K_max, tau):
    """Largest alpha with |<k, omega>| >= alpha |k|^{-tau} on the probed ball."""
    omega = np.asarray(omega, dtype=np.float64)
    best = math.inf
    best_k = None
    for ks in half_ball(omega.shape[0], K_max):
        divs = lattice_dot(ks, omega)
        _resonance_guard(ks, divs, omega)
        prod = np.abs(divs) * np.abs(ks).sum(axis=1).astype(np.float64) ** tau
        j = int(prod.argmin())
        if prod[j] < best:
            best = float(prod[j])
            best_k = tuple(int(x) for x in ks[j])
    return best, best_k


def estimate_alpha_tau(omega, K_max, tau=None):
    """Fit (alpha, tau) on the probed ball; tau defaults to the critical n - 1."""
    omega = np.asarray(omega, dtype=np.float64)
    if tau is None:
        tau = float(len(omega) - 1)
    alpha, _ = fit_alpha(omega, K_max, tau)
    return alpha, tau


def ruessmann_check(omega, K):
    """Accumulated divisor sum: sum_{0<|k|<=K} <k,omega>^{-2} <= 2^{n+2} Omega(K)^2."""
    omega = np.asarray(omega, dtype=np.float64)
    n = omega.shape[0]
    total = 0.0
    smallest = math.inf
    for ks in half_ball(n, K):
        divs = lattice_dot(ks, omega)
        _resonance_guard(ks, divs, omega)
        total += 2.0 * float((1.0 / divs**2).sum())  # both k and -k contribute
        smallest = min(smallest, float(np.abs(divs).min()))
    rhs = 2.0 ** (n + 2) / smallest**2
    return BoundReport("ruessmann_sum", total, rhs, {"K": K, "n": n})


@dataclass(frozen=True)
class FrequencyData:
    """A frequency vector with its measured diophantine data."""

    omega: tuple
    tau: float
    alpha: float
    table: dict = field(default_factory=dict)  # K -> Omega(K)

    @classmethod
    def analyze(cls, omega, tau=None, K_probe=64, table_Ks=None):
        omega = tuple(float(w) for w in omega)
        alpha, tau = estimate_alpha_tau(omega, K_probe, tau)
        if table_Ks is None:
            table_Ks = []
            K = 1
            while K <= K_probe:
                table_Ks.append(K)
                K *= 2
        table = omega_table(omega, table_Ks)
        return cls(omega=omega, tau=tau, alpha=alpha, table=table)

    @property
    def n(self):
        return len(self.omega)

    def omega_bound(self, K):
        """Omega(K): the table value when probed, else the fitted power bound K^tau/alpha."""
        K = int(K)
        if K in self.table:
            return self.table[K]
        return float(K) ** self.tau / self.alpha

    def normalized(self, K_probe=None):
        """Rescale time so the fitted constant becomes 1 on the probed range.

        omega -> omega/alpha turns |<k, omega>| >= alpha |k|^{-tau} into
        |<k, omega'>| >= |k|^{-tau}; the minimizing k at every K is unchanged.
        """
        if self.alpha == 1.0:
            return self
        scaled = tuple(w / self.alpha for w in self.omega)
        if K_probe is None:
            K_probe = max(self.table) if self.table else 64
        alpha, tau = estimate_alpha_tau(scaled, K_probe, self.tau)
        table = omega_table(scaled, list(self.table)) if self.table else {}
        return FrequencyData(omega=scaled, tau=tau, alpha=alpha, table=table)

    def to_dict(self):
        return {
            "omega": list(self.omega),
            "tau": self.tau,
            "alpha": self.alpha,
            "Omega_table": {str(k): v for k, v in sorted(self.table.items())},
        }
