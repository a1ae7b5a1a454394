"""Independent verification of a produced conjugacy.

Nothing here reuses the iteration's spectral pipeline: the conjugacy residual
is measured pointwise on a grid with the perturbation evaluated by direct
Fourier summation at the mapped points, and the dynamical check integrates
the modified flow with an adaptive Runge-Kutta scheme and compares against
the transported linear flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .fourier import TorusMapField, TorusTransform, field_from_dict, grid_points
from .reporting import AUDIT_TOL, BoundReport


@dataclass(frozen=True)
class ResidualReport:
    sup: float
    mean: float
    grid: int

    def to_dict(self):
        return {"sup": self.sup, "mean": self.mean, "grid": self.grid}


def conjugacy_residual(Y, transform, P, omega, grid_points_per_axis=64, residual_field=None):
    """Pointwise conjugacy defect R(x) = (P(Psi(x)) - Y) - D(Psi_hat)(x) . omega.

    A perfect conjugacy of the modified field to the constant flow makes R
    vanish identically (the constant omega cancels exactly, so R is computed
    in displacement form and its floating floor scales with the perturbation,
    not with omega).  When ``residual_field`` Q is supplied the measured
    identity becomes the telescoping one: R - D(Psi)(x) . Q(x).
    """
    n = len(omega)
    omega = np.asarray(omega, dtype=np.float64)
    shape = (int(grid_points_per_axis),) * n
    pts = grid_points(shape)
    mapped = transform.map_points(pts)
    p_vals = np.real(P.evaluate(mapped))

    disp = transform.displacement
    dpsi_hat = disp.jacobian()
    flow = np.zeros(shape + (n,))
    for i in range(n):
        acc = np.zeros(shape)
        for j in range(n):
            e = dpsi_hat.entries[i][j]
            if e.m:
                acc += np.real(e.sample_grid(shape)) * omega[j]
        flow[..., i] = acc

    res = p_vals - np.asarray(Y, dtype=np.float64) - flow
    if residual_field is not None and not residual_field.is_zero:
        # telescoping form: subtract (D Psi)(x) . Q(x) = Q + D(Psi_hat) . Q
        q_vals = np.stack(
            [np.real(c.sample_grid(shape)) for c in residual_field.components], axis=-1
        )
        extra = q_vals.copy()
        for i in range(n):
            for j in range(n):
                e = dpsi_hat.entries[i][j]
                if e.m:
                    extra[..., i] += np.real(e.sample_grid(shape)) * q_vals[..., j]
        res = res - extra

    mags = np.abs(res)
    return ResidualReport(sup=float(mags.max()), mean=float(mags.mean()), grid=int(grid_points_per_axis))


def residual_floor(P, transform, omega):
    """Roundoff floor of the residual measurement.

    The grid evaluation sums the perturbation's coefficient mass and the
    transported flow terms; below a small multiple of eps times that mass the
    measured residual is indistinguishable from rounding noise.
    """
    eps = float(np.finfo(float).eps)
    p_mass = max(float(np.abs(c.val).sum()) if c.m else 0.0 for c in P.components)
    jac = transform.displacement.jacobian()
    j_mass = max(
        sum(float(np.abs(e.val).sum()) if e.m else 0.0 for e in row) for row in jac.entries
    )
    omega_l1 = float(np.abs(np.asarray(omega)).sum())
    return 64.0 * eps * (p_mass + j_mass * omega_l1)


@dataclass(frozen=True)
class OrbitReport:
    max_distance: float
    t_final: float
    integrator_tol: float
    samples: int

    def to_dict(self):
        return {
            "max_distance": self.max_distance,
            "t_final": self.t_final,
            "integrator_tol": self.integrator_tol,
            "samples": self.samples,
        }


def _torus_distance(a, b):
    d = np.mod(a - b + np.pi, 2.0 * np.pi) - np.pi
    return np.abs(d)


def orbit_conjugacy_check(Y, transform, P, omega, x0, t_final=100.0, integrator_tol=1e-12, samples=200):
    """Integrate xdot = omega + P(x) - Y from Psi(x0) and compare with Psi(x0 + omega t).

    Adaptive high-order Runge-Kutta with per-step relative tolerance; the
    comparison distance is per-coordinate on the torus (shorter arc).
    """
    omega = np.asarray(omega, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    start = transform.map_points(x0[None, :])[0]
    y_vec = np.asarray(Y, dtype=np.float64)

    def rhs(_t, x):
        return omega + np.real(P.evaluate(x[None, :]))[0] - y_vec

    t_eval = np.linspace(0.0, t_final, samples)
    sol = solve_ivp(
        rhs,
        (0.0, t_final),
        start,
        method="DOP853",
        rtol=integrator_tol,
        atol=integrator_tol,
        t_eval=t_eval,
        dense_output=False,
    )
    if not sol.success:
        raise ArithmeticError(f"orbit integration failed: {sol.message}")
    reference = transform.map_points(x0[None, :] + t_eval[:, None] * omega[None, :])
    dist = _torus_distance(sol.y.T, reference)
    return OrbitReport(
        max_distance=float(dist.max()),
        t_final=float(t_final),
        integrator_tol=float(integrator_tol),
        samples=int(samples),
    )


@dataclass
class AuditReport:
    rows: list = field(default_factory=list)
    all_pass: bool = True

    def to_dict(self):
        return {"all_pass": self.all_pass, "rows": self.rows}

    def table(self):
        lines = [f"{'check':<28} {'nu':>4} {'lhs':>13} {'rhs':>13} {'ratio':>10} pass"]
        for row in self.rows:
            lines.append(
                f"{row['check']:<28} {str(row['params'].get('nu', '')):>4} "
                f"{row['lhs']:>13.5e} {row['rhs']:>13.5e} {row['ratio']:>10.3e} "
                f"{'ok' if row['passed'] else 'FAIL'}"
            )
        return "\n".join(lines)


def lemma_audit(reports, tol=AUDIT_TOL):
    """Aggregate bound reports into one pass/fail table.

    Accepts BoundReport objects or their dict form (as stored in result
    files); overall pass means every ratio stays within 1 + tol beyond its
    documented budget.
    """
    rows = []
    all_pass = True
    for rep in reports:
        if isinstance(rep, dict):
            rep = BoundReport.from_dict(rep)
        ok = rep.passed(tol)
        all_pass &= ok
        d = rep.to_dict()
        d["passed"] = ok
        rows.append(d)
    return AuditReport(rows=rows, all_pass=all_pass)


def load_result_fields(result_dict):
    """Rebuild (Y, transform, P, omega, snapshots) from a stored result dict."""
    Y = np.asarray(result_dict["Y"], dtype=np.float64)
    transform = TorusTransform(field_from_dict(result_dict["psi_hat"]))
    P = field_from_dict(result_dict["perturbation"])
    omega = tuple(result_dict["omega"])
    snapshots = []
    for snap in result_dict.get("snapshots", []):
        snapshots.append(
            {
                "nu": int(snap["nu"]),
                "Y": np.asarray(snap["Y"], dtype=np.float64),
                "transform": TorusTransform(field_from_dict(snap["psi_hat"])),
            }
        )
    return Y, transform, P, omega, snapshots
