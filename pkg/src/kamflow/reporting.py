"""Bound-check reports: the record type every inequality check in the package emits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

#: slack accepted on top of the (budget-adjusted) right-hand side
AUDIT_TOL = 1e-9


def _plain(obj):
    """Recursively coerce numpy scalars/sequences into JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return obj.item()
    return obj


@dataclass(frozen=True)
class BoundReport:
    """One verified inequality instance: lhs <= rhs (+ measured budget).

    ``check`` is a stable identifier ("cauchy_mixed", "tail_cutoff", ...),
    ``params`` carries the instance context (widths, step index, ...), and
    ``budget`` is the documented measurement slack (aliasing / truncation
    mass) that is added to the right-hand side before comparing.
    """

    check: str
    lhs: float
    rhs: float
    params: dict = field(default_factory=dict)
    budget: float = 0.0

    @property
    def ratio(self):
        denom = self.rhs + self.budget
        if self.lhs == 0.0:
            return 0.0
        if denom == 0.0:
            return float("inf")
        return self.lhs / denom

    def passed(self, tol=AUDIT_TOL):
        return bool(self.ratio <= 1.0 + tol)

    def to_dict(self):
        return {
            "check": self.check,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "ratio": float(self.ratio),
            "budget": float(self.budget),
            "passed": self.passed(),
            "params": _plain(self.params),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            check=d["check"],
            lhs=float(d["lhs"]),
            rhs=float(d["rhs"]),
            params=dict(d.get("params", {})),
            budget=float(d.get("budget", 0.0)),
        )


def write_reports_csv(reports, path):
    """Flat CSV of bound reports (one row per inequality instance)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "nu", "lhs", "rhs", "ratio", "budget", "passed", "params"])
        for rep in reports:
            nu = rep.params.get("nu", "")
            writer.writerow(
                [
                    rep.check,
                    nu,
                    repr(rep.lhs),
                    repr(rep.rhs),
                    repr(rep.ratio),
                    repr(rep.budget),
                    rep.passed(),
                    json.dumps(rep.params, sort_keys=True),
                ]
            )
