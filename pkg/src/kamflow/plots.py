"""Figure rendering for run reports.

Each function takes plain result/verify dictionaries (as stored on disk) and
writes one PNG; the CLI report path renders these next to the CSV tables.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_ledger(result, path):
    """Measured residual norms against the ledger bounds, log scale over nu."""
    rows = result["ledger"]
    nus = [row["nu"] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(nus, [max(row["eps_bound"], 1e-300) for row in rows], "o-", label=r"ledger bound $\epsilon_\nu$")
    ax.semilogy(nus, [max(row["q_measured"], 1e-300) for row in rows], "s--", label=r"measured $|\!|\!|Q_\nu|\!|\!|_{s_\nu}$")
    ax.set_xlabel(r"step $\nu$")
    ax.set_ylabel("residual norm")
    ax.set_title("Ledger domination")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_contraction(result, path):
    """Per-step max contraction factor and iteration count."""
    rows = result["ledger"]
    nus = [row["nu"] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(nus, [row["contraction_max"] for row in rows], "o-", label="max contraction factor")
    ax.axhline(0.5, color="k", lw=0.8, ls=":", label="nominal rate 1/2")
    ax.set_xlabel(r"step $\nu$")
    ax.set_ylabel("factor")
    ax.set_ylim(bottom=0)
    ax2 = ax.twinx()
    ax2.bar(nus, [row["iterations"] for row in rows], alpha=0.2, label="iterations")
    ax2.set_ylabel("iterations")
    ax.set_title("Fixed-point contraction")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_residuals(verify_data, path):
    """Conjugacy residual of the intermediate states, log scale over nu."""
    states = verify_data.get("intermediate", [])
    fig, ax = plt.subplots(figsize=(6, 4))
    if states:
        nus = [s["nu"] for s in states]
        ax.semilogy(nus, [max(s["sup"], 1e-300) for s in states], "o-", label="sup |R|")
        ax.semilogy(nus, [max(s["mean"], 1e-300) for s in states], "s--", label="mean |R|")
    ax.set_xlabel(r"state $\nu$")
    ax.set_ylabel("conjugacy residual")
    ax.set_title("Residual decay across states")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_spectrum(result, path):
    """Coefficient decay of the perturbation: |p_k| |k|^n against |k|."""
    pert = result["perturbation"]
    n = pert["n"]
    orders = []
    mags = []
    for comp in pert["components"]:
        for entry in comp["coeffs"]:
            ell = sum(abs(int(x)) for x in entry["k"])
            if ell == 0:
                continue
            orders.append(ell)
            mags.append(abs(complex(entry["re"], entry["im"])) * ell**n)
    fig, ax = plt.subplots(figsize=(6, 4))
    if orders:
        ax.semilogy(orders, np.maximum(mags, 1e-300), ".", ms=4, alpha=0.6)
    ax.set_xlabel(r"mode order $|k|$")
    ax.set_ylabel(r"$|p_k|\,|k|^n$")
    ax.set_title("Perturbation regularity profile")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_all(result, verify_data, out_dir):
    """Render every available figure into ``out_dir``; returns the paths."""
    import os

    paths = []
    jobs = [
        ("ledger_decay.png", lambda p: render_ledger(result, p)),
        ("contraction.png", lambda p: render_contraction(result, p)),
        ("spectrum.png", lambda p: render_spectrum(result, p)),
    ]
    if verify_data is not None:
        jobs.append(("residual_decay.png", lambda p: render_residuals(verify_data, p)))
    for name, fn in jobs:
        path = os.path.join(out_dir, name)
        fn(path)
        paths.append(path)
    return paths
