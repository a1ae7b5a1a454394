"""Command-line front end.

Subcommands:

* ``frequency analyze``  -- diophantine data of a frequency vector
* ``norms``              -- the norm families of a stored series/field
* ``perturb generate``   -- random perturbation fixture to a file
* ``kam run``            -- full conjugacy run from a config file
* ``kam verify``         -- residual + orbit verification of a stored result
* ``audit``              -- pass/fail table over a result's bound reports
* ``report``             -- CSV tables and figures rendered from stored artifacts

Exit codes: 0 success, 2 precondition/gate failure, 3 divergence,
1 audit failure or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys


def _common(parser):
    parser.add_argument("--out", default=None, help="output directory (default: alongside input)")
    parser.add_argument("--threads", type=int, default=1, help="worker-thread bound for array kernels")
    parser.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    parser.add_argument("--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="kamflow", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    freq = sub.add_parser("frequency", help="frequency-vector analysis")
    freq_sub = freq.add_subparsers(dest="subcommand", required=True)
    fa = freq_sub.add_parser("analyze", help="diophantine constants and divisor extrema")
    fa.add_argument("--omega", type=float, nargs="+", required=True)
    fa.add_argument("--K", type=int, default=64, help="probe order for the divisor table")
    fa.add_argument("--tau", type=float, default=None, help="exponent to fit alpha at (default n-1)")
    fa.add_argument("--ruessmann-K", type=int, nargs="*", default=[4, 8, 16, 32])
    _common(fa)

    nr = sub.add_parser("norms", help="print the norm families of a series file")
    nr.add_argument("--series", required=True, help="JSON series or field file")
    nr.add_argument("--s", type=float, default=0.5, help="strip half-width")
    nr.add_argument("--r", type=float, default=2.0, help="regularity exponent for the block norm")
    nr.add_argument("--b", type=int, default=4, help="block base")
    nr.add_argument("--tau", type=float, default=1.0, help="exponent for the mode-weight norm")
    _common(nr)

    pert = sub.add_parser("perturb", help="perturbation fixtures")
    pert_sub = pert.add_subparsers(dest="subcommand", required=True)
    pg = pert_sub.add_parser("generate", help="random power-law perturbation to a file")
    pg.add_argument("--n", type=int, default=2)
    pg.add_argument("--tau", type=float, default=1.0)
    pg.add_argument("--b", type=int, default=4)
    pg.add_argument("--size", type=float, default=None, help="amplitude prefactor")
    pg.add_argument(
        "--gate-fraction",
        type=float,
        default=None,
        help="instead of --size: place 2AB*eps at this fraction of the gate",
    )
    pg.add_argument("--decay", type=float, default=1.1, help="extra decay exponent")
    pg.add_argument("--max-order", type=int, default=16)
    pg.add_argument("--nu-max", type=int, default=6, help="schedule depth for gate sizing")
    pg.add_argument("--file", required=True, help="output JSON path")
    _common(pg)

    kam = sub.add_parser("kam", help="conjugacy runs")
    kam_sub = kam.add_subparsers(dest="subcommand", required=True)
    kr = kam_sub.add_parser("run", help="full iteration from a config file")
    kr.add_argument("--config", required=True)
    _common(kr)
    kv = kam_sub.add_parser("verify", help="residual and orbit checks of a result")
    kv.add_argument("--result", required=True)
    kv.add_argument("--grid", type=int, default=64)
    kv.add_argument("--t-final", type=float, default=100.0)
    kv.add_argument("--integrator-tol", type=float, default=1e-12)
    kv.add_argument("--x0", type=float, nargs="*", default=None)
    _common(kv)

    au = sub.add_parser("audit", help="pass/fail table over a result's bound reports")
    au.add_argument("--result", required=True)
    _common(au)

    rp = sub.add_parser("report", help="render CSV + figures from stored artifacts")
    rp.add_argument("--result", required=True)
    rp.add_argument("--verify", default=None, help="verify.json produced by `kam verify`")
    _common(rp)

    return parser


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=False)
        fh.write("\n")


def _out_dir(args, fallback):
    out = args.out or fallback
    os.makedirs(out, exist_ok=True)
    return out


def cmd_frequency_analyze(args):
    from .diophantine import FrequencyData, ruessmann_check

    freq = FrequencyData.analyze(args.omega, tau=args.tau, K_probe=args.K)
    payload = {"schema_version": 1, **freq.to_dict()}
    payload["ruessmann_ratios"] = {
        str(K): ruessmann_check(freq.omega, K).ratio for K in args.ruessmann_K if K <= args.K
    }
    text = json.dumps(payload, indent=1)
    print(text)
    if args.out:
        out = _out_dir(args, None)
        _write_json(os.path.join(out, "frequency.json"), payload)
    return 0


def _load_series_or_field(path):
    from .fourier import field_from_dict, series_from_dict

    with open(path) as fh:
        data = json.load(fh)
    if "components" in data:
        return field_from_dict(data)
    return series_from_dict(data)


def cmd_norms(args):
    import numpy as np

    from .norms import norm_block, norm_exp, norm_m, norm_mean_l2, norm_sup_grid

    obj = _load_series_or_field(args.series)
    m_of = lambda idx: np.abs(np.asarray(idx, dtype=float)).sum(axis=-1) ** (args.tau + 1.0)
    rows = [
        (f"exp-l1       |f|_s        (s={args.s})", norm_exp(obj, args.s)),
        (f"mean-l2      |||f|||_s    (s={args.s})", norm_mean_l2(obj, args.s)),
        (f"block        |f|_(r,b)    (r={args.r}, b={args.b})", norm_block(obj, args.r, args.b)),
        (f"block l1     |f|_(r,1)    (r={args.r})", norm_block(obj, args.r, 1)),
        (f"block l2     |f|_(r,inf)  (r={args.r})", norm_block(obj, args.r, math.inf)),
        (f"mode-weight  |f|_m        (m_k=|k|^{args.tau + 1:g})", norm_m(obj, m_of)),
        ("grid sup     max|f|", norm_sup_grid(obj)),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value:.12e}")
    return 0


def cmd_perturb_generate(args):
    from .fourier import field_to_dict
    from .scheme import build_schedule, generate_perturbation, size_for_gate

    seed = args.seed if args.seed is not None else 0
    if (args.size is None) == (args.gate_fraction is None):
        print("error: give exactly one of --size or --gate-fraction", file=sys.stderr)
        return 1
    if args.size is not None:
        size = args.size
    else:
        schedule = build_schedule(args.n, args.tau, args.b, args.nu_max)
        _, unit_report = generate_perturbation(
            args.n, args.tau, args.b, 1.0, args.decay, seed, args.max_order
        )
        size = size_for_gate(unit_report.eps_m, schedule, args.gate_fraction)
    P, report = generate_perturbation(
        args.n, args.tau, args.b, size, args.decay, seed, args.max_order
    )
    payload = field_to_dict(P)
    payload["generator"] = {
        "tau": args.tau,
        "b": args.b,
        "size": size,
        "decay_exponent": args.decay,
        "max_order": args.max_order,
        "seed": seed,
    }
    _write_json(args.file, payload)
    print(f"wrote {args.file}")
    print(f"  |P|_(tau+1,b) = {report.norm_rb:.6e}")
    print(f"  ledger mass eps = {report.eps_m:.6e}")
    print(f"  sub-C^n decay flag = {report.sub_cn}")
    return 0


def _result_paths(args):
    base = os.path.dirname(os.path.abspath(args.result))
    return _out_dir(args, base)


def cmd_kam_run(args):
    import numpy as np

    from .diophantine import FrequencyData
    from .errors import DivergenceError, StepPreconditionError
    from .fourier import field_from_dict
    from .reporting import write_reports_csv
    from .scheme import build_schedule, generate_perturbation, run, size_for_gate

    with open(args.config) as fh:
        config = json.load(fh)
    for key in ("n", "omega", "tau", "b"):
        if key not in config:
            print(f"error: config field '{key}' is missing", file=sys.stderr)
            return 1
    n = int(config["n"])
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    nu_max = int(config.get("nu_max", 6))
    schedule = build_schedule(n, float(config["tau"]), int(config["b"]), nu_max,
                              float(config.get("theta_margin", 0.0)))
    freq = FrequencyData.analyze(
        config["omega"], tau=float(config["tau"]), K_probe=int(config.get("probe_K", 64)),
        table_Ks=[K for K in schedule.K if K <= 512],
    )
    if config.get("normalize_omega", True):
        freq = freq.normalized()

    pert_cfg = config.get("perturbation", {})
    if "file" in pert_cfg:
        path = pert_cfg["file"]
        if not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(args.config)), path)
        with open(path) as fh:
            P = field_from_dict(json.load(fh))
    elif "generator" in pert_cfg:
        g = pert_cfg["generator"]
        gseed = int(g.get("seed", seed))
        if "size" in g:
            size = float(g["size"])
        else:
            _, unit_report = generate_perturbation(
                n, float(config["tau"]), int(config["b"]), 1.0,
                float(g.get("decay_exponent", 1.1)), gseed, int(g.get("max_order", 16)),
            )
            size = size_for_gate(unit_report.eps_m, schedule, float(g.get("gate_fraction", 0.5)))
        P, _ = generate_perturbation(
            n, float(config["tau"]), int(config["b"]), size,
            float(g.get("decay_exponent", 1.1)), gseed, int(g.get("max_order", 16)),
            forced_mode=g.get("forced_mode"),
        )
    else:
        print("error: config field 'perturbation' needs 'file' or 'generator'", file=sys.stderr)
        return 1

    tol_cfg = config.get("tolerances", {})
    stop_cfg = config.get("stop", {})
    out = _out_dir(args, os.path.dirname(os.path.abspath(args.config)) or ".")
    try:
        result = run(
            P,
            freq,
            schedule,
            q_floor_rel=float(stop_cfg.get("q_norm_floor_rel", 1e-14)),
            fp_tol_rel=float(tol_cfg.get("fp_tol_rel", 1e-13)),
            max_iter=int(tol_cfg.get("max_iter", 60)),
            grid_factor=int(tol_cfg.get("grid_factor", 2)),
            prune_rel=float(tol_cfg.get("prune_rel", 1e-16)),
        )
    except StepPreconditionError as exc:
        payload = {
            "schema_version": 1,
            "failed": True,
            "reason": str(exc),
            "nu": exc.nu,
            "config": config,
        }
        _write_json(os.path.join(out, "result.json"), payload)
        print(f"precondition failure at nu={exc.nu}: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3

    payload = result.to_dict()
    payload["config"] = config
    payload["seed"] = seed
    payload["frequency"] = freq.to_dict()
    _write_json(os.path.join(out, "result.json"), payload)
    with open(os.path.join(out, "ledger.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        keys = list(result.ledger[0].keys()) if result.ledger else []
        writer.writerow(keys)
        for row in result.ledger:
            writer.writerow([repr(row.get(k, "")) for k in keys])
    write_reports_csv(result.reports, os.path.join(out, "diagnostics.csv"))
    if args.verbose:
        for row in result.ledger:
            print(
                f"nu={row['nu']} K={row['K']} q={row['q_measured']:.3e} "
                f"eps={row['eps_bound']:.3e} iters={row['iterations']}"
            )
    print(f"run complete: Y = {np.asarray(result.Y).tolist()}  (stopped: {result.stopped})")
    print(f"wrote {os.path.join(out, 'result.json')}")
    return 0


def cmd_kam_verify(args):
    import numpy as np

    from .verify import conjugacy_residual, load_result_fields, orbit_conjugacy_check

    with open(args.result) as fh:
        result = json.load(fh)
    if result.get("failed"):
        print("result file records a failed run; nothing to verify", file=sys.stderr)
        return 2
    Y, transform, P, omega, snapshots = load_result_fields(result)
    residual = conjugacy_residual(Y, transform, P, omega, args.grid)
    x0 = np.asarray(args.x0, dtype=float) if args.x0 else np.full(len(omega), 0.1)
    orbit = orbit_conjugacy_check(
        Y, transform, P, omega, x0, t_final=args.t_final, integrator_tol=args.integrator_tol
    )
    intermediate = []
    for snap in snapshots:
        rep = conjugacy_residual(snap["Y"], snap["transform"], P, omega, args.grid)
        intermediate.append({"nu": snap["nu"], "sup": rep.sup, "mean": rep.mean})
    payload = {
        "schema_version": 1,
        "residual": residual.to_dict(),
        "orbit": orbit.to_dict(),
        "intermediate": intermediate,
    }
    out = _result_paths(args)
    _write_json(os.path.join(out, "verify.json"), payload)
    print(f"conjugacy residual: sup = {residual.sup:.6e}, mean = {residual.mean:.6e}")
    print(f"orbit check: max torus distance = {orbit.max_distance:.6e} over t <= {orbit.t_final}")
    print(f"wrote {os.path.join(out, 'verify.json')}")
    return 0


def cmd_audit(args):
    from .verify import lemma_audit

    with open(args.result) as fh:
        result = json.load(fh)
    if result.get("failed"):
        print(f"run failed at nu={result.get('nu')}: {result.get('reason')}")
        return 1
    audit = lemma_audit(result.get("reports", []))
    print(audit.table())
    out = _result_paths(args)
    _write_json(os.path.join(out, "audit.json"), audit.to_dict())
    print(f"overall: {'PASS' if audit.all_pass else 'FAIL'}")
    return 0 if audit.all_pass else 1


def cmd_report(args):
    from .plots import render_all

    with open(args.result) as fh:
        result = json.load(fh)
    verify_data = None
    if args.verify:
        with open(args.verify) as fh:
            verify_data = json.load(fh)
    out = _result_paths(args)
    with open(os.path.join(out, "ledger_report.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        keys = list(result["ledger"][0].keys()) if result.get("ledger") else []
        writer.writerow(keys)
        for row in result.get("ledger", []):
            writer.writerow([repr(row.get(k, "")) for k in keys])
    paths = render_all(result, verify_data, out)
    for p in paths:
        print(f"wrote {p}")
    print(f"wrote {os.path.join(out, 'ledger_report.csv')}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    os.environ.setdefault("OPENBLAS_NUM_THREADS", str(args.threads))
    os.environ.setdefault("MKL_NUM_THREADS", str(args.threads))
    handlers = {
        ("frequency", "analyze"): cmd_frequency_analyze,
        ("norms", None): cmd_norms,
        ("perturb", "generate"): cmd_perturb_generate,
        ("kam", "run"): cmd_kam_run,
        ("kam", "verify"): cmd_kam_verify,
        ("audit", None): cmd_audit,
        ("report", None): cmd_report,
    }
    key = (args.command, getattr(args, "subcommand", None))
    try:
        return handlers[key](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
