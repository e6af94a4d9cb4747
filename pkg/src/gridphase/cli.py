"""Command line entry point: ``gridphase {pf,retrieve,certify,simulate}``.

Exit codes: 0 success, 1 input or I/O error, 2 numerical non-convergence,
64 usage error. ``GRIDPHASE_LOG`` sets the log level (e.g. ``DEBUG``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .certify import certify_network, format_table
from .netmodel import CaseParseError, NetworkValidationError, load_case
from .powerflow import SingularJacobianError, nr_solve
from .retrieval import write_angles_csv
from .simkit import (
    NoiseSpec,
    ScenarioConfig,
    run_noise_sweep,
    run_retrieval_experiment,
    run_sequential_retrieval,
    summarize_sweep,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("gridphase")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class NonConvergence(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _nonneg(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if x < 0 or not np.isfinite(x):
        raise argparse.ArgumentTypeError(f"must be a non-negative number: {text!r}")
    return x


def build_parser():
    p = _Parser(prog="gridphase", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt_default):
        sp.add_argument("--out", type=Path, help="output directory (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default=fmt_default)

    pf = sub.add_parser("pf", help="solve the AC power flow")
    pf.add_argument("--case", required=True, help="bundled case name or path to a .m file")
    pf.add_argument("--mode", choices=("classical", "phaseless"), default="classical",
                    help="how the Newton step assembles the angle blocks")
    pf.add_argument("--tol", type=float, default=1e-8)
    pf.add_argument("--max-iter", type=int, default=30)
    common(pf, "json")

    rt = sub.add_parser("retrieve", help="simulate one snapshot and recover PQ-bus angles")
    rt.add_argument("--case", required=True)
    rt.add_argument("--sigma-meas", type=_nonneg, default=0.0)
    rt.add_argument("--sigma-jac", type=_nonneg, default=0.0)
    rt.add_argument("--seed", type=int)
    rt.add_argument("--sensitivities", choices=("model", "estimated"), default="model")
    rt.add_argument("--window", default="2n",
                    help="regression window size: an integer or a multiple of n such as '2n'")
    common(rt, "csv")

    ct = sub.add_parser("certify", help="evaluate the recovery certificates on PQ buses")
    ct.add_argument("--case", required=True, nargs="+")
    ct.add_argument("--scaling", choices=("column", "row"), default="column",
                    help="angle-block form used by the certificates")
    common(ct, "json")

    sm = sub.add_parser("simulate", help="run a scenario file (time series and/or noise sweep)")
    sm.add_argument("--scenario", required=True, type=Path)
    sm.add_argument("--case", help="override the scenario's case")
    sm.add_argument("--seed", type=int, help="override the scenario's seed")
    common(sm, "csv")
    return p


def _window_size(text, n):
    t = text.strip().lower()
    try:
        size = int(float(t[:-1] or 1) * n) if t.endswith("n") else int(t)
    except ValueError:
        raise UsageError(f"--window must be an integer or a multiple of n, got {text!r}") from None
    if size < 1:
        raise UsageError("--window must be positive")
    return size


def _load(case):
    try:
        return load_case(case)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    except (CaseParseError, NetworkValidationError, ValueError, OSError) as exc:
        raise InputError(f"{case}: {exc}") from None


def _solve(network, **kwargs):
    try:
        sol = nr_solve(network, **kwargs)
    except SingularJacobianError as exc:
        raise NonConvergence(f"{network.name}: {exc}") from None
    if not sol.converged:
        raise NonConvergence(f"{network.name}: power flow did not converge "
                             f"(mismatch {sol.final_mismatch:.3g} after {sol.iterations} iterations)")
    return sol


def _emit(out, name, text, stream):
    if out is None:
        stream.write(text if text.endswith("\n") else text + "\n")
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    log.info("wrote %s", out / name)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_pf(args, stdout):
    net = _load(args.case)
    try:
        sol = nr_solve(net, tolerance=args.tol, max_iter=args.max_iter, jacobian_mode=args.mode)
    except SingularJacobianError as exc:
        raise NonConvergence(str(exc)) from None
    if args.format == "json":
        d = {"case": net.name, "bus": net.bus_ids.tolist(), **sol.to_dict()}
        _emit(args.out, "solution.json", json.dumps(d, indent=2), stdout)
    else:
        kinds = [b.kind.name for b in net.buses]
        rows = [[int(b), k, repr(float(t)), repr(float(v)), repr(float(p)), repr(float(q))]
                for b, k, t, v, p, q in zip(net.bus_ids, kinds, sol.state.theta, sol.state.v,
                                            sol.injections.p, sol.injections.q)]
        _emit(args.out, "solution.csv", _csv_text(["bus", "type", "theta", "v", "p", "q"], rows), stdout)
    if not sol.converged:
        raise NonConvergence(f"{net.name}: no convergence after {sol.iterations} iterations "
                             f"(mismatch {sol.final_mismatch:.3g})")


def cmd_retrieve(args, stdout):
    stochastic = args.sigma_meas > 0 or args.sigma_jac > 0 or args.sensitivities == "estimated"
    if stochastic and args.seed is None:
        raise UsageError("--seed is required when noise or estimated sensitivities are used")
    net = _load(args.case)
    sol = _solve(net)
    noise = NoiseSpec(args.sigma_meas, args.sigma_jac, 0 if args.seed is None else args.seed)
    window = _window_size(args.window, net.pq_indices.size)
    try:
        exp = run_retrieval_experiment(net, sol, noise, sensitivities=args.sensitivities,
                                       window=window)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(str(exc)) from None
    summary = {"case": net.name, "sigma_meas": args.sigma_meas, "sigma_jac": args.sigma_jac,
               "seed": args.seed, "sensitivities": args.sensitivities, **exp.summary()}
    if args.sensitivities == "estimated":
        summary["window"] = window
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_angles_csv(args.out / "angles.csv", exp.bus_ids, exp.theta_hat, exp.theta_true)
        _emit(args.out, "summary.json", json.dumps(summary, indent=2), stdout)
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bus", "theta_true", "theta_hat", "abs_error"])
        for b, t, h, e in zip(exp.bus_ids, exp.theta_true, exp.theta_hat, exp.abs_error):
            w.writerow([int(b), repr(float(t)), repr(float(h)), repr(float(e))])
        stdout.write(buf.getvalue())
    else:
        stdout.write(json.dumps(summary, indent=2) + "\n")
    print(f"max abs angle error: {summary['max_abs_error']:.3e} rad", file=sys.stderr)


def cmd_certify(args, stdout):
    reports = []
    for case in args.case:
        net = _load(case)
        sol = _solve(net)
        reports.append(certify_network(net, sol, scaling=args.scaling))
    table = format_table(reports)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        for r in reports:
            (args.out / f"{r.case}_certificate.json").write_text(r.to_json(indent=2))
        (args.out / "certificates.txt").write_text(table + "\n")
        stdout.write(table + "\n")
    elif args.format == "json":
        stdout.write(json.dumps([r.to_dict() for r in reports], indent=2) + "\n")
    else:
        rows = [[r.case, r.n_pq, r.pct_thm1, r.r_worst if r.thm1_violations else "",
                 r.pct_thm2, r.sigma_max] for r in reports]
        stdout.write(_csv_text(["case", "n_pq", "pct_thm1", "r_worst", "pct_thm2", "sigma_max"], rows))
    print("uncertified buses are inconclusive, not proven singular", file=sys.stderr)


def cmd_simulate(args, stdout):
    try:
        cfg = ScenarioConfig.from_path(args.scenario)
    except FileNotFoundError:
        raise InputError(f"scenario file not found: {args.scenario}") from None
    except (ValueError, TypeError, OSError) as exc:
        raise InputError(f"{args.scenario}: {exc}") from None
    if args.case:
        cfg.case = args.case
    if args.seed is not None:
        cfg.seed = args.seed
    net = _load(cfg.case)
    try:
        scenario = cfg.scenario(net)
    except (ValueError, KeyError, OSError) as exc:
        raise InputError(str(exc)) from None
    res = run_sequential_retrieval(net, scenario)
    summary = {"case": net.name, "seed": cfg.seed, "time_series": res.summary()}
    out = args.out
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        res.write_csv(out / "trajectory.csv")
    if cfg.sweep:
        sweep = dict(cfg.sweep)
        sol = _solve(net)
        rows = run_noise_sweep(net, sol, sweep.get("sigma_meas", [0.01, 0.05, 0.1]),
                               sweep.get("sigma_jac", [0.0]), n_boot=int(sweep.get("n_boot", 20)),
                               master_seed=cfg.seed)
        agg = summarize_sweep(rows)
        summary["sweep"] = agg
        if out is not None:
            keys = list(rows[0])
            for (sm, sj), group in _grid_groups(rows).items():
                tag = f"sm{sm:g}_" + ("known_topology" if sj is None else f"sj{sj:g}")
                (out / f"sweep_{tag}.csv").write_text(
                    _csv_text(keys, [[r[k] for k in keys] for r in group]))
            akeys = list(agg[0])
            (out / "sweep_summary.csv").write_text(_csv_text(akeys, [[a[k] for k in akeys] for a in agg]))
    text = json.dumps(summary, indent=2)
    if out is not None:
        _emit(out, "summary.json", text, stdout)
    elif args.format == "json":
        stdout.write(text + "\n")
    else:
        res.write_csv(stdout)
    if res.skipped_steps:
        raise NonConvergence(f"power flow failed at {len(res.skipped_steps)} step(s); "
                             "those steps were skipped")


def _grid_groups(rows):
    groups = {}
    for r in rows:
        key = (r["sigma_meas"], r["sigma_jac"])
        groups.setdefault(key, []).append(r)
    return groups


COMMANDS = {"pf": cmd_pf, "retrieve": cmd_retrieve, "certify": cmd_certify, "simulate": cmd_simulate}


def main(argv=None, stdout=None):
    stdout = sys.stdout if stdout is None else stdout
    level = os.environ.get("GRIDPHASE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        COMMANDS[args.command](args, stdout)
    except UsageError as exc:
        print(f"gridphase: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"gridphase: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NonConvergence as exc:
        print(f"gridphase: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"gridphase: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
