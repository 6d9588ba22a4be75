"""Command-line front end: ``sample``, ``solve``, ``experiment``, ``diagnose``.

Exit codes: 0 success, 1 runtime or mathematical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    ExperimentConfig,
    SweepError,
    parse_flat_config,
    run_sweep,
    stratification_diagnostic,
    uniform_convergence_diagnostic,
    wasserstein_diagnostic,
    write_report_csv,
    write_report_svg,
)
from .lp import LpStatusError
from .problems import (
    DEFAULT_R_TARGET,
    Model,
    gen_portfolio_instance,
    gen_two_stage_instance,
    sample_based_solution,
)
from .sequences import Sampler, generate_points
from .transforms import Factorization

OUTPUT_DIR_ENV = "RQMC_RISK_OUTPUT_DIR"


def _g(x) -> str:
    return format(float(x), ".17g")


def _counts(text: str) -> list[int]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        out.append(2 ** int(tok[2:]) if tok.startswith("2^") else int(tok))
    return out


def _positive_int(text: str) -> int:
    v = int(text, 0)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rqmc-risk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    samplers = [s.value for s in Sampler]

    p = sub.add_parser("sample", help="write a point set as CSV")
    p.add_argument("--sampler", required=True, choices=samplers)
    p.add_argument("--n", required=True, type=_positive_int)
    p.add_argument("--d", required=True, type=_positive_int)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("solve", help="solve one sample-based problem")
    p.add_argument("--problem", choices=["portfolio", "two-stage"], default="portfolio")
    p.add_argument("--model", choices=[m.value for m in Model], default=Model.NORMAL.value)
    p.add_argument("--sampler", choices=samplers, default=Sampler.SOBOL_SCRAMBLED.value)
    p.add_argument("--factorization", choices=[f.value for f in Factorization], default="cholesky")
    p.add_argument("--n", required=True, type=_positive_int)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=0, help="replication seed")
    p.add_argument("--instance-seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--R", dest="r_target", type=float, default=DEFAULT_R_TARGET)
    p.add_argument("--d", type=_positive_int, default=5)
    p.add_argument("--m", type=_positive_int, default=5)
    p.add_argument("--method", choices=["highs", "simplex"], default="highs")

    p = sub.add_parser("experiment", help="run an RMSE/bias sweep from a config file")
    p.add_argument("--config", required=True, help="flat 'key = value' file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", help=f"CSV path (default: config 'output', else ${OUTPUT_DIR_ENV}/<name>.csv)")
    p.add_argument("--svg", help="also write a log2 RMSE versus log2 N chart")
    p.add_argument("--workers", type=_positive_int)

    p = sub.add_parser("diagnose", help="convergence and net-property diagnostics")
    p.add_argument("--kind", required=True, choices=["wasserstein", "uniform", "stratification"])
    p.add_argument("--sampler", choices=samplers, default=Sampler.SOBOL_SCRAMBLED.value)
    p.add_argument("--n-schedule", type=_counts, default=_counts("2^6,2^8,2^10,2^12"))
    p.add_argument("--seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--p", type=float, default=2.0, help="Wasserstein order")
    p.add_argument("--n", type=_positive_int, default=1024, help="point count for stratification")
    p.add_argument("--d", type=_positive_int, default=2)
    p.add_argument("--resolution", type=_positive_int, default=64)
    p.add_argument("--instance-seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--R", dest="r_target", type=float, default=DEFAULT_R_TARGET)
    p.add_argument("--factorization", choices=[f.value for f in Factorization], default="cholesky")
    return parser


def cmd_sample(args) -> int:
    pts = generate_points(args.sampler, args.n, args.d, args.seed).points
    if args.out:
        with open(args.out, "w", newline="") as fh:
            _write_rows(fh, pts)
    else:
        _write_rows(sys.stdout, pts)
    return 0


def _write_rows(fh, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    for row in rows:
        w.writerow([_g(v) for v in row])


def cmd_solve(args) -> int:
    if args.problem == "portfolio":
        inst = gen_portfolio_instance(args.instance_seed, args.d, args.beta, args.r_target, args.model)
    else:
        inst = gen_two_stage_instance(args.instance_seed, args.d, args.m, args.beta)
    sol = sample_based_solution(inst, args.sampler, args.n, args.seed, args.factorization, args.method)
    d = inst.d
    print(f"problem = {args.problem}")
    print(f"fingerprint = {inst.fingerprint()}")
    print(f"value = {_g(sol.value)}")
    print(f"x = {','.join(_g(v) for v in sol.point[:d])}")
    print(f"var = {_g(sol.point[d])}")
    return 0


def _default_output(cfg: ExperimentConfig, config_path: str) -> Path:
    if cfg.output:
        return Path(cfg.output)
    root = Path(os.environ.get(OUTPUT_DIR_ENV, "results"))
    return root / (Path(config_path).stem + ".csv")


def cmd_experiment(args) -> int:
    kv = parse_flat_config(Path(args.config).read_text())
    for item in args.set:
        if "=" not in item:
            raise _UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        kv[k.strip()] = v.strip()
    try:
        cfg = ExperimentConfig.from_mapping(kv)
    except (ValueError, TypeError) as exc:
        raise _UsageError(f"invalid config: {exc}") from exc
    if args.workers:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    path = Path(args.out) if args.out else _default_output(cfg, args.config)
    try:
        report = run_sweep(cfg)
    except SweepError as exc:
        write_report_csv(exc.report, path)
        print(f"error: {exc}; partial report written to {path}", file=sys.stderr)
        return 1
    write_report_csv(report, path)
    if args.svg:
        write_report_svg(report, args.svg)
    print(f"reference ({report.ref_mode}) = {_g(report.reference)}")
    print(f"{'sampler':<22}{'N':>8}  {'mean':>24}  {'bias':>24}  {'rmse':>24}")
    for c in report.cells:
        print(f"{c.sampler:<22}{c.n:>8}  {_g(c.mean):>24}  {_g(c.bias):>24}  {_g(c.rmse):>24}")
    for label, (slope, _) in report.slopes.items():
        print(f"slope {label} = {_g(slope)}")
    print(f"wrote {path}")
    return 0


def cmd_diagnose(args) -> int:
    if args.kind == "wasserstein":
        print(f"N,W{_g(args.p)}")
        for n, w in wasserstein_diagnostic(args.sampler, args.n_schedule, args.seed, args.p):
            print(f"{n},{_g(w)}")
        return 0
    if args.kind == "uniform":
        inst = gen_portfolio_instance(args.instance_seed, args.d, args.beta, args.r_target, Model.NORMAL)
        diag = uniform_convergence_diagnostic(inst, args.resolution, args.n_schedule, args.sampler,
                                              args.seed, args.factorization)
        print("N,sup_error,argmax_x")
        for n, err, x in diag.rows():
            print(f"{n},{_g(err)},{' '.join(_g(v) for v in x)}")
        return 0
    rows = stratification_diagnostic(args.n, args.d, (args.seed, args.seed + 1, args.seed + 2))
    print("variant,dim,stratified,t_pair_with_dim1")
    for name, dim, ok, t in rows:
        print(f"{name},{dim},{'pass' if ok else 'FAIL'},{t}")
    return 0 if all(ok for _, _, ok, _ in rows) else 1


class _UsageError(Exception):
    pass


_COMMANDS = {"sample": cmd_sample, "solve": cmd_solve, "experiment": cmd_experiment, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LpStatusError, ValueError, ArithmeticError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
