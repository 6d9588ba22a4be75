"""Run every bundled experiment config and the three diagnostics.

Writes CSV (and SVG) files under ``--out`` (default ``results``)::

    python3 scripts/run_all.py --out results --workers 1

Pass ``--only stub`` (any config stem) to run a subset.
"""

import argparse
import sys
from pathlib import Path

from rqmc_risk.cli import main as cli

CONFIGS = Path(__file__).resolve().parent / "configs"


def run(argv, stdout_path=None):
    print("+ rqmc-risk " + " ".join(argv), flush=True)
    if stdout_path is None:
        return cli(argv)
    saved = sys.stdout
    with open(stdout_path, "w") as fh:
        sys.stdout = fh
        try:
            return cli(argv)
        finally:
            sys.stdout = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="config stems to run")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    failures = 0
    for cfg in sorted(CONFIGS.glob("*.cfg")):
        if args.only and cfg.stem not in args.only:
            continue
        failures += run(["experiment", "--config", str(cfg), "--out", str(out / f"{cfg.stem}.csv"),
                         "--svg", str(out / f"{cfg.stem}.svg"), "--workers", str(args.workers)]) != 0
    if not args.only:
        for sampler in ("mc", "sobol", "sobol-scrambled", "halton", "halton-shifted", "lhs"):
            failures += run(["diagnose", "--kind", "wasserstein", "--sampler", sampler,
                             "--n-schedule", "2^6,2^8,2^10,2^12"], out / f"wasserstein_{sampler}.csv") != 0
        failures += run(["diagnose", "--kind", "uniform", "--d", "2", "--resolution", "64",
                         "--n-schedule", "2^6,2^8,2^10,2^12"], out / "uniform_d2.csv") != 0
        failures += run(["diagnose", "--kind", "stratification", "--n", "4096", "--d", "10"],
                        out / "stratification.csv") != 0
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
