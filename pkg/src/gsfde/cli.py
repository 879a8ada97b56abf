"""Command-line entry point.

Subcommands: ``feasibility``, ``run <experiment>``, ``run-all``,
``lemma-check``.  Exit code 0 iff everything checked passes.
"""

from __future__ import annotations

import argparse
import sys

from .bounds import InfeasibleError
from .config import ConfigError, load_setup
from .harness import EXPERIMENTS, run_all, run_one


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="YAML config (bundled default if omitted)")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--paths", type=int, default=None, help="paths per scenario override")
    p.add_argument("--out", default=None, help="output directory for CSVs and summary")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsfde",
                                description="Delay-SDE scenario simulation and "
                                            "moment-bound verification")
    sub = p.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("feasibility", help="print the bound report and windows"))
    runp = sub.add_parser("run", help="run one named experiment")
    runp.add_argument("experiment", choices=sorted(EXPERIMENTS))
    _common(runp)
    _common(sub.add_parser("run-all", help="run every enabled experiment"))
    _common(sub.add_parser("lemma-check", help="run the pathwise inequality suite"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup = load_setup(args.config, seed=args.seed, n_paths=args.paths)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    if args.command == "feasibility":
        report = setup.bound_report
        print(report.to_text())
        ok = all(w.feasible for w in report.windows.values())
        if not ok:
            for w in report.windows.values():
                if not w.feasible:
                    print(f"violated condition: {w.reason}", file=sys.stderr)
        return 0 if ok else 1

    if args.command in ("run", "lemma-check"):
        name = "lemmas" if args.command == "lemma-check" else args.experiment
        v = run_one(setup, name, seed=args.seed, n_paths=args.paths)
        if args.out:
            from pathlib import Path

            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            v.write_csv(out / f"{name}.csv")
        print(f"{name}: {'PASS' if v.passed else 'FAIL'}")
        for note in v.notes:
            print(f"  {note}")
        for r in v.rows:
            print(f"  t={r.label:g} empirical={r.empirical:.6g} "
                  f"SE={r.se:.3g} bound={r.bound:.6g} "
                  f"{'ok' if r.passed else 'VIOLATED'}")
        return 0 if v.passed else 1

    if args.command == "run-all":
        result = run_all(setup, out_dir=args.out, echo=print)
        print(result.summary)
        return 0 if result.passed else 1

    raise AssertionError("unreachable")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
