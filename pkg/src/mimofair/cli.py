"""Command-line interface: experiment runner and gadget verifiers.

Exit codes: 0 success, 1 configuration / usage error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .hardness import (
    CnfFormula,
    Lemma1Options,
    brute_force_sat_check,
    build_3sat_instance,
    verify_lemma1,
    verify_lemma2,
)
from .harness import (
    ExperimentResult,
    ScenarioConfig,
    load_config,
    run_dynamic,
    run_kkt_report,
    run_minrate_vs_snr,
    run_rate_cdf,
)
from .model import ConfigError, ModelError

USAGE = """usage: mimofair <command> [options]

commands:
  run <config.toml>      run the configured experiment, write CSV + JSON
  verify-lemma1          brute-force check of the 3-user gadget optimum
  verify-lemma2          check the 5-user gadget's two optimal patterns
  reduce-3sat <file.cnf> build the interference-channel reduction of a 3-CNF
  kkt <config.toml>      run max-min per trial and report KKT residuals
"""


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    import dataclasses

    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.trials is not None:
        updates["trials"] = args.trials
    if args.snr is not None:
        updates["snr_db"] = tuple(float(s) for s in args.snr.split(","))
    if args.algos is not None:
        updates["algorithms"] = tuple(args.algos.split(","))
    if args.tol is not None:
        updates["rel_tol"] = args.tol
    if args.max_iters is not None:
        updates["max_iters"] = args.max_iters
    if args.out is not None:
        updates["out"] = args.out
    return dataclasses.replace(config, **updates) if updates else config


def _run_experiment(config: ScenarioConfig) -> ExperimentResult:
    if config.experiment == "rate_cdf":
        return run_rate_cdf(config)
    if config.experiment == "minrate_vs_snr":
        return run_minrate_vs_snr(config)
    return run_dynamic(config)


def cli_main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0 if argv else 1
    command, rest = argv[0], argv[1:]
    try:
        if command == "run":
            return _cmd_run(rest)
        if command == "verify-lemma1":
            return _cmd_lemma1(rest)
        if command == "verify-lemma2":
            return _cmd_lemma2(rest)
        if command == "reduce-3sat":
            return _cmd_reduce(rest)
        if command == "kkt":
            return _cmd_kkt(rest)
    except (ConfigError, FileNotFoundError, ValueError, argparse.ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ModelError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    print(f"unknown command {command!r}", file=sys.stderr)
    print(USAGE, file=sys.stderr)
    return 1


def _experiment_parser(prog: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=prog, add_help=True)
    p.add_argument("config", help="TOML scenario file")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--snr", help="comma-separated SNR list in dB")
    p.add_argument("--algos", help="comma-separated algorithm list")
    p.add_argument("--tol", type=float, help="relative stopping tolerance")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--out", help="output base path (writes .csv and .json)")
    return p


def _cmd_run(rest: list[str]) -> int:
    args = _experiment_parser("mimofair run").parse_args(rest)
    config = _apply_overrides(load_config(args.config), args)
    result = _run_experiment(config)
    csv_path, json_path = result.write(config.out)
    print(f"wrote {csv_path} and {json_path} ({len(result.rows)} rows)")
    return 0


def _cmd_kkt(rest: list[str]) -> int:
    args = _experiment_parser("mimofair kkt").parse_args(rest)
    config = _apply_overrides(load_config(args.config), args)
    result = run_kkt_report(config)
    for row in result.rows:
        print(
            f"trial {row[0]}: min_rate={row[1]:.6f} stationarity={row[2]:.3e} "
            f"complementarity={row[3]:.3e} feasibility={row[4]:.3e} {row[5]}"
        )
    if args.out:
        result.write(args.out)
    frac = result.extras["pass_fraction"]
    print(f"KKT pass fraction: {frac:.2%}")
    return 0 if frac >= 0.95 else 2


def _cmd_lemma1(rest: list[str]) -> int:
    p = argparse.ArgumentParser(prog="mimofair verify-lemma1")
    p.add_argument("--coarse-points", type=int, default=5)
    p.add_argument("--fine-alpha", type=int, default=17)
    p.add_argument("--fine-phi", type=int, default=17)
    p.add_argument("--fine-psi", type=int, default=16)
    args = p.parse_args(rest)
    report = verify_lemma1(
        Lemma1Options(
            coarse_points=args.coarse_points,
            fine_alpha=args.fine_alpha,
            fine_phi=args.fine_phi,
            fine_psi=args.fine_psi,
        )
    )
    print(f"coarse full-grid best min-rate: {report.best_coarse:.6f}")
    print(f"symmetric fine-grid best min-rate: {report.best_symmetric:.6f}")
    print(
        f"maximizers found: {len(report.maximizers)} (rank-one family through "
        "the four named covariances)"
    )
    for q in report.maximizers[:4]:
        print(np.array_str(np.round(q, 6)))
    if len(report.maximizers) > 4:
        print(f"... and {len(report.maximizers) - 4} more on the same curve")
    if report.inconclusive:
        print("INCONCLUSIVE: grid too coarse to bracket the optimum")
        return 2
    print("maximizers match the four canonical covariances"
          if report.matched and report.canonicals_covered
          else "maximizer set mismatch")
    return 0 if report.ok else 2


def _cmd_lemma2(rest: list[str]) -> int:
    argparse.ArgumentParser(prog="mimofair verify-lemma2").parse_args(rest)
    report = verify_lemma2()
    print(f"min rate, all on antenna 1: {report.minrate_first_antenna:.9f}")
    print(f"min rate, gadget on antenna 2: {report.minrate_second_antenna:.9f}")
    print(f"user 4 rate under Q_c gadget: {report.user4_rate_under_qc:.6f}")
    print(f"user 5 rate under Q_d gadget: {report.user5_rate_under_qd:.6f}")
    print("PASS" if report.ok else "FAIL")
    return 0 if report.ok else 2


def _cmd_reduce(rest: list[str]) -> int:
    p = argparse.ArgumentParser(prog="mimofair reduce-3sat")
    p.add_argument("cnf", help="DIMACS CNF file (clauses of length 3)")
    p.add_argument("--check", action="store_true", help="brute-force the reduction")
    p.add_argument("--clause-gain", choices=("sqrt3", "one"), default="sqrt3")
    p.add_argument("--out", help="write the instance description as JSON")
    args = p.parse_args(rest)
    formula = CnfFormula.from_dimacs(Path(args.cnf).read_text())
    instance = build_3sat_instance(formula, clause_gain=args.clause_gain)
    n, m = formula.num_vars, len(formula.clauses)
    print(f"built instance: {5 * n + m} users ({n} variables, {m} clauses)")
    if args.out:
        desc = {
            "labels": list(instance.labels),
            "clause_gain": instance.clause_gain,
            "channels": {
                f"{r[0]}<-{t}": [[[z.real, z.imag] for z in row] for row in h]
                for (r, t), h in sorted(instance.channels.gains.items())
            },
        }
        Path(args.out).write_text(json.dumps(desc, indent=2) + "\n")
        print(f"wrote {args.out}")
    if args.check:
        result = brute_force_sat_check(instance)
        verdict = "SAT" if result.satisfiable else "UNSAT"
        print(f"{verdict} (best min rate {result.best_min_rate:.9f})")
    return 0


def main() -> int:
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
