"""Command-line entry points.

Verbs:
  bench        run the replication benchmark described by a JSON config
  verify       run the enumeration-based theorem checks and print pass/fail
  gen-fixture  write a synthetic multiclass CSV fixture
  dilemma      search for both variance orderings of IS vs IS-PW

Exit codes: 0 success, 1 estimator total failure / failed checks,
2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .experiment import (
    ConfigError,
    ExperimentConfig,
    TheoremSuiteConfig,
    run_benchmark,
    run_theorem_suite,
)
from .oracle import DilemmaSearchConfig, find_dilemma_instances, monte_carlo_is_variances
from .pipeline import make_synthetic_multiclass, save_csv_dataset


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stratope",
        description="Off-policy evaluation benchmarks for multiple logging policies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run the replication benchmark")
    bench.add_argument("--config", required=True, help="path to a JSON experiment config")
    bench.add_argument("--out", help="output directory (overrides the config)")
    bench.add_argument("--seed", type=int, help="master seed (overrides the config)")
    bench.add_argument("--threads", type=int, help="worker processes (overrides the config)")

    verify = sub.add_parser("verify", help="run the oracle-exact theorem checks")
    verify.add_argument("--config", help="optional JSON file with suite settings")
    verify.add_argument("--seed", type=int, help="seed for the random instances")
    verify.add_argument("--out", help="optional path for the text report")

    fixture = sub.add_parser("gen-fixture", help="write a synthetic multiclass CSV")
    fixture.add_argument("--out", required=True, help="output CSV path")
    fixture.add_argument("--rows", type=int, default=2000)
    fixture.add_argument("--classes", type=int, default=4)
    fixture.add_argument("--features", type=int, default=5)
    fixture.add_argument("--separation", type=float, default=2.0)
    fixture.add_argument("--seed", type=int, default=0)

    dilemma = sub.add_parser("dilemma", help="find both orderings of var[IS] vs var[IS-PW]")
    dilemma.add_argument("--out", help="optional JSON output path (default: stdout)")
    dilemma.add_argument("--seed", type=int, default=0, help="seed for the Monte Carlo check")
    dilemma.add_argument(
        "--mc-reps",
        type=int,
        default=1_000_000,
        help="Monte Carlo replications confirming each ordering (0 to skip)",
    )
    return parser


def _cmd_bench(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        config = dataclasses.replace(config, **overrides)
    report = run_benchmark(config)
    print(f"true policy value: {report.true_value:.6f}")
    for row in report.rows:
        print(
            f"{row.estimator:8s} ratio={row.ratio:<6g} "
            f"rel_rmse={row.relative_rmse:.6f} se={row.rmse_se:.6f} M={row.n_reps}"
        )
    print(f"results written to {report.out_dir}")
    if report.total_failures:
        print(f"estimators failing in every replication: {', '.join(report.total_failures)}")
        return 1
    return 0


def _cmd_verify(args) -> int:
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if "checks" in raw:
            raw["checks"] = tuple(raw["checks"])
        try:
            config = TheoremSuiteConfig(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    else:
        config = TheoremSuiteConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    report = run_theorem_suite(config)
    lines = report.lines()
    for line in lines:
        print(line)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0 if report.passed else 1


def _cmd_gen_fixture(args) -> int:
    dataset = make_synthetic_multiclass(
        args.rows, args.classes, args.features, seed=args.seed, separation=args.separation
    )
    save_csv_dataset(dataset, args.out)
    print(f"wrote {dataset.n_rows} rows, {dataset.n_classes} classes to {args.out}")
    return 0


def _cmd_dilemma(args) -> int:
    inst_is, inst_pw = find_dilemma_instances(DilemmaSearchConfig())
    payload = {"is_wins": inst_is.to_record(), "pw_wins": inst_pw.to_record()}
    if args.mc_reps > 0:
        for key, inst in (("is_wins", inst_is), ("pw_wins", inst_pw)):
            mc_is, mc_pw = monte_carlo_is_variances(inst, args.mc_reps, seed=args.seed)
            payload[key]["mc_var_is"] = mc_is
            payload[key]["mc_var_is_pw"] = mc_pw
            payload[key]["mc_consistent"] = bool(
                (mc_is < mc_pw) == (inst.var_is < inst.var_is_pw)
            )
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = _build_parser().parse_args(argv)
    handlers = {
        "bench": _cmd_bench,
        "verify": _cmd_verify,
        "gen-fixture": _cmd_gen_fixture,
        "dilemma": _cmd_dilemma,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
