"""Command line: ``run``, ``sweep``, ``verify-matching`` and ``verify-invariants``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import fraud, harness
from .core import HarnessFault, InvariantViolation, ParamError, SafetyViolation

EXIT_OK, EXIT_USAGE, EXIT_SAFETY, EXIT_CHECK = 0, 2, 3, 4


def _add_config_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", help="flat key=value file; flags override it")
    for key in harness.KEYS:
        ap.add_argument(f"--{key}", dest=key, default=None)


def _config(args) -> harness.RunConfig:
    overrides = {k: getattr(args, k) for k in harness.KEYS}
    if args.config:
        return harness.load_config(args.config, overrides)
    return harness.build_config({}, overrides)


def _seeds(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part.strip()[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def cmd_run(args) -> int:
    cfg = _config(args)
    report = harness.run(cfg)
    if not cfg.json:
        sys.stdout.write(harness.report_json(cfg, report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    adversaries = args.adversaries.split(",") if args.adversaries else [cfg.adversary]
    configs = harness.grid(replace(cfg, csv=None, json=None, epoch_csv=None, trace=None, board_dump=None),
                           _seeds(args.seeds), adversaries)
    rows, epochs = harness.sweep(configs, args.parallelism)
    columns = harness.CSV_COLUMNS + [harness.STATUS_COLUMN]
    if cfg.csv:
        harness.write_csv(cfg.csv, rows, columns)
    else:
        harness.write_csv(sys.stdout, rows, columns)
    if cfg.epoch_csv:
        harness.write_csv(cfg.epoch_csv, epochs, harness.EPOCH_COLUMNS)
    for name, agg in sorted(harness.aggregate(rows).items()):
        sys.stderr.write(f"{name}: runs={agg['runs']} decisionRate={agg['decisionRate']:.3f} "
                         f"meanEpochs={agg['meanEpochs']:.2f} minMargin={agg['minMargin']:.4g} "
                         f"errors={agg['errors']}\n")
    if any("SafetyViolation" in r[harness.STATUS_COLUMN] for r in rows):
        return EXIT_SAFETY
    if any(r[harness.STATUS_COLUMN] != "ok" for r in rows):
        return EXIT_CHECK
    return EXIT_OK


def cmd_verify_matching(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    failures = 0
    for _ in range(args.graphs):
        g = harness.random_graph(rng, int(rng.integers(2, args.max_n + 1)))
        fast = fraud.rising_tide(g)
        slow = harness.oracle_rising_tide(g, args.step_fraction)
        worst = max(worst, float(np.abs(fast.mu - slow.mu).max()))
        failures += bool(fraud.matching_problems(g, fast))
    lip_fail = 0
    for _ in range(args.graphs):
        g, h, eta_v, eta_e = harness.random_perturbation(rng, int(rng.integers(2, args.max_n + 1)))
        lhs = harness.lipschitz_lhs(g, h)
        lip_fail += lhs > eta_v + 2 * eta_e + 1e-9
    print(f"graphs={args.graphs} maxDeviation={worst:.3e} infeasibleOrNonMaximal={failures} "
          f"lipschitzFailures={lip_fail}")
    return EXIT_OK if worst <= 1e-4 and failures == 0 and lip_fail == 0 else EXIT_CHECK


def cmd_verify_invariants(args) -> int:
    cfg = replace(_config(args), check=True)
    seeds = _seeds(args.seeds) if args.seeds else [cfg.seed]
    worst = {"escapes": 0, "escapes_uncovered": 0, "max_bias_gap": 0, "local_zero_breaks": 0}
    for seed in seeds:
        _, report = harness.simulate(replace(cfg, seed=seed))
        for k in worst:
            worst[k] = max(worst[k], report.stats[k]) if k == "max_bias_gap" else worst[k] + report.stats[k]
        flagged = sum(e.progress_flagged for e in report.epochs)
        print(f"seed={seed} decided={report.decided_value} iterations={report.iterations_used} "
              f"minMargin={report.min_invariant1_margin:.4g} progressFlagged={flagged}")
    print("totals " + " ".join(f"{k}={v}" for k, v in worst.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asyncba", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", help="one seeded run; prints the JSON report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="seed x adversary grid; CSV rows sorted by (adversary, seed)")
    _add_config_flags(p)
    p.add_argument("--seeds", default="1-10", help="e.g. 1-100 or 1,2,5")
    p.add_argument("--adversaries", default=None, help="comma list; defaults to --adversary")
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("verify-matching", help="rising tide vs. small-step oracle and Lipschitz trials")
    p.add_argument("--graphs", type=int, default=200)
    p.add_argument("--max-n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step-fraction", type=float, default=1e-5)
    p.set_defaults(func=cmd_verify_matching)
    p = sub.add_parser("verify-invariants", help="checked runs over seeds; nonzero exit on any violation")
    _add_config_flags(p)
    p.add_argument("--seeds", default=None)
    p.set_defaults(func=cmd_verify_invariants)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SafetyViolation as exc:
        sys.stderr.write(f"SAFETY VIOLATION: {exc}\n")
        return EXIT_SAFETY
    except (InvariantViolation, HarnessFault) as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return EXIT_CHECK
    except (ParamError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
