"""Command-line entry point: ``mirrorquant {check,convex,train,gamma}``.

Exit codes: 0 success, 1 a check or bound failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import convex_bench, harness, invariants
from .optimizers import epsilon_gamma

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

CONVEX_KEYS = {"cases", "t"}
CASE_KEYS = {"problem", "map", "B"}


def _say(args, *msg):
    if not getattr(args, "quiet", False):
        print(*msg)


def _threads():
    raw = os.environ.get("MIRRORQUANT_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, os.cpu_count() or 1)


# -- check --------------------------------------------------------------------


def cmd_check(args):
    results = invariants.run_all(seed=args.seed, inject_ste_bug=args.inject_ste_bug, quick=not args.full)
    for r in results:
        _say(args, r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} suite(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    _say(args, f"all {len(results)} suites passed")
    return EXIT_OK


# -- convex -------------------------------------------------------------------


def parse_convex_config(raw):
    """Validate a convex-suite config; returns ``(cases, ts)``."""
    if not isinstance(raw, dict):
        raise harness.ConfigError("convex config must be a JSON object")
    unknown = sorted(set(raw) - CONVEX_KEYS)
    if unknown:
        raise harness.ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    ts = raw.get("t", list(convex_bench.DEFAULT_T))
    if not isinstance(ts, list) or not ts or not all(isinstance(t, int) and not isinstance(t, bool) and t > 0 for t in ts):
        raise harness.ConfigError("t: expected a non-empty list of positive integers")
    cases = []
    raw_cases = raw.get("cases")
    if raw_cases is None:
        raw_cases = [{"problem": p, "map": m, "B": list(convex_bench.DEFAULT_B)}
                     for p, m in convex_bench.DEFAULT_SUITE]
    if not isinstance(raw_cases, list):
        raise harness.ConfigError("cases: expected a list")
    for i, case in enumerate(raw_cases):
        where = f"cases[{i}]"
        if not isinstance(case, dict):
            raise harness.ConfigError(f"{where}: expected an object")
        unknown = sorted(set(case) - CASE_KEYS)
        if unknown:
            raise harness.ConfigError(f"unknown config key(s): {', '.join(f'{where}.{k}' for k in unknown)}")
        missing = sorted(CASE_KEYS - {"B"} - set(case))
        if missing:
            raise harness.ConfigError(f"{where}: missing key(s) {', '.join(missing)}")
        problem, map_id = case["problem"], case["map"]
        if problem not in convex_bench.PROBLEMS:
            raise harness.ConfigError(f"{where}.problem: unknown problem id {problem!r}")
        try:
            prob = convex_bench.PROBLEMS[problem]()
            convex_bench._check_pair(prob, convex_bench.make_map(map_id, prob))
        except ValueError as exc:
            raise harness.ConfigError(f"{where}.map: {exc}") from None
        Bs = case.get("B", list(convex_bench.DEFAULT_B))
        if not isinstance(Bs, list) or not all(isinstance(b, (int, float)) and not isinstance(b, bool) and b >= 1 for b in Bs):
            raise harness.ConfigError(f"{where}.B: expected a list of numbers >= 1")
        for B in Bs:
            cases.append((problem, map_id, float(B)))
    return cases, ts


def cmd_convex(args):
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise harness.ConfigError(f"{args.config}: {exc}") from None
    cases, ts = parse_convex_config(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        futures = [pool.submit(convex_bench.run_case, p, m, B, ts) for p, m, B in cases]
        all_reports = [f.result() for f in futures]

    summary = io.StringIO()
    w = csv.writer(summary, lineterminator="\n")
    w.writerow(["problem", "map", "B", "t", "R", "L", "rho", "eta", "gap", "bound", "ok"])
    failures = 0
    for (p, m, B), reports in zip(cases, all_reports):
        name = f"{p}__{m}__B{B:g}.csv"
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            fh.write(convex_bench.reports_to_csv(reports))
        for r in reports:
            pr = r.params
            w.writerow([p, m, repr(B), pr.t, repr(pr.R), repr(pr.L), repr(pr.rho), repr(pr.eta),
                        repr(r.gap), repr(r.bound), int(r.ok)])
            failures += not r.ok
            _say(args, f"{p:15s} {m:17s} B={B:<6g} t={pr.t:<6d} gap={r.gap:.4e} "
                       f"bound={r.bound:.4e} {'ok' if r.ok else 'EXCEEDED'}")
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(summary.getvalue())
    _say(args, f"{len(cases)} case(s), {failures} bound violation(s), "
               f"{time.perf_counter() - start:.1f}s; CSVs in {out}")
    return EXIT_FAIL if failures else EXIT_OK


# -- train --------------------------------------------------------------------


def cmd_train(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, data=replace(cfg.data, seed=None))
    result = harness.train(cfg)
    csv_path, json_path = harness.write_outputs(result, args.out)
    _say(args, f"float-eval test accuracy:     {result.final_float_test_acc:.4f}")
    _say(args, f"quantized-eval test accuracy: {result.final_test_acc:.4f}")
    _say(args, f"best iteration {result.best_iter}; wrote {csv_path} and {json_path}")
    return EXIT_OK


# -- gamma --------------------------------------------------------------------


def cmd_gamma(args):
    gamma = epsilon_gamma(args.B, args.eps)
    print(repr(gamma))
    _say(args, f"for every |x| > {gamma:.6g}: 1 - |tanh({args.B:g} x)| < {args.eps:g}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _open_unit(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="mirrorquant", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run the invariant suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true", help="full sample sizes instead of the quick ones")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--inject-ste-bug", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("convex", help="verify the averaged-iterate bound on convex problems")
    p.add_argument("config", nargs="?", help="JSON config (default: built-in suite)")
    p.add_argument("--out", default="convex_out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_convex)

    p = sub.add_parser("train", help="train a quantized MLP from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", default="train_out")
    p.add_argument("--seed", type=int, default=None, help="override the run and dataset seed")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gamma", help="dual magnitude guaranteeing eps-discreteness")
    p.add_argument("--B", type=_positive, required=True)
    p.add_argument("--eps", type=_open_unit, required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_gamma)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, convex_bench.ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except harness.TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
