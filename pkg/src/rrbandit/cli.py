"""Command-line entry point.

Subcommands
-----------
run <config>            execute the configured experiment, write traces
analyze <trace_dir>     recompute statistics and pass/fail verdicts
certify-kernel <config> grid PSD certificate for kernel domination
estimate-prior <config> Monte-Carlo small-ball constants of the prior
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError
from .harness import analyze, certify_kernel, estimate_prior, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrbandit",
        description="Randomized regularized bandit experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("config", help="INI experiment configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--workers", type=int, default=None,
                       help="replication worker pool size")
    p_run.add_argument("--out", default=None, help="output directory for traces")
    p_run.add_argument("--oracle-diagnostics", action="store_true", default=None,
                       help="log oracle-only diagnostics (init distance, coverage)")

    p_an = sub.add_parser("analyze", help="analyze a trace directory")
    p_an.add_argument("trace_dir")
    p_an.add_argument("--out", default=None, help="where to write report.json")
    p_an.add_argument("--min-traces", type=int, default=20)

    p_ck = sub.add_parser("certify-kernel", help="kernel domination certificate")
    p_ck.add_argument("config")

    p_ep = sub.add_parser("estimate-prior", help="small-ball prior estimation")
    p_ep.add_argument("config")

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            manifest = run_experiment(args.config, out_dir=args.out,
                                      workers=args.workers, seed=args.seed,
                                      oracle=args.oracle_diagnostics)
            print(f"wrote {manifest['replications']} traces "
                  f"({manifest['horizon']} rounds each) for experiment "
                  f"'{manifest['name']}'")
            return 0
        if args.command == "analyze":
            report = analyze(args.trace_dir, min_traces=args.min_traces)
            for line in report.lines():
                print(line)
            out = args.out or os.path.join(args.trace_dir, "report.json")
            with open(out, "w", encoding="utf-8") as fh:
                json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            failed = any(flag is False for flag in
                         (report.coverage_pass, report.variance_pass, report.ratio_pass))
            return 1 if failed else 0
        if args.command == "certify-kernel":
            result = certify_kernel(args.config)
            print(json.dumps(result, indent=2, sort_keys=True))
            return 0 if result["passed"] else 1
        if args.command == "estimate-prior":
            print(json.dumps(estimate_prior(args.config), indent=2, sort_keys=True))
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
