"""Command-line entry point: ``vnpaas run | compare | decompose``."""

import argparse
import json
import logging
import sys

from . import experiment as ex
from . import template as tpl
from .orchestrator import OrchestratorError, decompose


def _run(args):
    overrides = {"repetitions": args.reps, "duration_s": args.duration_s, "seed": args.seed}
    if args.setup:
        overrides["setups"] = (args.setup,)
    if args.r is not None:
        overrides["r_levels"] = (args.r,)
    if args.config:
        config = ex.ExperimentConfig.load(args.config, **overrides)
    else:
        config = ex.ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    bundle = ex.run(config, args.out)
    for run in bundle.runs:
        totals = run.ledger.totals()
        print(f"{run.run_id}\tsamples={len(run.samples)}\tgenerated={totals['generated']}\t"
              f"completed={totals['completed']}\tdropped={totals['dropped']}\t"
              f"in_flight={totals['in_flight_at_end']}")
    if args.out:
        print(f"results written to {args.out}")
    return 0


def _compare(args):
    report = ex.compare(ex.load_results(args.full), ex.load_results(args.split))
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _decompose(args):
    with open(args.template) as fh:
        template = tpl.parse(fh.read())
    with open(args.placement) as fh:
        placement = tpl.load_document(fh.read()) or {}
    placement = {str(k): str(v) for k, v in placement.items() if k != "__line__"}
    plan = decompose(template, placement, ns_instance_id=args.ns_id)
    sys.stdout.write(plan.serialize())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="vnpaas", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full/split experiment matrix")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--setup", choices=ex.SETUPS)
    p.add_argument("--r", type=float, help="single utilization level")
    p.add_argument("--reps", type=int)
    p.add_argument("--duration-s", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_run)

    p = sub.add_parser("compare", help="isolation report from two result directories")
    p.add_argument("--full", required=True)
    p.add_argument("--split", required=True)
    p.set_defaults(func=_compare)

    p = sub.add_parser("decompose", help="print the deployment plan for a placement")
    p.add_argument("--template", required=True)
    p.add_argument("--placement", required=True)
    p.add_argument("--ns-id", default=None)
    p.set_defaults(func=_decompose)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ex.ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (tpl.TemplateError, OrchestratorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ex.UsageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
