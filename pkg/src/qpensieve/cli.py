"""Command-line entry point: ``qpensieve {plan,train,evaluate,ablate,emit-plots}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(non-convergence or non-finite values), 4 I/O error.
"""

import argparse
import json
import sys

from .exceptions import ConfigError, InvalidArgumentError, NonConvergenceError, NumericalError
from .harness import ExperimentConfig, emit_plot_data, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

VERB_MODES = {"plan": "tabular-plan", "train": "agent-train", "evaluate": "evaluate", "ablate": "ablate"}


def parse_seeds(text):
    """``"3"`` -> [3]; ``"0,1,2"`` -> [0, 1, 2]; ``"0-4"`` -> [0, 1, 2, 3, 4]."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return seeds


def build_parser():
    parser = argparse.ArgumentParser(prog="qpensieve", description="Multi-objective soft RL experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in [
        ("plan", "exact tabular planning with an oracle equivalence report"),
        ("train", "train the actor-critic agent"),
        ("evaluate", "evaluate a checkpoint on a preference set"),
        ("ablate", "paired Q-Pensieve versus vanilla runs"),
    ]:
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=parse_seeds, help="seed, comma list or range, e.g. 0-4")
        p.add_argument("--out", help="output directory")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config key with a JSON value, repeatable")
        if verb == "evaluate":
            p.add_argument("--checkpoint", help="checkpoint directory to evaluate")
            p.add_argument("--baseline", help="baseline checkpoint for episodic dominance")
    p = sub.add_parser("emit-plots", help="aggregate learning curves and fronts into CSV")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def resolve_config(args):
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = [f"mode={json.dumps(VERB_MODES[args.verb])}"] + list(args.override)
    if args.seed is not None:
        overrides.append(f"seeds={json.dumps(args.seed)}")
    if args.out:
        overrides.append(f"out_dir={json.dumps(args.out)}")
    if getattr(args, "checkpoint", None):
        overrides.append(f"eval.checkpoint={json.dumps(args.checkpoint)}")
    if getattr(args, "baseline", None):
        overrides.append(f"eval.baseline_checkpoint={json.dumps(args.baseline)}")
    return config.with_overrides(overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "emit-plots":
            for path in emit_plot_data(args.runs, args.out):
                print(path)
            return EXIT_OK
        config = resolve_config(args)
        record = run(config, progress=lambda msg: print(msg, file=sys.stderr))
        print(json.dumps({"run_dir": record.run_dir, "status": record.status, "config_hash": record.config_hash}))
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidArgumentError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
