"""Command line entry point: ``qmpher train|eval|plot|inspect``.

Exit codes: 0 success, 2 config error, 3 numerical divergence, 4 I/O error.
"""

import argparse
import json
import logging
import sys

from .errors import ConfigError, QmpHerError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _cmd_train(args):
    from .harness import RunConfig, train

    d = {}
    if args.config:
        d = RunConfig.from_file(args.config).to_dict()
    overrides = {"seed": args.seed, "env": args.env, "algorithm": args.algo, "out_dir": args.out}
    d.update({k: v for k, v in overrides.items() if v is not None})
    if args.epochs is not None:
        d["n_epochs"] = args.epochs
    config = RunConfig.from_dict(d)
    result = train(config)
    last = result.metrics[-1]
    print(f"{result.out_dir}: {len(result.metrics)} epochs, {last.policy_updates} updates, "
          f"final success {last.eval_success_rate:.3f}")


def _cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .harness import evaluate

    agent, spec, _ = load_checkpoint(args.checkpoint)
    env = args.env or spec.name
    if env != spec.name:
        raise ConfigError(f"checkpoint was trained on {spec.name}, not {env}")
    rate = evaluate(agent, env, args.episodes, args.seed)
    print(f"{env} success {rate:.4f} over {args.episodes} episodes (seed {args.seed})")


def _cmd_plot(args):
    from .plotting import plot

    out, table = plot(args.csv, args.out, args.title)
    print(out)
    print(table)


def _cmd_inspect(args):
    from .checkpoint import read_header

    print(json.dumps(read_header(args.checkpoint), indent=2, sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(prog="qmpher", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one training configuration")
    t.add_argument("--config", help="JSON file with RunConfig fields")
    t.add_argument("--seed", type=int)
    t.add_argument("--env")
    t.add_argument("--algo", choices=("her", "qmp_her", "scripted_curriculum"))
    t.add_argument("--out", help="run directory (relative paths honor QMPHER_OUTPUT_ROOT)")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="deterministic-actor success rate of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env")
    e.add_argument("--episodes", type=int, default=50)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_cmd_eval)

    pl = sub.add_parser("plot", help="success-vs-updates curves from metrics CSVs")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("--out", required=True, help="image path (.png, .svg or .pdf)")
    pl.add_argument("--title")
    pl.set_defaults(func=_cmd_plot)

    i = sub.add_parser("inspect", help="print a checkpoint header")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except QmpHerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
