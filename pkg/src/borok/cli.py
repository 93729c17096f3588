"""``borok-bench`` command line.

Exit codes: 0 success, 1 at least one failed run, 2 usage or configuration
error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .errors import BorokError, ConfigError, ParseError, ValidationError
from .tableau import resolve_tableau

log = logging.getLogger("borok.bench")


def _parser():
    parser = argparse.ArgumentParser(prog="borok-bench",
                                     description="Rosenbrock-Krylov experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("integrate", "one adaptive run per configuration (first tolerance)"),
                        ("convergence", "fixed-step convergence table"),
                        ("work-precision", "adaptive tolerance sweep")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment configuration file")
        p.add_argument("--out", help="CSV output path (default: standard output)")
        p.add_argument("--seed", type=int, help="override the problem seed")
        p.add_argument("--label-filter", help="glob on configuration labels, e.g. 'L*'")
    p = sub.add_parser("validate-tableau", help="parse and check a tableau file")
    p.add_argument("tableau", help="built-in name or path")
    return parser


class _StderrHandler(logging.StreamHandler):
    """Stream handler bound to whatever ``sys.stderr`` is at emit time."""

    def __init__(self):
        super().__init__()

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _setup_logging():
    if not log.handlers:
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.propagate = False


def _validate(name):
    try:
        tab = resolve_tableau(name)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"invalid tableau {name}: {exc}", file=sys.stderr)
        return 2
    embedded = "none" if tab.b_hat is None else f"order {tab.order_p_hat}"
    print(f"{tab.name}: s={tab.s} order={tab.order_p} gamma={tab.gamma_diag!r} embedded={embedded}")
    return 0


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    _setup_logging()
    if args.command == "validate-tableau":
        return _validate(args.tableau)
    if not args.config:
        parser.print_usage(sys.stderr)
        print(f"borok-bench {args.command}: error: --config is required", file=sys.stderr)
        return 2
    try:
        cfg = bench.load_config(args.config)
        if args.seed is not None:
            cfg = bench.with_seed(cfg, args.seed)
        if not cfg.configurations(args.label_filter):
            raise ConfigError(f"--label-filter {args.label_filter!r} matches no configuration")
        if args.command == "convergence":
            rows = bench.run_convergence(cfg, args.label_filter)
            fields = bench.CONVERGENCE_FIELDS
        elif args.command == "work-precision":
            rows = bench.run_work_precision(cfg, args.label_filter)
            fields = bench.WORK_FIELDS
        else:
            tols = cfg.tolerances[:1]
            rows = bench.run_work_precision(cfg, args.label_filter, tolerances=tols or None)
            fields = bench.WORK_FIELDS
    except ConfigError as exc:
        print(f"borok-bench {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except BorokError as exc:
        print(f"borok-bench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    text = bench.write_csv(rows, fields, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0 if all(r["status"] == "ok" for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
