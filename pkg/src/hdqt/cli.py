"""Command-line entry point: ``hdqt run``, ``hdqt sweep``, ``hdqt plot``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .data import DataError
from .experiment import (
    FIGURES,
    METHODS,
    ConfigError,
    ExperimentConfig,
    emit_plotdata,
    emit_results,
    load_records,
    run_experiment,
    sweep,
)
from .numerics import ParameterError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("hdqt")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p):
    p.add_argument("--config", help="JSON experiment config; omitted keys take defaults")
    p.add_argument("--seed", type=int, action="append", help="seed to run (repeatable; overrides config)")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--dataset", help="feature CSV path (switches the dataset source to csv)")
    p.add_argument("--epochs", type=int, help="epochs per task")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--format", choices=("json", "csv", "both"), default="both")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors, not argparse's default exit 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="hdqt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration over its seeds")
    _common(run)
    run.add_argument("--bits", type=int, help="input bit width (accumulator defaults to twice this)")
    run.add_argument("--accum", type=int, help="accumulator bit width")
    run.add_argument("--fp", action="store_true", help="unquantized baseline")

    sw = sub.add_parser("sweep", help="bit-width sweep with paired seeds")
    _common(sw)
    sw.add_argument("--axis", choices=("input", "accum"), required=True)
    sw.add_argument("--values", type=_int_list, required=True)

    plot = sub.add_parser("plot", help="aggregate saved records into plot data")
    plot.add_argument("--figure", choices=FIGURES, required=True)
    plot.add_argument("--in", dest="inp", required=True, help="results.json or a directory of them")
    plot.add_argument("--out", required=True, help="CSV plot-data path")
    plot.add_argument("--svg", help="also render an SVG here (needs matplotlib)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed:
        cfg.seeds = list(args.seed)
    if args.method:
        cfg.method = args.method
    if args.dataset:
        cfg.dataset = replace(cfg.dataset, source="csv", path=args.dataset)
    if args.epochs is not None:
        cfg.hp = replace(cfg.hp, epochs=args.epochs)
    if getattr(args, "fp", False):
        if args.bits is not None or args.accum is not None:
            raise ConfigError("--fp cannot be combined with --bits/--accum")
        cfg.quant = "fp"
    elif getattr(args, "bits", None) is not None or getattr(args, "accum", None) is not None:
        q = {} if cfg.quant == "fp" else dict(cfg.quant)
        if args.bits is not None:
            q["input_bits"] = args.bits
            q["accum_bits"] = 2 * args.bits
        if args.accum is not None:
            q["accum_bits"] = args.accum
        cfg.quant = q
    return cfg.validate()


def _emit(records, args):
    fmts = ("json", "csv") if args.format == "both" else (args.format,)
    for fmt in fmts:
        path = emit_results(records, args.out, fmt)
        print(f"wrote {path}")
    for r in records:
        print(f"{r.label} seed={r.seed} final_accuracy={r.final_accuracy:.4f}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            records = load_records(args.inp)
            path = emit_plotdata(records, args.figure, args.out, args.svg)
            print(f"wrote {path}")
            return EXIT_OK
        cfg = resolve_config(args)
        records = run_experiment(cfg) if args.command == "run" else sweep(cfg, args.axis, args.values)
        _emit(records, args)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
