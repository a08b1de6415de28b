"""``manifold-codec`` command line.

Subcommands: bounds, oracle, train, sweep, probe, repro, selftest.

Experiment parameters come from an INI config (``--config``) with
``--set key=value`` overrides; see :mod:`manifold_codec.config`. Output
goes to ``--out`` or below ``$MANIFOLD_CODEC_OUT`` (default ``./runs``).

Exit status is 0 on success. Failures print one JSON object on stderr,
``{"error": <category>, "message": ...}``, and exit with the code of the
category in :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from . import config as cfg
from . import harness
from .evaluation import ConverseViolation
from .neural.model import TrainingDiverged

EXIT_CODES = {
    "internal": 1,
    "config": 2,
    "io": 3,
    "converse-violation": 4,
    "training-diverged": 5,
    "repro-failed": 6,
    "selftest-failed": 7,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _config_args(p):
    p.add_argument("-c", "--config", help="INI config file")
    p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("-o", "--out", help="output directory (default: under $%s)" % harness.OUT_ENV)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="manifold-codec", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", help="lower (dual) and upper (biuniform) entropy-distortion curves")
    _config_args(p)
    p = sub.add_parser("oracle", help="evaluate uniform, biuniform or hemisphere oracle quantizers")
    _config_args(p)
    p = sub.add_parser("train", help="train one neural compressor and evaluate it")
    _config_args(p)
    p = sub.add_parser("sweep", help="train over a lambda grid and hull the results")
    _config_args(p)
    p = sub.add_parser("probe", help="symbol and reconstruction tables over a latent grid")
    _config_args(p)

    p = sub.add_parser("repro", help="reproduce one figure's data as CSV")
    p.add_argument("figure", choices=harness.FIGURES)
    p.add_argument("-o", "--out", help="output directory (default: $%s/<figure>)" % harness.OUT_ENV)
    p.add_argument("--full", action="store_true", help="escalate from desk scale to full scale")
    p.add_argument("--quick", action="store_true", help="acceptance scale (minutes on one core)")
    p.add_argument("--iterations", type=int, help="override training iterations")
    p.add_argument("--seeds", type=int, help="override the number of seeds")
    p.add_argument("--eval-n", type=int, help="override evaluation sample count")
    p.add_argument("--workers", type=int, default=1, help="parallel training processes")

    sub.add_parser("selftest", help="fast end-to-end sanity checks")
    return ap


def _run_configured(args) -> int:
    values = cfg.load(args.command, args.config, args.set)
    out = harness.resolve_output(args.out, values.get("output", ""), args.command)
    seeds = values.get("seeds") or (values.get("seed", 0),)
    run = harness.Run(out, args.command, cfg.to_text(args.command, values), seeds)
    getattr(harness, f"cmd_{args.command}")(values, run)
    run.finish()
    print(f"wrote {', '.join(sorted(run.files))} to {out}")
    return 0


def _run(args) -> int:
    if args.command == "selftest":
        rows = harness.selftest()
        for name, ok, detail in rows:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not all(ok for _, ok, _ in rows):
            raise CliError("selftest-failed", "one or more self checks failed")
        return 0
    if args.command == "repro":
        if args.full and args.quick:
            raise CliError("config", "--full and --quick are exclusive")
        scale = "full" if args.full else "quick" if args.quick else "desk"
        for name, v in (("--iterations", args.iterations), ("--seeds", args.seeds), ("--eval-n", args.eval_n)):
            if v is not None and v < 1:
                raise CliError("config", f"{name} must be positive")
        out = harness.resolve_output(args.out, "", args.figure)
        run = harness.cmd_repro(args.figure, out, scale, args.iterations, args.seeds, args.eval_n, args.workers)
        print(f"wrote {', '.join(sorted(run.files))} to {out}")
        return 0
    return _run_configured(args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except CliError as exc:
        category, message = exc.category, str(exc)
    except cfg.ConfigError as exc:
        category, message = "config", str(exc)
    except ConverseViolation as exc:
        category, message = "converse-violation", str(exc)
    except TrainingDiverged as exc:
        category, message = "training-diverged", str(exc)
    except harness.ReproError as exc:
        cause = exc.__cause__
        category = "converse-violation" if isinstance(cause, ConverseViolation) else "repro-failed"
        message = str(exc)
    except OSError as exc:
        category, message = "io", str(exc)
    except ValueError as exc:
        category, message = "config", str(exc)
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
