"""Command-line interface: ``changeframe <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys

import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig
from .ci import compare_onsets
from .detection import extract_regions
from .exceptions import (
    ChangeFrameError,
    DataError,
    DomainError,
    InvalidParameterError,
    NumericalError,
)
from .fitting import FitOptions
from .io import (
    WINDOW_MODES,
    ThresholdSpec,
    analyse,
    batch_screen,
    batch_to_csv,
    batch_to_dicts,
    dumps_json,
    parse_dataset,
    render_report,
    write_text,
)
from .simulate import (
    SIGMA_LEVELS,
    builtin_scenario,
    run_simulation,
    summaries_to_csv,
    summaries_to_json,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SEED_REQUIRED = ("band", "ci", "simulate")
FORMATS = {
    "fit": ("json", "csv"),
    "band": ("json", "csv", "svg"),
    "detect": ("json", "csv", "svg"),
    "ci": ("json", "csv"),
    "compare": ("json", "csv"),
    "simulate": ("json", "csv"),
    "batch": ("json", "csv"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str):
    if text == "auto":
        return "auto"
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be a non-negative integer or 'auto', got {text!r}")
    if val < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return val


def _window(text: str):
    try:
        lo, hi = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be LO,HI, got {text!r}")
    if not lo <= hi:
        raise argparse.ArgumentTypeError(f"window lower bound {lo} exceeds upper bound {hi}")
    return lo, hi


def _positive_int(text: str):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _add_common(p, command):
    p.add_argument("--out", "-o", help="output file (default: stdout)")
    p.add_argument("--format", choices=FORMATS[command], default="json")
    p.add_argument("--jobs", type=_positive_int, default=1,
                   help="worker threads for bootstrap refits (output does not depend on it)")
    p.add_argument("--seed", type=_seed, default=None,
                   help="master seed, or 'auto' for a fresh one (reported in the output)")


def _add_model(p):
    p.add_argument("--model", choices=("4pll", "beta", "auto"), default="auto")
    p.add_argument("--scal", type=float, default=None,
                   help="beta scaling constant (default 1.2 * last time point)")


def _add_band(p, b3=False):
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--b1", type=int, default=500)
    p.add_argument("--b2", type=int, default=25)
    if b3:
        p.add_argument("--b3", type=int, default=500)
    p.add_argument("--grid-step", type=float, default=0.1)


def _add_lambda(p):
    p.add_argument("--lambda", dest="lam", type=float, action="append",
                   help="absolute threshold on |f'| (repeatable)")
    p.add_argument("--fold", type=float, default=None,
                   help="threshold as log2(FOLD)/(FRACTION * duration); default 1.5")
    p.add_argument("--fraction", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="changeframe",
                     description="Detect periods of relevant change in time-response data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit 4pLL/beta models and report AIC")
    p.add_argument("input")
    _add_model(p)
    _add_common(p, "fit")

    for name, helptext in (("band", "lower simultaneous confidence band for |f'|"),
                           ("detect", "band plus periods above the threshold")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("input")
        _add_model(p)
        _add_band(p)
        _add_lambda(p)
        _add_common(p, name)

    p = sub.add_parser("ci", help="percentile intervals for start, end and max times")
    p.add_argument("input")
    _add_model(p)
    _add_band(p, b3=True)
    _add_lambda(p)
    _add_common(p, "ci")

    p = sub.add_parser("compare", help="difference of change onsets between two groups")
    p.add_argument("input", help="group A")
    p.add_argument("input_b", metavar="input-b", help="group B")
    _add_model(p)
    _add_band(p, b3=True)
    _add_lambda(p)
    _add_common(p, "compare")

    p = sub.add_parser("simulate", help="run reference scenarios")
    p.add_argument("--scenario", action="append", required=True,
                   help="scenario id 1-6 or 'all' (repeatable)")
    p.add_argument("--sigma-level", action="append", default=None,
                   help=f"one of {', '.join(SIGMA_LEVELS)} or 'all' (repeatable; default medium)")
    p.add_argument("--runs", type=_positive_int, default=100)
    p.add_argument("--keep-runs", action="store_true", help="include per-run periods (json)")
    _add_band(p)
    _add_common(p, "simulate")

    p = sub.add_parser("batch", help="screen many series (id,time,value) against a window")
    p.add_argument("input")
    _add_model(p)
    _add_band(p)
    _add_lambda(p)
    p.add_argument("--window", type=_window, default=None, help="LO,HI")
    p.add_argument("--window-mode", choices=WINDOW_MODES, default="contain")
    _add_common(p, "batch")
    return parser


def _resolve_seed(args) -> int:
    if args.seed is None:
        if args.command in SEED_REQUIRED:
            raise UsageError(f"--seed is required for '{args.command}' (use --seed auto for a fresh one)")
        return 0
    if args.seed == "auto":
        return int(np.random.SeedSequence().entropy % (2 ** 63))
    return args.seed


def _thresholds(args) -> ThresholdSpec:
    lam = getattr(args, "lam", None)
    if lam and (args.fold is not None or args.fraction is not None):
        raise UsageError("give either --lambda or --fold/--fraction, not both")
    if lam:
        if any(v < 0 for v in lam):
            raise UsageError("--lambda must be non-negative")
        return ThresholdSpec(values=tuple(lam))
    return ThresholdSpec(fold=1.5 if args.fold is None else args.fold,
                         fraction=1.0 if args.fraction is None else args.fraction)


def _config(args, seed) -> BootstrapConfig:
    return BootstrapConfig(b1=args.b1, b2=args.b2, alpha=args.alpha, seed=seed,
                           grid_step=args.grid_step, n_jobs=args.jobs, fit_options=FitOptions())


def _cmd_fit(args):
    data = parse_dataset(args.input, batch=False)
    rep = analyse(data, args.model, args.scal, band=False)
    return render_report(rep, args.format)


def _cmd_band(args, seed):
    data = parse_dataset(args.input, batch=False)
    spec = _thresholds(args)
    rep = analyse(data, args.model, args.scal, spec, _config(args, seed))
    return render_report(rep, args.format)


def _cmd_ci(args, seed):
    data = parse_dataset(args.input, batch=False)
    spec = _thresholds(args)
    rep = analyse(data, args.model, args.scal, spec, _config(args, seed), b3=args.b3)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", "kind", "estimate", "lower", "upper", "valid_runs"])
        for c in rep.cis:
            w.writerow([c.subset + 1, c.kind, repr(c.estimate), repr(c.lower), repr(c.upper),
                        c.valid_runs])
        return buf.getvalue()
    return render_report(rep, "json")


def _cmd_compare(args, seed):
    data_a = parse_dataset(args.input, batch=False)
    data_b = parse_dataset(args.input_b, batch=False)
    spec = _thresholds(args)
    cfg = _config(args, seed)
    rep_a = analyse(data_a, args.model, args.scal, spec, cfg)
    rep_b = analyse(data_b, args.model, args.scal, spec, cfg)
    lam = rep_a.thresholds[0].value
    # both groups are judged against group A's threshold
    ra = rep_a.reports[0]
    rb = extract_regions(rep_b.band, lam)
    res = compare_onsets(data_a, data_b, rep_a.fit, rep_b.fit, cfg, lam, args.b3, ra, rb)
    out = {"lambda": lam, "model_a": rep_a.fit.spec.name, "model_b": rep_b.fit.spec.name,
           "start_a": res.start_a, "start_b": res.start_b, "difference": res.difference,
           "lower": res.lower, "upper": res.upper, "pairs": res.pairs, "dropped": res.dropped,
           "config": {**rep_a.config, "b3": args.b3}}
    if args.format == "csv":
        keys = ["lambda", "model_a", "model_b", "start_a", "start_b", "difference", "lower",
                "upper", "pairs", "dropped"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        w.writerow([repr(out[k]) if isinstance(out[k], float) else out[k] for k in keys])
        return buf.getvalue()
    return dumps_json(out)


def _expand(values, allowed, default):
    out = []
    for v in values or [default]:
        for part in str(v).split(","):
            part = part.strip().lower()
            if part == "all":
                out.extend(allowed)
            else:
                out.append(part)
    return list(dict.fromkeys(out))


def _cmd_simulate(args, seed):
    ids = []
    for s in _expand(args.scenario, [str(i) for i in range(1, 7)], "all"):
        try:
            ids.append(int(s))
        except ValueError:
            raise UsageError(f"--scenario must be 1-6 or 'all', got {s!r}") from None
    levels = _expand(args.sigma_level, list(SIGMA_LEVELS), "medium")
    cfg = _config(args, seed)
    summaries = [run_simulation(builtin_scenario(i, lev), args.runs, cfg, keep_runs=args.keep_runs)
                 for i in ids for lev in levels]
    if args.format == "csv":
        return summaries_to_csv(summaries)
    return summaries_to_json(summaries)


def _cmd_batch(args, seed):
    datasets = parse_dataset(args.input, batch=True)
    cfg = _config(args, seed)
    results = batch_screen(datasets, args.window, args.window_mode, args.model, args.scal,
                           _thresholds(args), cfg, n_jobs=args.jobs)
    if args.format == "csv":
        return batch_to_csv(results)
    return dumps_json({"window": None if args.window is None else list(args.window),
                       "window_mode": args.window_mode, "config": {
                           "b1": cfg.b1, "b2": cfg.b2, "alpha": cfg.alpha, "seed": cfg.seed,
                           "grid_step": cfg.grid_step},
                       "series": batch_to_dicts(results)})


def run(args) -> str:
    if args.command == "fit":
        return _cmd_fit(args)
    seed = _resolve_seed(args)
    handler = {"band": _cmd_band, "detect": _cmd_band, "ci": _cmd_ci, "compare": _cmd_compare,
               "simulate": _cmd_simulate, "batch": _cmd_batch}[args.command]
    return handler(args, seed)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = run(args)
        write_text(text, args.out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"changeframe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidParameterError as exc:
        print(f"changeframe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError, OSError) as exc:
        print(f"changeframe: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ChangeFrameError) as exc:
        print(f"changeframe: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
