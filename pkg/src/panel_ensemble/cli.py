"""Command-line interface: ``impute``, ``benchmark`` and ``simulate``.

Exit status is 0 on success, 1 when estimation or input processing fails
(a JSON error object goes to stderr) and 2 for invalid flags. Every option
can also be set through an environment variable named
``PANEL_ENSEMBLE_<OPTION>`` (upper case, dashes as underscores), e.g.
``PANEL_ENSEMBLE_SEED=7``; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Sequence

import numpy as np

from .bench import (
    BenchmarkConfig,
    SyntheticSpec,
    emit_report,
    generate_synthetic_panel,
    pseudo_treatment_eval,
)
from .errors import ConfigError, PanelEnsembleError
from .imputers import METHODS, ImputationResult, impute
from .panel import Panel, dumps_panel, load_panel, restrict, transform

ENV_PREFIX = "PANEL_ENSEMBLE_"
DEFAULT_SEED = 0
IMPUTE_SCHEMA = "panel-ensemble/impute-result/1"

logger = logging.getLogger("panel_ensemble")


class UsageError(Exception):
    """Flag combination that parses but cannot be run (exit 2)."""


def _methods(text: str) -> tuple[str, ...]:
    if text.strip().lower() == "all":
        return METHODS
    out = tuple(m.strip().upper() for m in text.split(",") if m.strip())
    bad = [m for m in out if m not in METHODS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {METHODS} or 'all'")
    return out


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="CV fold seed (default %(default)s)")
    p.add_argument("--fast", action="store_true", help="reuse main-problem penalties inside ensembles")
    p.add_argument("--transform", choices=("level", "log", "growth"), default="level")
    p.add_argument("--format", choices=("long", "wide"), default="long", help="input CSV layout")
    p.add_argument("--S", type=int, default=None, help="held-out periods for ENS_HC")
    p.add_argument("-o", "--output", default="-", help="output path, '-' for stdout")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panel-ensemble",
        description="Counterfactual imputation for panel data with stacked ensembles.",
        epilog=f"Options may also be set via {ENV_PREFIX}<OPTION> environment variables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("impute", help="impute one treated cell and estimate its effect")
    p.add_argument("input", help="panel CSV path, '-' for stdin")
    p.add_argument("--unit", required=True, help="label of the treated unit")
    p.add_argument("--period", required=True, help="label of the treated period")
    p.add_argument("--method", type=_methods, default=("ENS_VC",), help="tag, comma list or 'all'")
    _add_common(p)

    p = sub.add_parser("benchmark", help="pseudo-treatment evaluation over the last periods")
    p.add_argument("input", help="panel CSV path, '-' for stdin")
    p.add_argument("--methods", type=_methods, default=METHODS, help="comma list or 'all'")
    p.add_argument("--T0", type=int, default=None, help="periods before the first pseudo-treated one")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    p.add_argument("--report-format", choices=("json", "csv", "table"), default="json")
    _add_common(p)

    p = sub.add_parser("simulate", help="write a synthetic factor-model panel as long CSV")
    p.add_argument("--N", type=int, default=20)
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--factor-scale", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--fe", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("-o", "--output", default="-")
    return parser


def _env_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _apply_env(parser: argparse.ArgumentParser, environ) -> None:
    """Replace option defaults with ``PANEL_ENSEMBLE_*`` values."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                _apply_env(child, environ)
            continue
        if not action.option_strings or action.dest == "help":
            continue
        raw = environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        try:
            if isinstance(action, argparse._StoreTrueAction):
                action.default = _env_bool(raw)
            elif action.type is not None:
                action.default = action.type(raw)
            else:
                action.default = raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            parser.error(f"{ENV_PREFIX}{action.dest.upper()}: {exc}")
        if action.choices is not None and action.default not in action.choices:
            parser.error(f"{ENV_PREFIX}{action.dest.upper()}: invalid choice {raw!r}")
        action.required = False


# --------------------------------------------------------------------------
# helpers


def _read_panel(path: str, fmt: str) -> Panel:
    if path == "-":
        return load_panel(sys.stdin.read(), fmt)
    with open(path, newline="", encoding="utf-8") as fh:
        return load_panel(fh, fmt)


def _write(path: str, data: bytes) -> None:
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        with open(path, "wb") as fh:
            fh.write(data)


def _plain(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _result_dict(res: ImputationResult, observed: float) -> dict[str, Any]:
    return {
        "method": res.method,
        "value": res.value,
        "effect": observed - res.value,
        "complexity": res.complexity,
        "penalty": None if res.penalty is None else list(res.penalty),
        "diagnostics": _plain(res.diagnostics),
        "metadata": _plain(res.metadata),
    }


# --------------------------------------------------------------------------
# subcommands


def cmd_impute(args) -> int:
    panel = _read_panel(args.input, args.format)
    panel = transform(panel, args.transform)
    i = panel.unit_index(args.unit)
    t = panel.period_index(args.period)
    mp = restrict(panel, i, t)
    observed = float(panel.values[i, t])
    results, errors = [], []
    for m in args.method:
        kw: dict[str, Any] = {}
        if m in ("ENS_VC", "ENS_HC"):
            kw["fast"] = args.fast
        if m == "ENS_HC":
            kw["S"] = args.S
        try:
            results.append(_result_dict(impute(mp, m, seed=args.seed, **kw), observed))
        except PanelEnsembleError as exc:
            errors.append({"method": m, "error": type(exc).__name__, "message": str(exc)})
    doc = {
        "schema": IMPUTE_SCHEMA,
        "unit": str(panel.unit_labels[i]),
        "period": str(panel.period_labels[t]),
        "observed": observed,
        "transform": args.transform,
        "seed": args.seed,
        "fast_mode": args.fast,
        "results": results,
        "errors": errors,
    }
    _write(args.output, (json.dumps(doc, indent=2) + "\n").encode())
    if errors:
        _report_error(errors[0]["error"], f"{len(errors)} method(s) failed", errors)
        return 1
    return 0


def cmd_benchmark(args) -> int:
    panel = _read_panel(args.input, args.format)
    panel = transform(panel, args.transform)
    T = panel.n_periods
    if args.T0 is not None and not 2 <= args.T0 <= T - 1:
        raise UsageError(f"--T0 must lie in [2, {T - 1}] for a panel with {T} periods")
    cfg = BenchmarkConfig(
        methods=args.methods,
        T0=args.T0,
        transform=args.transform,
        S=args.S,
        seed=args.seed,
        fast_mode=args.fast,
    )
    report = pseudo_treatment_eval(panel, cfg, jobs=args.jobs)
    _write(args.output, emit_report(report, args.report_format))
    return 0


def cmd_simulate(args) -> int:
    try:
        spec = SyntheticSpec(
            N=args.N,
            T=args.T,
            rank=args.rank,
            factor_scale=args.factor_scale,
            noise_scale=args.noise,
            fe_scale=args.fe,
            seed=args.seed,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    _write(args.output, dumps_panel(generate_synthetic_panel(spec)).encode())
    return 0


COMMANDS = {"impute": cmd_impute, "benchmark": cmd_benchmark, "simulate": cmd_simulate}


def _report_error(kind: str, message: str, details=None) -> None:
    doc = {"error": kind, "message": message}
    if details is not None:
        doc["details"] = details
    print(json.dumps(doc), file=sys.stderr)


def main(argv: Sequence[str] | None = None, environ=None) -> int:
    parser = build_parser()
    _apply_env(parser, os.environ if environ is None else environ)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except PanelEnsembleError as exc:
        _report_error(type(exc).__name__, str(exc))
        return 1
    except OSError as exc:
        _report_error("IOError", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
