"""Command-line entry point: ``o2oselect <subcommand> ...``.

Exit status is 0 on success, 1 on invalid input or configuration and 2 on
runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .baselines import compute_oracle, normalize_score, run_ours
from .envsim import CurveFamily, FineTuneEnv, curves_to_csv, load_traces, synth_curves
from .errors import DegenerateNormalizationError, InputError, O2OError
from .harness import emit_report, histories_to_jsonl, load_config, run_experiment
from .selector import BudgetLedger, history_to_jsonl
from .valuemodel import fit_ar_arch, forecast_ucb

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _read_series(path: str) -> tuple[list[int], list[float]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["iteration", "value"]:
                raise InputError(f"{path}: expected header iteration,value")
            rows = [(int(r["iteration"]), float(r["value"])) for r in reader]
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    rows.sort()
    return [r[0] for r in rows], [r[1] for r in rows]


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_fit(args) -> int:
    _, values = _read_series(args.input)
    print(json.dumps(fit_ar_arch(values).to_dict(), indent=2))
    return EXIT_OK


def cmd_forecast(args) -> int:
    iterations, values = _read_series(args.input)
    result = forecast_ucb(values, args.horizon, args.paths, args.quantile, args.seed)
    doc = result.to_dict()
    if iterations:
        shift = iterations[-1] - (len(values) - 1)
        doc["horizon"] = [h + shift for h in doc["horizon"]]
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_simulate(args) -> int:
    params = {}
    for item in args.param or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = float(value)
        except ValueError:
            raise InputError(f"--param {key}: {value!r} is not a number") from None
    curve = synth_curves(args.family, args.length, params, args.seed, policy_id=args.policy_id)
    sys.stdout.write(curves_to_csv([curve]))
    return EXIT_OK


def cmd_oracle(args) -> int:
    config = load_config(args.config)
    sel = config.selector
    for spec in config.envs:
        for budget in config.budgets:
            ledger = BudgetLedger(budget, sel.finetune_cost, sel.eval_cost)
            oracle = compute_oracle(FineTuneEnv(spec.config), ledger)
            print(json.dumps({"env": spec.name, "budget": budget, **asdict(oracle)}))
    return EXIT_OK


def cmd_compare(args) -> int:
    report = run_experiment(load_config(args.config))
    _write(emit_report(report, args.format), args.out)
    if args.history:
        Path(args.history).write_text(histories_to_jsonl(report.histories))
    return EXIT_OK


def cmd_select(args) -> int:
    config = load_traces(args.traces, args.sidecar)
    ledger = BudgetLedger(args.budget, args.finetune_cost, args.eval_cost)
    result, history = run_ours(
        FineTuneEnv(config), ledger, args.pseudo_count, args.paths, args.quantile, args.seed
    )
    if args.history:
        Path(args.history).write_text(history_to_jsonl(history))
    oracle = compute_oracle(FineTuneEnv(config), ledger.fresh())
    doc = result.to_dict()
    try:
        doc["normalized_score"] = normalize_score(result.true_value, config.random_policy_value, oracle.best_value)
    except DegenerateNormalizationError:
        doc["normalized_score"] = None
    print(json.dumps({**doc, "consumed_transitions": ledger.consumed}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="o2oselect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit AR(2)-ARCH(1) to a value series CSV (iteration,value)")
    p.add_argument("input")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("forecast", help="simulate UCB forecasts for a value series CSV")
    p.add_argument("input")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--paths", type=int, default=100)
    p.add_argument("--quantile", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("simulate", help="print a synthetic true curve as trace CSV")
    p.add_argument("--family", required=True, choices=[f.value for f in CurveFamily], type=str.upper)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy-id", type=int, default=1)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="family parameter, repeatable")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="print the oracle policy per env and budget")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="run all strategies and emit a score report")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=["markdown", "csv", "json"], default="markdown")
    p.add_argument("--out", default="-")
    p.add_argument("--history", help="write per-iteration selector history as JSON lines")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("select", help="run adaptive selection on a trace CSV")
    p.add_argument("traces")
    p.add_argument("--sidecar")
    p.add_argument("--budget", type=int, required=True, help="online transitions")
    p.add_argument("--finetune-cost", type=int, default=10_000)
    p.add_argument("--eval-cost", type=int, default=10_000)
    p.add_argument("--pseudo-count", type=int, default=5)
    p.add_argument("--paths", type=int, default=100)
    p.add_argument("--quantile", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", help="write per-iteration history as JSON lines")
    p.set_defaults(func=cmd_select)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (O2OError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
