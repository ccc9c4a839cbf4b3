"""
Seeded multi-run experiments across environments, budgets and strategies.

An experiment config is a single JSON document::

    {
      "envs": [
        {"name": "hopper-random", "group": "hopper", "traces": "hopper_random.csv"},
        {"name": "trap-00", "suite": {"seed": 11, "length": 17, "members": [...], ...}}
      ],
      "budgets": [160000],
      "seeds": [0, 1, 2, 3],
      "strategies": ["OPE", "BEST", "OE", "FT", "OURS"],
      "selector": {"pseudo_count": 5, "num_paths": 100, "quantile": 0.95,
                   "finetune_cost": 10000, "eval_cost": 10000}
    }

Trace paths are resolved relative to the config file. A synthetic suite
lists ``members`` as ``{"family", "count", "params"}`` where each param is
either a number or a ``[low, high]`` range sampled uniformly from the suite
seed. Every (env, budget, seed, strategy) cell runs on its own environment
clone; all strategies of one (env, seed) share the same noise seed.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .baselines import Strategy, compute_oracle, normalize_score, run_strategy
from .envsim import CurveFamily, EnvConfig, FineTuneEnv, load_traces, substream, synth_curves
from .errors import ConfigError, InputError, PreconditionError
from .selector import BudgetLedger, IterationLog

__all__ = [
    "SelectorParams",
    "EnvSpec",
    "ExperimentConfig",
    "GroupStat",
    "AggregateReport",
    "expand_suite",
    "suite_families",
    "config_from_dict",
    "load_config",
    "derive_seed",
    "run_experiment",
    "aggregate",
    "emit_report",
    "histories_to_jsonl",
    "regression_trap_suite",
    "regression_trap_config",
]

ALL_STRATEGIES = tuple(s.value for s in Strategy)
STREAM_SUITE = 11
SEED_ENV = 21
SEED_SELECTOR = 22


@dataclass(frozen=True)
class SelectorParams:
    pseudo_count: int = 5
    num_paths: int = 100
    quantile: float = 0.95
    finetune_cost: int = 10_000
    eval_cost: int = 10_000

    def problems(self) -> list[str]:
        out = []
        if self.pseudo_count < 3:
            out.append(f"selector.pseudo_count must be >= 3, got {self.pseudo_count}")
        if self.num_paths < 1:
            out.append(f"selector.num_paths must be >= 1, got {self.num_paths}")
        if not 0.0 < self.quantile < 1.0:
            out.append(f"selector.quantile must lie in (0, 1), got {self.quantile}")
        if self.finetune_cost < 1 or self.eval_cost < 1:
            out.append("selector.finetune_cost and selector.eval_cost must be positive")
        return out


@dataclass(frozen=True)
class EnvSpec:
    name: str
    group: str
    config: EnvConfig


@dataclass(frozen=True)
class ExperimentConfig:
    envs: tuple[EnvSpec, ...]
    budgets: tuple[int, ...]
    seeds: tuple[int, ...]
    strategies: tuple[str, ...] = ALL_STRATEGIES
    selector: SelectorParams = field(default_factory=SelectorParams)

    def validate(self) -> None:
        """Raise ``ConfigError`` listing every violation found."""
        problems = list(self.selector.problems())
        if not self.envs:
            problems.append("envs must not be empty")
        names = [e.name for e in self.envs]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            problems.append(f"duplicate env names {dupes}")
        if not self.seeds:
            problems.append("seeds must not be empty")
        if not self.budgets:
            problems.append("budgets must not be empty")
        bad = [b for b in self.budgets if not (isinstance(b, int) and b > 0)]
        if bad:
            problems.append(f"budgets must be positive integers, got {bad}")
        unknown = [s for s in self.strategies if s not in ALL_STRATEGIES]
        if unknown:
            problems.append(f"unknown strategies {unknown}")
        if not problems:
            sel = self.selector
            for spec in self.envs:
                cfg = spec.config
                for budget in self.budgets:
                    n_iter = budget // (sel.finetune_cost + sel.eval_cost)
                    short = [c.policy_id for c in cfg.curves if len(c) <= n_iter]
                    if short and {"FT", "OURS"} & set(self.strategies):
                        problems.append(
                            f"env {spec.name}, budget {budget}: curves {short} are not "
                            f"longer than {n_iter} iterations"
                        )
                    if n_iter < 1 and {"FT", "OURS"} & set(self.strategies):
                        problems.append(f"env {spec.name}, budget {budget}: no full iteration fits")
                    if "OE" in self.strategies and budget < cfg.num_policies * sel.eval_cost:
                        problems.append(
                            f"env {spec.name}, budget {budget}: OE needs at least "
                            f"{cfg.num_policies * sel.eval_cost} transitions"
                        )
                    ledger = BudgetLedger(budget, sel.finetune_cost, sel.eval_cost)
                    oracle = compute_oracle(FineTuneEnv(cfg), ledger)
                    if not oracle.best_value > cfg.random_policy_value:
                        problems.append(
                            f"env {spec.name}, budget {budget}: oracle value {oracle.best_value} "
                            f"does not exceed random_policy_value {cfg.random_policy_value}"
                        )
        if problems:
            raise ConfigError(problems)


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    head, *rest = (int(k) for k in keys)
    return int(np.random.SeedSequence(head, spawn_key=tuple(rest)).generate_state(1)[0])


def _sample(value: Any, rng: np.random.Generator, where: str) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = float(value[0]), float(value[1])
        if hi < lo:
            raise InputError(f"{where}: range [{lo}, {hi}] is reversed")
        return float(rng.uniform(lo, hi))
    raise InputError(f"{where}: expected a number or a [low, high] range, got {value!r}")


def _draw_suite(decl: Mapping[str, Any]) -> list[tuple[CurveFamily, dict, int]]:
    """(family, params, curve seed) per policy, in final policy-id order."""
    rng = substream(int(decl.get("seed", 0)), STREAM_SUITE)
    drawn = []
    for m_idx, member in enumerate(decl.get("members", [])):
        family = CurveFamily.parse(member.get("family"))
        for _ in range(int(member.get("count", 1))):
            params = {
                k: _sample(v, rng, f"members[{m_idx}].params.{k}")
                for k, v in sorted(member.get("params", {}).items())
            }
            drawn.append((family, params, int(rng.integers(2**31))))
    if not drawn:
        raise InputError("suite declares no members")
    if decl.get("shuffle", True):
        drawn = [drawn[i] for i in rng.permutation(len(drawn))]
    return drawn


def expand_suite(decl: Mapping[str, Any]) -> EnvConfig:
    """Expand a synthetic suite declaration into an ``EnvConfig``.

    Members are expanded in order, then the policy order is shuffled (unless
    ``"shuffle": false``) so that policy ids carry no family information.
    """
    length = int(decl.get("length", 17))
    curves = [
        synth_curves(family, length, params, curve_seed, policy_id=pid)
        for pid, (family, params, curve_seed) in enumerate(_draw_suite(decl), start=1)
    ]
    scalars = {
        k: float(decl[k])
        for k in ("eval_noise_std", "ope_noise_std", "ope_bias", "random_policy_value", "behavior_value")
        if k in decl
    }
    return EnvConfig(tuple(curves), seed=int(decl.get("seed", 0)), **scalars)


def suite_families(decl: Mapping[str, Any]) -> list[CurveFamily]:
    """Family of each policy; index ``i`` is policy ``i + 1``."""
    return [family for family, _, _ in _draw_suite(decl)]


def _env_spec(raw: Mapping[str, Any], base_dir: Path, idx: int, problems: list[str]) -> EnvSpec | None:
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        problems.append(f"envs[{idx}]: missing name")
        return None
    group = str(raw.get("group", name))
    try:
        if "traces" in raw:
            path = base_dir / raw["traces"]
            sidecar = base_dir / raw["sidecar"] if "sidecar" in raw else None
            cfg = load_traces(path, sidecar)
        elif "suite" in raw:
            cfg = expand_suite(raw["suite"])
        else:
            problems.append(f"envs[{idx}] ({name}): needs either 'traces' or 'suite'")
            return None
    except ConfigError as exc:
        problems.extend(f"envs[{idx}] ({name}): {p}" for p in exc.problems)
        return None
    except InputError as exc:
        problems.append(f"envs[{idx}] ({name}): {exc}")
        return None
    return EnvSpec(name, group, cfg)


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    problems: list[str] = []
    known = {"envs", "budgets", "seeds", "strategies", "selector"}
    extra = sorted(set(data) - known)
    if extra:
        problems.append(f"unknown top-level keys {extra}")
    envs = []
    for idx, raw in enumerate(data.get("envs", [])):
        spec = _env_spec(raw, base_dir, idx, problems)
        if spec is not None:
            envs.append(spec)
    sel_raw = dict(data.get("selector", {}))
    sel_extra = sorted(set(sel_raw) - set(SelectorParams.__dataclass_fields__))
    if sel_extra:
        problems.append(f"unknown selector keys {sel_extra}")
        sel_raw = {k: v for k, v in sel_raw.items() if k not in sel_extra}
    config = ExperimentConfig(
        envs=tuple(envs),
        budgets=tuple(data.get("budgets", [])),
        seeds=tuple(data.get("seeds", [])),
        strategies=tuple(str(s).upper() for s in data.get("strategies", ALL_STRATEGIES)),
        selector=SelectorParams(**sel_raw),
    )
    try:
        config.validate()
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(data, path.parent)


@dataclass(frozen=True)
class GroupStat:
    env: str
    group: str
    budget: int
    strategy: str
    mean: float
    std: float
    n: int
    single_seed: bool

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "group": self.group,
            "budget": self.budget,
            "strategy": self.strategy,
            "mean": self.mean,
            "std": self.std,
            "n_seeds": self.n,
            "single_seed": self.single_seed,
        }


@dataclass
class AggregateReport:
    envs: list[tuple[str, str]]
    budgets: list[int]
    strategies: list[str]
    stats: list[GroupStat]
    rows: list[dict]
    histories: dict[tuple[str, int, int], list[IterationLog]] = field(default_factory=dict)

    def stat(self, env: str, budget: int, strategy: str) -> GroupStat:
        for s in self.stats:
            if (s.env, s.budget, s.strategy) == (env, budget, strategy):
                return s
        raise KeyError((env, budget, strategy))

    def group_averages(self, budget: int, strategy: str) -> list[tuple[str, float, float]]:
        """Per group: mean of env means and mean of env stds."""
        out = []
        for group in dict.fromkeys(g for _, g in self.envs):
            cells = [self.stat(e, budget, strategy) for e, g in self.envs if g == group]
            out.append((group, statistics.fmean(c.mean for c in cells), statistics.fmean(c.std for c in cells)))
        return out

    def overall_average(self, budget: int, strategy: str) -> tuple[float, float]:
        """Unweighted mean over groups of the group averages."""
        groups = self.group_averages(budget, strategy)
        return statistics.fmean(g[1] for g in groups), statistics.fmean(g[2] for g in groups)

    def strategy_mean(self, budget: int, strategy: str) -> float:
        """Mean normalized score over every env and seed."""
        vals = [r["normalized_score"] for r in self.rows if r["budget"] == budget and r["strategy"] == strategy]
        return statistics.fmean(vals)


def aggregate(rows: Sequence[Mapping[str, Any]], strategies: Sequence[str] | None = None) -> AggregateReport:
    """Group raw per-seed rows by (env, budget, strategy) and compute mean and sample std.

    Groups keep first-appearance order. A group with a single seed reports
    std 0 and is flagged ``single_seed``.
    """
    rows = [dict(r) for r in rows]
    if not rows and strategies is None:
        raise PreconditionError("nothing to aggregate")
    envs = list(dict.fromkeys((r["env"], r.get("group", r["env"])) for r in rows))
    budgets = list(dict.fromkeys(r["budget"] for r in rows))
    if strategies is None:
        strategies = list(dict.fromkeys(r["strategy"] for r in rows))
    buckets: dict[tuple, list[float]] = {}
    for r in rows:
        buckets.setdefault((r["env"], r["budget"], r["strategy"]), []).append(float(r["normalized_score"]))

    stats = []
    for env, group in envs:
        for budget in budgets:
            for strategy in strategies:
                vals = buckets.get((env, budget, strategy))
                if not vals:
                    raise PreconditionError(f"empty group ({env}, {budget}, {strategy})")
                std = statistics.stdev(vals) if len(vals) > 1 else 0.0
                stats.append(
                    GroupStat(env, group, budget, strategy, statistics.fmean(vals), std, len(vals), len(vals) == 1)
                )
    return AggregateReport(envs, budgets, list(strategies), stats, rows)


def run_experiment(config: ExperimentConfig) -> AggregateReport:
    config.validate()
    sel = config.selector
    rows = []
    histories = {}
    for spec in config.envs:
        for budget in config.budgets:
            ledger = BudgetLedger(budget, sel.finetune_cost, sel.eval_cost)
            oracle = compute_oracle(FineTuneEnv(spec.config), ledger)
            v_min = spec.config.random_policy_value
            for seed in config.seeds:
                env_cfg = spec.config.with_seed(derive_seed(spec.config.seed, SEED_ENV, seed))
                selector_seed = derive_seed(spec.config.seed, SEED_SELECTOR, seed)
                for strategy in config.strategies:
                    result, history = run_strategy(
                        strategy,
                        FineTuneEnv(env_cfg),
                        ledger.fresh(),
                        sel.pseudo_count,
                        sel.num_paths,
                        sel.quantile,
                        selector_seed,
                    )
                    if strategy == Strategy.OURS.value:
                        histories[(spec.name, budget, seed)] = history
                    rows.append(
                        {
                            "env": spec.name,
                            "group": spec.group,
                            "budget": budget,
                            "seed": seed,
                            "oracle_value": oracle.best_value,
                            **result.to_dict(),
                            "normalized_score": normalize_score(result.true_value, v_min, oracle.best_value),
                        }
                    )
    report = aggregate(rows, list(config.strategies)) if rows else AggregateReport([], [], [], [], [])
    if not rows:
        report.envs = [(e.name, e.group) for e in config.envs]
        report.budgets = list(config.budgets)
    report.histories = histories
    return report


def _fmt(mean: float, std: float) -> str:
    return f"{mean:.1f} ± {std:.1f}"


def _markdown(report: AggregateReport) -> str:
    out = []
    header = "| " + " | ".join(["Group", "Environment", *report.strategies]) + " |"
    sep = "|" + "---|" * (2 + len(report.strategies))
    for budget in report.budgets:
        out.append(f"## Budget: {budget} transitions")
        out.append("")
        out.append(header)
        out.append(sep)
        if report.strategies:
            groups = list(dict.fromkeys(g for _, g in report.envs))
            for group in groups:
                for env, g in report.envs:
                    if g != group:
                        continue
                    cells = [report.stat(env, budget, s) for s in report.strategies]
                    out.append(f"| {group} | {env} | " + " | ".join(_fmt(c.mean, c.std) for c in cells) + " |")
                avgs = []
                for s in report.strategies:
                    _, m, sd = next(a for a in report.group_averages(budget, s) if a[0] == group)
                    avgs.append(_fmt(m, sd))
                out.append(f"| {group} | *Average* | " + " | ".join(avgs) + " |")
            overall = [_fmt(*report.overall_average(budget, s)) for s in report.strategies]
            out.append("| *Overall Average* |  | " + " | ".join(overall) + " |")
        out.append("")
    return "\n".join(out)


def _csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["env", "group", "budget", "strategy", "mean", "std", "n_seeds", "single_seed"])
    for s in report.stats:
        writer.writerow([s.env, s.group, s.budget, s.strategy, repr(s.mean), repr(s.std), s.n, s.single_seed])
    return buf.getvalue()


def _json(report: AggregateReport) -> str:
    averages = []
    for budget in report.budgets:
        for s in report.strategies:
            for group, m, sd in report.group_averages(budget, s):
                averages.append({"budget": budget, "strategy": s, "group": group, "mean": m, "std": sd})
            m, sd = report.overall_average(budget, s)
            averages.append({"budget": budget, "strategy": s, "group": None, "mean": m, "std": sd})
    doc = {
        "budgets": report.budgets,
        "envs": [{"name": e, "group": g} for e, g in report.envs],
        "strategies": report.strategies,
        "summary": [s.to_dict() for s in report.stats],
        "averages": averages,
        "rows": report.rows,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit_report(report: AggregateReport, fmt: str = "markdown") -> str:
    """Render the report as ``markdown`` (table per budget), ``csv`` or ``json``."""
    renderers = {"markdown": _markdown, "csv": _csv, "json": _json}
    try:
        return renderers[fmt](report)
    except KeyError:
        raise InputError(f"unknown report format {fmt!r}") from None


def histories_to_jsonl(histories: Mapping[tuple[str, int, int], Iterable[IterationLog]]) -> str:
    """One JSON object per iteration, tagged with env, budget and seed."""
    lines = []
    for (env, budget, seed), history in histories.items():
        for h in history:
            rec = {"env": env, "budget": budget, "seed": seed, **h.__dict__}
            lines.append(json.dumps(rec))
    return "".join(line + "\n" for line in lines)


def regression_trap_suite(seed: int, num_policies: int = 16, length: int = 17) -> dict:
    """Suite declaration where OPE favours policies that peak early and collapse.

    Collapsing policies start highest, so both OPE and one-shot online
    evaluation gravitate to them; slow starters improve well past them.
    """
    counts = {"RISE_THEN_COLLAPSE": 3, "LOGISTIC_IMPROVE": 4, "PLATEAU": 5, "RANDOM_WALK": 4}
    if num_policies != 16:
        scale = num_policies / 16
        counts = {k: max(1, round(v * scale)) for k, v in counts.items()}
        counts["PLATEAU"] += num_policies - sum(counts.values())
    return {
        "seed": seed,
        "length": length,
        "eval_noise_std": 0.02,
        "ope_noise_std": 0.06,
        "ope_bias": -0.1,
        "random_policy_value": 0.0,
        "behavior_value": 0.5,
        "members": [
            {
                "family": "RISE_THEN_COLLAPSE",
                "count": counts["RISE_THEN_COLLAPSE"],
                "params": {
                    "start": [0.55, 0.65], "peak": [0.7, 0.8], "peak_at": [1, 4],
                    "end": [0.1, 0.3], "decay": [0.4, 0.8],
                },
            },
            {
                "family": "LOGISTIC_IMPROVE",
                "count": counts["LOGISTIC_IMPROVE"],
                "params": {"floor": [0.4, 0.55], "ceiling": [0.8, 0.95], "rate": [1.0, 2.0], "midpoint": [1.0, 3.0]},
            },
            {"family": "PLATEAU", "count": counts["PLATEAU"], "params": {"level": [0.3, 0.5]}},
            {
                "family": "RANDOM_WALK",
                "count": counts["RANDOM_WALK"],
                "params": {"start": [0.3, 0.5], "drift": 0.0, "step_std": 0.05},
            },
        ],
    }


def regression_trap_config(
    num_envs: int = 20, seeds: Sequence[int] = range(5), budget: int = 160_000
) -> dict:
    return {
        "envs": [
            {"name": f"trap-{k:02d}", "group": "regression-trap", "suite": regression_trap_suite(1000 + k)}
            for k in range(num_envs)
        ],
        "budgets": [budget],
        "seeds": list(seeds),
        "strategies": list(ALL_STRATEGIES),
        "selector": SelectorParams().__dict__,
    }
