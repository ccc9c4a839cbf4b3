"""
Comparison strategies and the budget-aware oracle.

Every strategy takes a fresh environment and a fresh ledger; none of them
share mutable state, so they can run side by side on clones of one config.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .envsim import FineTuneEnv
from .errors import DegenerateNormalizationError, PreconditionError
from .selector import BudgetLedger, PolicyRecord, final_select, remaining_iterations, select_adaptive

__all__ = [
    "Strategy",
    "StrategyResult",
    "OracleResult",
    "run_ope_baseline",
    "run_best_baseline",
    "run_oe_baseline",
    "run_ft_baseline",
    "run_ours",
    "run_strategy",
    "compute_oracle",
    "normalize_score",
]


class Strategy(str, enum.Enum):
    OPE = "OPE"
    BEST = "BEST"
    OE = "OE"
    FT = "FT"
    OURS = "OURS"


@dataclass(frozen=True)
class StrategyResult:
    strategy: Strategy
    selected_policy: int
    selected_iteration: int
    true_value: float
    normalized_score: float = math.nan

    def with_score(self, v_min: float, v_oracle: float) -> "StrategyResult":
        return replace(self, normalized_score=normalize_score(self.true_value, v_min, v_oracle))

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "policy": self.selected_policy,
            "iteration": self.selected_iteration,
            "true_value": self.true_value,
            "normalized_score": self.normalized_score,
        }


@dataclass(frozen=True)
class OracleResult:
    best_policy: int
    best_iteration: int
    best_value: float


def _argmax(values) -> int:
    """Index of the maximum; the first one on ties."""
    return int(np.argmax(np.asarray(values, dtype=np.float64)))


def run_ope_baseline(env: FineTuneEnv) -> StrategyResult:
    pid = _argmax(env.ope_estimates()) + 1
    return StrategyResult(Strategy.OPE, pid, 0, env.true_value(pid, 0))


def run_best_baseline(env: FineTuneEnv) -> StrategyResult:
    pid = _argmax([c.values[0] for c in env.config.curves]) + 1
    return StrategyResult(Strategy.BEST, pid, 0, env.true_value(pid, 0))


def run_oe_baseline(env: FineTuneEnv, ledger: BudgetLedger) -> StrategyResult:
    """Split the budget evenly into evaluations of every pretrained policy.

    Policies are evaluated in id order, all of one policy's evaluations
    before the next. Transitions left over after integer division are unused.
    """
    k = env.num_policies
    per_policy = ledger.remaining // (k * ledger.eval_cost)
    if per_policy < 1:
        raise PreconditionError(
            f"budget {ledger.remaining} cannot pay one evaluation "
            f"({ledger.eval_cost} transitions) for each of {k} policies"
        )
    means = []
    for pid in range(1, k + 1):
        total = 0.0
        for _ in range(per_policy):
            ledger.charge(ledger.eval_cost)
            total += env.evaluate(pid)
        means.append(total / per_policy)
    pid = _argmax(means) + 1
    return StrategyResult(Strategy.OE, pid, 0, env.true_value(pid, 0))


def run_ft_baseline(env: FineTuneEnv, ledger: BudgetLedger) -> StrategyResult:
    """Fine-tune the OPE pick with the whole budget; keep its best evaluated checkpoint."""
    pid = _argmax(env.ope_estimates()) + 1
    n = remaining_iterations(ledger)
    if n < 1:
        raise PreconditionError("budget admits no fine-tuning iteration")
    env.config.check_budget(n)
    store = []
    for it in range(1, n + 1):
        ledger.charge(ledger.finetune_cost)
        env.fine_tune(pid)
        ledger.charge(ledger.eval_cost)
        store.append(PolicyRecord(pid, it, env.evaluate(pid)))
    best = final_select(store)
    return StrategyResult(Strategy.FT, pid, best.iteration, env.true_value(pid, best.iteration))


def run_ours(
    env: FineTuneEnv,
    ledger: BudgetLedger,
    pseudo_count: int = 5,
    num_paths: int = 100,
    quantile: float = 0.95,
    seed: int = 0,
) -> tuple[StrategyResult, list]:
    best, history = select_adaptive(env, ledger, pseudo_count, num_paths, quantile, seed)
    result = StrategyResult(
        Strategy.OURS, best.policy_id, best.iteration,
        env.true_value(best.policy_id, best.iteration),
    )
    return result, history


def compute_oracle(env: FineTuneEnv, ledger: BudgetLedger) -> OracleResult:
    """Best true value reachable by any single policy given the whole budget.

    Each policy is scanned over iterations ``0..max_iterations`` on its own;
    the joint budget constraint is deliberately not applied.
    """
    horizon = ledger.max_iterations
    best = None
    for curve in env.config.curves:
        for it, value in enumerate(curve.values[: horizon + 1]):
            if best is None or value > best.best_value:
                best = OracleResult(curve.policy_id, it, value)
    return best


def normalize_score(value: float, v_min: float, v_oracle: float) -> float:
    """Min-max normalized score in percent, unclipped."""
    if not v_oracle > v_min:
        raise DegenerateNormalizationError(
            f"oracle value {v_oracle} must exceed the random-policy value {v_min}"
        )
    return 100.0 * (value - v_min) / (v_oracle - v_min)


def run_strategy(
    strategy: Strategy | str,
    env: FineTuneEnv,
    ledger: BudgetLedger,
    pseudo_count: int = 5,
    num_paths: int = 100,
    quantile: float = 0.95,
    seed: int = 0,
) -> tuple[StrategyResult, list]:
    """Dispatch by name. Returns the result and the iteration history (empty except for OURS)."""
    strategy = Strategy(strategy)
    if strategy is Strategy.OPE:
        return run_ope_baseline(env), []
    if strategy is Strategy.BEST:
        return run_best_baseline(env), []
    if strategy is Strategy.OE:
        return run_oe_baseline(env, ledger), []
    if strategy is Strategy.FT:
        return run_ft_baseline(env, ledger), []
    return run_ours(env, ledger, pseudo_count, num_paths, quantile, seed)
