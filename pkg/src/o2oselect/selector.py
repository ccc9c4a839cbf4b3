"""
Adaptive policy selection and fine-tuning under a transition budget.

Candidates sit in a max-priority queue keyed by ``(priority, tie_rank)``.
Initially every candidate has the behavior-policy value as priority and its
OPE rank as tie-break, so OPE decides the early order. Each iteration pops
the top candidate, fine-tunes and evaluates it, refits its value model and
pushes it back with its max-UCB and tie rank 0, which beats any OPE rank at
equal priority. When the budget runs out the best evaluated checkpoint wins.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .envsim import FineTuneEnv
from .errors import EnvError, InputError, InvariantViolation, PreconditionError
from .valuemodel import ValueSeries, forecast_ucb

__all__ = [
    "HeapEntry",
    "PriorityQueue",
    "BudgetLedger",
    "PolicyRecord",
    "IterationLog",
    "SelectorState",
    "init_state",
    "run",
    "final_select",
    "remaining_iterations",
    "ope_ranks",
    "select_adaptive",
    "history_to_jsonl",
    "iteration_seed",
]


@dataclass(frozen=True)
class HeapEntry:
    policy_id: int
    priority: float
    tie_rank: int
    seq: int

    @property
    def sort_key(self) -> tuple[float, int, int]:
        return (-self.priority, self.tie_rank, self.seq)


class PriorityQueue:
    """Max-priority queue: higher priority, then lower tie rank, then earlier insertion."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, int, HeapEntry]] = []
        self._counter = itertools.count()

    def push(self, policy_id: int, priority: float, tie_rank: int) -> HeapEntry:
        priority = float(priority)
        if math.isnan(priority):
            raise InputError(f"policy {policy_id}: NaN priority")
        entry = HeapEntry(policy_id, priority, int(tie_rank), next(self._counter))
        heapq.heappush(self._heap, (*entry.sort_key, entry))
        return entry

    def pop(self) -> HeapEntry:
        if not self._heap:
            raise InvariantViolation("pop from an empty priority queue")
        return heapq.heappop(self._heap)[-1]

    def peek(self) -> HeapEntry:
        return self._heap[0][-1]

    def entries(self) -> list[HeapEntry]:
        """Current entries in pop order (does not modify the queue)."""
        return [item[-1] for item in sorted(self._heap)]

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class BudgetLedger:
    """Online interaction budget counted in environment transitions."""

    total_transitions: int
    finetune_cost: int = 10_000
    eval_cost: int = 10_000
    consumed: int = 0

    def __post_init__(self) -> None:
        if self.total_transitions < 0:
            raise InputError(f"total_transitions must be >= 0, got {self.total_transitions}")
        if self.finetune_cost < 1 or self.eval_cost < 1:
            raise InputError("finetune_cost and eval_cost must be positive")
        if not 0 <= self.consumed <= self.total_transitions:
            raise InputError("consumed must lie in [0, total_transitions]")

    @property
    def iteration_cost(self) -> int:
        return self.finetune_cost + self.eval_cost

    @property
    def max_iterations(self) -> int:
        return self.total_transitions // self.iteration_cost

    @property
    def remaining(self) -> int:
        return self.total_transitions - self.consumed

    def charge(self, transitions: int) -> None:
        if transitions > self.remaining:
            raise InvariantViolation(
                f"charging {transitions} transitions exceeds remaining budget {self.remaining}"
            )
        self.consumed += transitions

    def fresh(self) -> "BudgetLedger":
        return BudgetLedger(self.total_transitions, self.finetune_cost, self.eval_cost)


def remaining_iterations(ledger: BudgetLedger) -> int:
    return (ledger.total_transitions - ledger.consumed) // ledger.iteration_cost


@dataclass(frozen=True)
class PolicyRecord:
    policy_id: int
    iteration: int
    est_value: float


@dataclass(frozen=True)
class IterationLog:
    iter: int
    policy_id: int
    popped_priority: float
    eval_value: float
    pushed_priority: float
    consumed_transitions: int


@dataclass
class SelectorState:
    heap: PriorityQueue
    series: dict[int, ValueSeries]
    ledger: BudgetLedger
    iter_counts: dict[int, int]
    pseudo_count: int
    store: list[PolicyRecord] = field(default_factory=list)

    @property
    def num_policies(self) -> int:
        return len(self.series)

    def check_invariants(self) -> None:
        if len(self.heap) != self.num_policies:
            raise InvariantViolation(
                f"heap holds {len(self.heap)} entries for {self.num_policies} policies"
            )
        for pid, s in self.series.items():
            expected = self.pseudo_count + 1 + self.iter_counts[pid]
            if len(s) != expected:
                raise InvariantViolation(
                    f"policy {pid}: series length {len(s)} != {expected}"
                )
        if self.ledger.consumed > self.ledger.total_transitions:
            raise InvariantViolation("budget overdrawn")


def ope_ranks(estimates: Sequence[float]) -> list[int]:
    """Rank 1 for the highest estimate; equal estimates rank the lower policy id first.

    Element ``i`` is the rank of policy ``i + 1``.
    """
    order = sorted(range(len(estimates)), key=lambda i: (-estimates[i], i))
    ranks = [0] * len(estimates)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def init_state(
    num_policies: int,
    ranks: Sequence[int],
    behavior_value: float,
    pseudo_count: int,
    ledger: BudgetLedger,
) -> SelectorState:
    if num_policies < 1:
        raise InputError("need at least one policy")
    if sorted(ranks) != list(range(1, num_policies + 1)):
        raise InputError(f"OPE ranks must be a permutation of 1..{num_policies}, got {list(ranks)}")
    if not math.isfinite(behavior_value):
        raise InputError("behavior value must be finite")

    heap = PriorityQueue()
    series = {}
    for pid in range(1, num_policies + 1):
        series[pid] = ValueSeries.initial(pid, behavior_value, pseudo_count)
        heap.push(pid, behavior_value, ranks[pid - 1])
    return SelectorState(
        heap=heap,
        series=series,
        ledger=ledger,
        iter_counts={pid: 0 for pid in series},
        pseudo_count=pseudo_count,
    )


def iteration_seed(master_seed: int, iteration: int, policy_id: int) -> np.random.SeedSequence:
    """Child seed for the forecast made at ``iteration`` for ``policy_id``."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(iteration), int(policy_id)))


def final_select(store: Sequence[PolicyRecord]) -> PolicyRecord:
    """Highest estimated value; ties go to the earliest iteration, then the lowest id."""
    if not store:
        raise PreconditionError("cannot select from an empty policy store")
    return min(store, key=lambda r: (-r.est_value, r.iteration, r.policy_id))


def run(
    state: SelectorState,
    env: FineTuneEnv,
    num_paths: int = 100,
    quantile: float = 0.95,
    seed: int = 0,
) -> tuple[PolicyRecord, list[IterationLog]]:
    """
    Spend the remaining budget on fine-tune/evaluate/forecast iterations.

    Parameters
    ----------
    state : SelectorState
        Mutated in place.
    env : FineTuneEnv
    num_paths, quantile
        Simulation count and percentile for the UCB.
    seed : int
        Master seed; each forecast draws from ``iteration_seed(seed, j, i)``.

    Returns
    -------
    best : PolicyRecord
    history : list of IterationLog
    """
    ledger = state.ledger
    total = remaining_iterations(ledger)
    if total < 1:
        raise PreconditionError(
            f"budget of {ledger.remaining} transitions admits no iteration "
            f"(cost {ledger.iteration_cost} per iteration)"
        )
    env.config.check_budget(total)

    history = []
    for j in range(1, total + 1):
        state.check_invariants()
        top = state.heap.pop()
        pid = top.policy_id
        try:
            ledger.charge(ledger.finetune_cost)
            env.fine_tune(pid)
            ledger.charge(ledger.eval_cost)
            value = env.evaluate(pid)
        except EnvError as exc:
            raise InvariantViolation(f"iteration {j}: {exc}") from exc

        state.iter_counts[pid] += 1
        series = state.series[pid]
        series.append(value)
        state.store.append(PolicyRecord(pid, state.iter_counts[pid], value))

        rng = np.random.default_rng(iteration_seed(seed, j, pid))
        forecast = forecast_ucb(series, total - j, num_paths, quantile, rng)
        state.heap.push(pid, forecast.max_ucb, 0)
        history.append(
            IterationLog(j, pid, top.priority, value, forecast.max_ucb, ledger.consumed)
        )
    state.check_invariants()
    return final_select(state.store), history


def select_adaptive(
    env: FineTuneEnv,
    ledger: BudgetLedger,
    pseudo_count: int = 5,
    num_paths: int = 100,
    quantile: float = 0.95,
    seed: int = 0,
) -> tuple[PolicyRecord, list[IterationLog]]:
    """Rank by OPE, seed the queue with the behavior value and run to budget exhaustion."""
    ranks = ope_ranks(env.ope_estimates())
    state = init_state(env.num_policies, ranks, env.config.behavior_value, pseudo_count, ledger)
    return run(state, env, num_paths, quantile, seed)


def history_to_jsonl(history: Iterable[IterationLog]) -> str:
    return "".join(json.dumps(asdict(h)) + "\n" for h in history)
