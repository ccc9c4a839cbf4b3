"""Adaptive offline-to-online policy selection and fine-tuning under an interaction budget."""

__version__ = "0.1.0"

from .baselines import (
    OracleResult,
    Strategy,
    StrategyResult,
    compute_oracle,
    normalize_score,
    run_best_baseline,
    run_ft_baseline,
    run_oe_baseline,
    run_ope_baseline,
    run_ours,
)
from .envsim import CurveFamily, EnvConfig, FineTuneEnv, TrueCurve, load_traces, synth_curves
from .harness import aggregate, emit_report, load_config, run_experiment
from .selector import (
    BudgetLedger,
    PolicyRecord,
    PriorityQueue,
    final_select,
    init_state,
    remaining_iterations,
    run,
    select_adaptive,
)
from .valuemodel import ArArchParams, ForecastResult, ValueSeries, fit_ar_arch, forecast_ucb, percentile, simulate_paths
