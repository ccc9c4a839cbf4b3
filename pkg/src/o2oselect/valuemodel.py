"""
AR(2)-ARCH(1) model of a policy's fine-tuning value trajectory.

The mean follows two lags of the observed values and the innovation
variance follows one lag of the squared innovation::

    mu_t      = beta0 + beta1 * v_{t-1} + beta2 * v_{t-2}
    v_t       = mu_t + eps_t
    eps_t     = sigma_t * eta_t,        eta_t ~ N(0, 1) iid
    sigma_t^2 = alpha0 + alpha1 * eps_{t-1}^2

Parameters are estimated by two-stage least squares (mean OLS, then OLS of
squared residuals on their first lag). Forecast uncertainty is obtained by
simulating paths forward and taking a per-step upper percentile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, PreconditionError

__all__ = [
    "VARIANCE_FLOOR",
    "ALPHA1_MAX",
    "SINGULAR_RTOL",
    "MIN_FIT_LENGTH",
    "ValueSeries",
    "ArArchParams",
    "ForecastResult",
    "fit_ar_arch",
    "simulate_paths",
    "percentile",
    "percentile_index",
    "forecast_ucb",
]

VARIANCE_FLOOR = 1e-12
ALPHA1_MAX = 1.0 - 1e-6
SINGULAR_RTOL = 1e-10
MIN_FIT_LENGTH = 5
MIN_PSEUDO_COUNT = 3


@dataclass
class ValueSeries:
    """Append-only history of value estimates for one policy.

    ``values`` starts with ``pseudo_count`` pseudo-observations followed by
    the iteration-0 anchor; every completed fine-tuning iteration appends
    exactly one entry.
    """

    policy_id: int
    values: list[float] = field(default_factory=list)
    pseudo_count: int = 5

    def __post_init__(self) -> None:
        if self.pseudo_count < MIN_PSEUDO_COUNT:
            raise InputError(
                f"pseudo_count must be >= {MIN_PSEUDO_COUNT}, got {self.pseudo_count}"
            )
        self.values = [float(v) for v in self.values]
        if not all(math.isfinite(v) for v in self.values):
            raise InputError(f"policy {self.policy_id}: series contains non-finite values")

    @classmethod
    def initial(cls, policy_id: int, fill_value: float, pseudo_count: int) -> "ValueSeries":
        """Pseudo prefix plus the iteration-0 anchor, all equal to ``fill_value``."""
        return cls(policy_id, [float(fill_value)] * (pseudo_count + 1), pseudo_count)

    def append(self, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise InputError(f"policy {self.policy_id}: cannot append non-finite value {value!r}")
        self.values.append(value)

    @property
    def iteration(self) -> int:
        """Fine-tuning iteration index of the last entry (0 for the anchor)."""
        return len(self.values) - self.pseudo_count - 1

    @property
    def last(self) -> float:
        return self.values[-1]

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ArArchParams:
    beta0: float
    beta1: float
    beta2: float
    alpha0: float
    alpha1: float
    fallback_used: bool = False

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "alpha0": self.alpha0,
            "alpha1": self.alpha1,
            "fallback_used": self.fallback_used,
        }


PERSISTENCE = ArArchParams(0.0, 1.0, 0.0, VARIANCE_FLOOR, 0.0, fallback_used=True)


@dataclass(frozen=True)
class ForecastResult:
    horizon: tuple[int, ...]
    ucb_per_step: tuple[float, ...]
    max_ucb: float
    num_paths: int
    quantile: float

    def to_dict(self) -> dict:
        return {
            "horizon": list(self.horizon),
            "ucb_per_step": list(self.ucb_per_step),
            "max_ucb": self.max_ucb,
            "num_paths": self.num_paths,
            "quantile": self.quantile,
        }


def _as_array(series: ValueSeries | Sequence[float]) -> np.ndarray:
    values = series.values if isinstance(series, ValueSeries) else series
    y = np.asarray(values, dtype=np.float64)
    if y.ndim != 1:
        raise InputError("value series must be one-dimensional")
    if not np.all(np.isfinite(y)):
        raise InputError("value series contains non-finite values")
    if y.size < MIN_FIT_LENGTH:
        raise PreconditionError(
            f"AR(2)-ARCH(1) fit needs at least {MIN_FIT_LENGTH} values, got {y.size}"
        )
    return y


def _is_singular(gram: np.ndarray) -> bool:
    eig = np.linalg.eigvalsh(gram)
    return bool(eig[0] < SINGULAR_RTOL * eig[-1]) or not eig[-1] > 0.0


def _fit(y: np.ndarray) -> tuple[ArArchParams, float]:
    """Two-stage least squares. Returns params and the last in-sample residual."""
    X = np.column_stack([np.ones(y.size - 2), y[1:-1], y[:-2]])
    target = y[2:]
    gram = X.T @ X
    if _is_singular(gram):
        return PERSISTENCE, 0.0
    beta = np.linalg.solve(gram, X.T @ target)
    resid = target - X @ beta

    e2 = resid**2
    Z = np.column_stack([np.ones(e2.size - 1), e2[:-1]])
    gram2 = Z.T @ Z
    if _is_singular(gram2):
        # no variation in the lagged squared residuals to explain
        alpha0, alpha1 = float(np.mean(e2[1:])), 0.0
    else:
        alpha0, alpha1 = np.linalg.solve(gram2, Z.T @ e2[1:])

    alpha0 = max(float(alpha0), VARIANCE_FLOOR)
    alpha1 = min(max(float(alpha1), 0.0), ALPHA1_MAX)
    params = ArArchParams(
        float(beta[0]), float(beta[1]), float(beta[2]), alpha0, alpha1, fallback_used=False
    )
    return params, float(resid[-1])


def fit_ar_arch(series: ValueSeries | Sequence[float]) -> ArArchParams:
    """
    Fit AR(2)-ARCH(1) parameters to a value series.

    Stage 1 regresses ``v_t`` on ``[1, v_{t-1}, v_{t-2}]``; stage 2 regresses
    the squared stage-1 residuals on ``[1, eps_{t-1}^2]``. When the stage-1
    normal matrix is numerically singular (smallest eigenvalue below
    ``SINGULAR_RTOL`` times the largest), the persistence model
    ``v_t = v_{t-1}`` with floor variance is returned instead and
    ``fallback_used`` is set.

    Parameters
    ----------
    series : ValueSeries or sequence of float
        At least ``MIN_FIT_LENGTH`` finite values, oldest first.

    Returns
    -------
    ArArchParams
        ``alpha0`` is clamped to at least ``VARIANCE_FLOOR`` and ``alpha1``
        to ``[0, ALPHA1_MAX]``.
    """
    params, _ = _fit(_as_array(series))
    return params


def simulate_paths(
    params: ArArchParams,
    last_two_values: tuple[float, float],
    last_residual: float,
    horizon_len: int,
    num_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Simulate future values by iterating the model forward.

    Parameters
    ----------
    params : ArArchParams
    last_two_values : (float, float)
        ``(v_t, v_{t-1})``, most recent first.
    last_residual : float
        ``eps_t`` seeding the variance recursion.
    horizon_len : int
        Number of future steps ``n`` (>= 1).
    num_paths : int
        Number of independent paths ``R`` (>= 1).
    rng : numpy.random.Generator

    Returns
    -------
    ndarray, shape (num_paths, horizon_len)
        Entry ``[s, h]`` is path ``s`` at iteration ``t + 1 + h``.
    """
    if horizon_len < 1:
        raise PreconditionError(f"horizon_len must be >= 1, got {horizon_len}")
    if num_paths < 1:
        raise PreconditionError(f"num_paths must be >= 1, got {num_paths}")

    eta = rng.standard_normal((num_paths, horizon_len))
    out = np.empty((num_paths, horizon_len))
    prev1 = np.full(num_paths, float(last_two_values[0]))
    prev2 = np.full(num_paths, float(last_two_values[1]))
    eps = np.full(num_paths, float(last_residual))
    for h in range(horizon_len):
        mu = params.beta0 + params.beta1 * prev1 + params.beta2 * prev2
        sigma = np.sqrt(params.alpha0 + params.alpha1 * eps**2)
        eps = sigma * eta[:, h]
        out[:, h] = mu + eps
        prev2, prev1 = prev1, out[:, h]
    return out


def percentile_index(n: int, q: float) -> int:
    """Zero-based index of the nearest-rank ``q`` percentile among ``n`` sorted values."""
    if not 0.0 < q < 1.0:
        raise PreconditionError(f"quantile must lie in (0, 1), got {q}")
    if n < 1:
        raise PreconditionError("percentile of an empty sequence")
    # round away float noise such as 0.07 * 100 = 7.000000000000001
    rank = math.ceil(round(q * n, 9))
    return min(max(rank, 1), n) - 1


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q * n)``-th smallest value, no interpolation."""
    values = list(values)
    k = percentile_index(len(values), q)
    return float(sorted(values)[k])


def forecast_ucb(
    series: ValueSeries,
    horizon_len: int,
    num_paths: int = 100,
    quantile: float = 0.95,
    rng: np.random.Generator | int | None = None,
) -> ForecastResult:
    """Fit the model, simulate ``num_paths`` paths and take per-step upper percentiles.

    With ``horizon_len == 0`` no simulation happens and ``max_ucb`` is the
    last observed value.
    """
    if horizon_len < 0:
        raise PreconditionError(f"horizon_len must be >= 0, got {horizon_len}")
    y = _as_array(series)
    if not 0.0 < quantile < 1.0:
        raise PreconditionError(f"quantile must lie in (0, 1), got {quantile}")
    if horizon_len == 0:
        return ForecastResult((), (), float(y[-1]), num_paths, quantile)

    params, last_resid = _fit(y)
    rng = np.random.default_rng(rng)
    paths = simulate_paths(params, (y[-1], y[-2]), last_resid, horizon_len, num_paths, rng)
    k = percentile_index(num_paths, quantile)
    ucb = np.sort(paths, axis=0)[k]

    t = series.iteration if isinstance(series, ValueSeries) else y.size - 1
    horizon = tuple(range(t + 1, t + 1 + horizon_len))
    return ForecastResult(
        horizon,
        tuple(float(u) for u in ucb),
        float(np.max(ucb)),
        num_paths,
        quantile,
    )
