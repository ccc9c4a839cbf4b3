"""
Simulated fine-tuning environments.

A ``FineTuneEnv`` replays one true value curve per candidate policy.
Fine-tuning advances a per-policy cursor along its curve; evaluation reads
the curve at the cursor and adds Gaussian noise standing in for the spread
of a finite-rollout estimate. OPE estimates are the pretrained values
shifted by a bias and perturbed by their own noise.

Randomness is split into independent sub-streams derived from the config
seed, so evaluation draws never disturb OPE draws and vice versa.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, EnvError, FormatError, InputError

__all__ = [
    "TrueCurve",
    "EnvConfig",
    "FineTuneEnv",
    "CurveFamily",
    "FAMILY_DEFAULTS",
    "synth_curves",
    "load_traces",
    "write_traces",
    "curves_to_csv",
    "substream",
]

STREAM_EVAL = 1
STREAM_OPE = 2
STREAM_CURVE = 3


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


@dataclass(frozen=True)
class TrueCurve:
    """True values ``v_0 .. v_T`` of one policy, indexed by fine-tuning iterations."""

    policy_id: int
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise InputError(f"policy {self.policy_id}: curve is empty")
        if not all(math.isfinite(v) for v in self.values):
            raise InputError(f"policy {self.policy_id}: curve contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EnvConfig:
    curves: tuple[TrueCurve, ...]
    eval_noise_std: float = 0.0
    ope_noise_std: float = 0.0
    ope_bias: float = 0.0
    random_policy_value: float = 0.0
    behavior_value: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "curves", tuple(self.curves))
        problems = []
        if not self.curves:
            problems.append("at least one curve is required")
        ids = [c.policy_id for c in self.curves]
        if ids != list(range(1, len(ids) + 1)):
            problems.append(f"policy ids must be 1..K in order, got {ids}")
        for name in ("eval_noise_std", "ope_noise_std"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                problems.append(f"{name} must be a finite non-negative number, got {value}")
        for name in ("ope_bias", "random_policy_value", "behavior_value"):
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} must be finite")
        if problems:
            raise ConfigError(problems)

    @property
    def num_policies(self) -> int:
        return len(self.curves)

    def curve(self, policy_id: int) -> TrueCurve:
        if not 1 <= policy_id <= len(self.curves):
            raise EnvError(f"unknown policy id {policy_id}")
        return self.curves[policy_id - 1]

    def check_budget(self, max_iterations: int) -> None:
        """Every curve must be long enough to absorb ``max_iterations`` fine-tunes."""
        short = [c.policy_id for c in self.curves if len(c) <= max_iterations]
        if short:
            raise ConfigError(
                f"curves of policies {short} have length <= max_iterations={max_iterations}"
            )

    def with_seed(self, seed: int) -> "EnvConfig":
        return replace(self, seed=int(seed))

    def sidecar(self) -> dict:
        return {
            "eval_noise_std": self.eval_noise_std,
            "ope_noise_std": self.ope_noise_std,
            "ope_bias": self.ope_bias,
            "random_policy_value": self.random_policy_value,
            "behavior_value": self.behavior_value,
            "seed": self.seed,
        }


class FineTuneEnv:
    """Replay environment over a fixed set of true curves.

    Single-owner; create one per strategy run via ``clone``.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self.cursor = {c.policy_id: 0 for c in config.curves}
        self._eval_rng = substream(config.seed, STREAM_EVAL)
        self._ope: tuple[float, ...] | None = None
        self.finetune_calls = 0
        self.evaluate_calls = 0

    def clone(self) -> "FineTuneEnv":
        return FineTuneEnv(self.config)

    @property
    def num_policies(self) -> int:
        return self.config.num_policies

    def fine_tune(self, policy_id: int) -> None:
        curve = self.config.curve(policy_id)
        if self.cursor[policy_id] + 1 >= len(curve):
            raise EnvError(
                f"policy {policy_id}: curve of length {len(curve)} exhausted "
                f"at iteration {self.cursor[policy_id]}"
            )
        self.cursor[policy_id] += 1
        self.finetune_calls += 1

    def evaluate(self, policy_id: int) -> float:
        curve = self.config.curve(policy_id)
        noise = self._eval_rng.standard_normal()
        self.evaluate_calls += 1
        return curve.values[self.cursor[policy_id]] + self.config.eval_noise_std * noise

    def true_value(self, policy_id: int, iteration: int) -> float:
        return self.config.curve(policy_id).values[iteration]

    def ope_estimates(self) -> tuple[float, ...]:
        """One OPE estimate per policy, drawn once from a dedicated stream."""
        if self._ope is None:
            cfg = self.config
            eta = substream(cfg.seed, STREAM_OPE).standard_normal(cfg.num_policies)
            self._ope = tuple(
                c.values[0] + cfg.ope_bias + cfg.ope_noise_std * float(e)
                for c, e in zip(cfg.curves, eta)
            )
        return self._ope


class CurveFamily(str, enum.Enum):
    LOGISTIC_IMPROVE = "LOGISTIC_IMPROVE"
    RISE_THEN_COLLAPSE = "RISE_THEN_COLLAPSE"
    PLATEAU = "PLATEAU"
    RANDOM_WALK = "RANDOM_WALK"

    @classmethod
    def parse(cls, name: "str | CurveFamily") -> "CurveFamily":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            known = ", ".join(f.value for f in cls)
            raise InputError(f"unknown curve family {name!r} (known: {known})") from None


FAMILY_DEFAULTS: dict[CurveFamily, dict[str, float]] = {
    # floor + (ceiling - floor) / (1 + exp(-rate * (j - midpoint)))
    CurveFamily.LOGISTIC_IMPROVE: {
        "floor": 0.2, "ceiling": 0.9, "rate": 1.0, "midpoint": 4.0, "noise_std": 0.0,
    },
    # linear rise start -> peak over [0, peak_at], then exponential decay towards end
    CurveFamily.RISE_THEN_COLLAPSE: {
        "start": 0.5, "peak": 0.8, "peak_at": 3.0, "end": 0.1, "decay": 0.5, "noise_std": 0.0,
    },
    CurveFamily.PLATEAU: {"level": 0.5, "noise_std": 0.0},
    # v_j = v_{j-1} + drift + step_std * N(0, 1)
    CurveFamily.RANDOM_WALK: {"start": 0.5, "drift": 0.0, "step_std": 0.1, "noise_std": 0.0},
}


def _shape(family: CurveFamily, length: int, p: Mapping[str, float], rng) -> np.ndarray:
    j = np.arange(length, dtype=np.float64)
    if family is CurveFamily.PLATEAU:
        return np.full(length, float(p["level"]))
    if family is CurveFamily.LOGISTIC_IMPROVE:
        if not p["ceiling"] > p["floor"] or not p["rate"] > 0:
            raise InputError("LOGISTIC_IMPROVE needs ceiling > floor and rate > 0")
        return p["floor"] + (p["ceiling"] - p["floor"]) / (1.0 + np.exp(-p["rate"] * (j - p["midpoint"])))
    if family is CurveFamily.RISE_THEN_COLLAPSE:
        if length < 3:
            raise InputError("RISE_THEN_COLLAPSE needs length >= 3 for an interior peak")
        if not (p["peak"] > p["start"] and p["peak"] > p["end"] and p["decay"] > 0):
            raise InputError("RISE_THEN_COLLAPSE needs peak > start, peak > end and decay > 0")
        k = int(min(max(round(p["peak_at"]), 1), length - 2))
        rise = p["start"] + (p["peak"] - p["start"]) * j / k
        fall = p["end"] + (p["peak"] - p["end"]) * np.exp(-p["decay"] * (j - k))
        return np.where(j <= k, rise, fall)
    steps = p["drift"] + p["step_std"] * rng.standard_normal(length - 1)
    return p["start"] + np.concatenate([[0.0], np.cumsum(steps)])


def synth_curves(
    family: str | CurveFamily,
    length: int,
    params: Mapping[str, float] | None = None,
    seed: int = 0,
    policy_id: int = 1,
) -> TrueCurve:
    """
    Generate a synthetic true value curve.

    Families and their pre-noise shape guarantees:

    * ``LOGISTIC_IMPROVE`` -- saturating rise, strictly increasing, below ``ceiling``.
    * ``RISE_THEN_COLLAPSE`` -- linear rise to a unique interior peak, then decay.
    * ``PLATEAU`` -- constant at ``level``.
    * ``RANDOM_WALK`` -- Gaussian random walk with drift.

    ``noise_std`` (every family) adds iid Gaussian noise on top of the shape.
    Unspecified parameters take the values in ``FAMILY_DEFAULTS``.
    """
    family = CurveFamily.parse(family)
    if length < 2:
        raise InputError(f"curve length must be >= 2, got {length}")
    defaults = FAMILY_DEFAULTS[family]
    params = dict(params or {})
    unknown = sorted(set(params) - set(defaults))
    if unknown:
        raise InputError(f"unknown parameters for {family.value}: {unknown}")
    p = {**defaults, **{k: float(v) for k, v in params.items()}}
    rng = substream(seed, STREAM_CURVE)
    values = _shape(family, length, p, rng)
    if p["noise_std"] > 0:
        values = values + p["noise_std"] * rng.standard_normal(length)
    return TrueCurve(policy_id, tuple(float(v) for v in values))


_SIDECAR_KEYS = (
    "eval_noise_std", "ope_noise_std", "ope_bias", "random_policy_value", "behavior_value", "seed",
)


def load_traces(path: str | Path, sidecar: str | Path | None = None) -> EnvConfig:
    """
    Read recorded value curves from CSV plus scalar settings from a JSON sidecar.

    The CSV has header ``policy_id,iteration,value``; each policy's iterations
    must be dense starting at 0 and policy ids must be ``1..K``. The sidecar
    defaults to the CSV path with a ``.json`` suffix; missing keys take the
    ``EnvConfig`` defaults.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header != ["policy_id", "iteration", "value"]:
        raise FormatError(f"{path}: expected header policy_id,iteration,value, got {rows[0]}")
    if len(rows) == 1:
        raise FormatError(f"{path}: no data rows")

    points: dict[int, dict[int, float]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            pid, it, value = int(row[0]), int(row[1]), float(row[2])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: cannot parse row {row}") from None
        if not math.isfinite(value):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        per = points.setdefault(pid, {})
        if it in per:
            raise FormatError(f"{path}:{lineno}: duplicate iteration {it} for policy {pid}")
        per[it] = value

    ids = sorted(points)
    if ids != list(range(1, len(ids) + 1)):
        raise FormatError(f"{path}: policy ids must be 1..K, got {ids}")
    curves = []
    for pid in ids:
        its = sorted(points[pid])
        missing = sorted(set(range(its[-1] + 1)) - set(its))
        if missing:
            raise FormatError(f"{path}: policy {pid} is missing iterations {missing}")
        curves.append(TrueCurve(pid, tuple(points[pid][i] for i in its)))

    sidecar = Path(sidecar) if sidecar is not None else path.with_suffix(".json")
    scalars: dict = {}
    if sidecar.exists():
        try:
            scalars = json.loads(sidecar.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{sidecar}: {exc}") from exc
        unknown = sorted(set(scalars) - set(_SIDECAR_KEYS))
        if unknown:
            raise FormatError(f"{sidecar}: unknown keys {unknown}")
    return EnvConfig(tuple(curves), **scalars)


def curves_to_csv(curves: Sequence[TrueCurve]) -> str:
    lines = ["policy_id,iteration,value"]
    for c in curves:
        lines.extend(f"{c.policy_id},{i},{v!r}" for i, v in enumerate(c.values))
    return "\n".join(lines) + "\n"


def write_traces(config: EnvConfig, path: str | Path) -> None:
    """Inverse of ``load_traces``: write the CSV and its JSON sidecar."""
    path = Path(path)
    path.write_text(curves_to_csv(config.curves))
    path.with_suffix(".json").write_text(json.dumps(config.sidecar(), indent=2, sort_keys=True) + "\n")
