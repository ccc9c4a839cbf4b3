import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from o2oselect.envsim import (
    CurveFamily,
    EnvConfig,
    FineTuneEnv,
    TrueCurve,
    load_traces,
    synth_curves,
    write_traces,
)
from o2oselect.errors import ConfigError, EnvError, FormatError, InputError
from o2oselect.selector import ope_ranks


def _cfg(*curves, **kw):
    return EnvConfig(tuple(TrueCurve(i, c) for i, c in enumerate(curves, start=1)), **kw)


# --- fine_tune / evaluate --------------------------------------------------


def test_fine_tune_advances_cursor():
    env = FineTuneEnv(_cfg((0.1, 0.2, 0.3, 0.4)))
    env.fine_tune(1)
    assert env.cursor[1] == 1
    env.fine_tune(1)
    assert env.cursor[1] == 2


def test_fine_tune_bound_check():
    env = FineTuneEnv(_cfg((0.1, 0.2, 0.3, 0.4)))
    for _ in range(3):
        env.fine_tune(1)
    with pytest.raises(EnvError):
        env.fine_tune(1)
    assert env.cursor[1] == 3


def test_unknown_policy():
    env = FineTuneEnv(_cfg((0.1, 0.2)))
    with pytest.raises(EnvError):
        env.evaluate(2)
    with pytest.raises(EnvError):
        env.fine_tune(0)


def test_noiseless_evaluate_replays_curve():
    env = FineTuneEnv(_cfg((0.1, 0.2, 0.3, 0.4)))
    env.fine_tune(1)
    env.fine_tune(1)
    assert env.evaluate(1) == 0.3


def test_replay_fidelity_exhaustive():
    curves = [(0.0, 1.0, -2.0), (5.0, 5.5, 6.0, 6.5), (3.0, 2.0)]
    env = FineTuneEnv(_cfg(*curves))
    for pid, curve in enumerate(curves, start=1):
        for it, value in enumerate(curve):
            assert env.evaluate(pid) == value
            if it + 1 < len(curve):
                env.fine_tune(pid)


def test_noisy_evaluate_mean():
    env = FineTuneEnv(_cfg((0.7, 0.8), eval_noise_std=0.05, seed=11))
    draws = np.array([env.evaluate(1) for _ in range(10_000)])
    assert abs(draws.mean() - 0.7) <= 0.002
    assert draws.std(ddof=1) == pytest.approx(0.05, rel=0.05)


def test_evaluate_deterministic_across_instances():
    cfg = _cfg((0.7, 0.8, 0.9), (0.1, 0.2, 0.3), eval_noise_std=0.1, seed=5)
    a, b = FineTuneEnv(cfg), FineTuneEnv(cfg)
    seq = [1, 2, 2, 1]
    out = []
    for env in (a, b):
        vals = []
        for pid in seq:
            vals.append(env.evaluate(pid))
        env.fine_tune(1)
        vals.append(env.evaluate(1))
        out.append(vals)
    assert out[0] == out[1]


def test_clone_starts_fresh():
    env = FineTuneEnv(_cfg((0.7, 0.8, 0.9), eval_noise_std=0.1, seed=2))
    first = env.evaluate(1)
    env.fine_tune(1)
    c = env.clone()
    assert c.cursor[1] == 0
    assert c.evaluate(1) == first


# --- OPE -------------------------------------------------------------------


def test_noiseless_ope_equals_pretrained_values():
    env = FineTuneEnv(_cfg((0.2, 1.0), (0.8, 0.0), (0.5, 0.5)))
    assert env.ope_estimates() == (0.2, 0.8, 0.5)
    assert ope_ranks(env.ope_estimates()) == [3, 1, 2]


def test_ope_bias_shifts_without_changing_ranks():
    plain = FineTuneEnv(_cfg((0.2, 1.0), (0.8, 0.0), (0.5, 0.5)))
    shifted = FineTuneEnv(_cfg((0.2, 1.0), (0.8, 0.0), (0.5, 0.5), ope_bias=10.0))
    assert shifted.ope_estimates() == pytest.approx([10.2, 10.8, 10.5])
    assert ope_ranks(shifted.ope_estimates()) == ope_ranks(plain.ope_estimates())


def _spearman(a, b):
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    return np.corrcoef(ra, rb)[0, 1]


def test_heavy_ope_noise_decorrelates_ranks():
    pretrained = np.linspace(0.0, 1.0, 16)
    curves = [(v, v) for v in pretrained]
    rhos = []
    for seed in range(200):
        env = FineTuneEnv(_cfg(*curves, ope_noise_std=1.0, seed=seed))
        rhos.append(_spearman(env.ope_estimates(), pretrained))
    assert np.mean(rhos) < 0.5


def test_ope_drawn_once_and_independent_of_eval_stream():
    quiet = FineTuneEnv(_cfg((0.2, 0.3), (0.4, 0.5), ope_noise_std=0.3, seed=8))
    noisy = FineTuneEnv(_cfg((0.2, 0.3), (0.4, 0.5), ope_noise_std=0.3, eval_noise_std=2.0, seed=8))
    for _ in range(17):
        noisy.evaluate(2)
    assert noisy.ope_estimates() == quiet.ope_estimates()
    assert noisy.ope_estimates() is noisy.ope_estimates()


# --- synth_curves ----------------------------------------------------------


def test_plateau_constant():
    c = synth_curves("PLATEAU", 10, {"level": 0.5})
    assert c.values == (0.5,) * 10


def test_logistic_closed_form_endpoints():
    p = {"floor": 0.2, "ceiling": 0.9, "rate": 1.0, "midpoint": 4.0}
    c = synth_curves(CurveFamily.LOGISTIC_IMPROVE, 12, p)
    first = 0.2 + 0.7 / (1.0 + math.exp(4.0))
    last = 0.2 + 0.7 / (1.0 + math.exp(-7.0))
    assert c.values[0] == pytest.approx(first, abs=1e-6)
    assert c.values[-1] == pytest.approx(last, abs=1e-12)
    assert c.values[-1] < 0.9
    assert all(b > a for a, b in zip(c.values, c.values[1:]))


def test_rise_then_collapse_interior_peak():
    c = synth_curves("rise_then_collapse", 9)
    k = int(np.argmax(c.values))
    assert 0 < k < 8
    assert c.values[k] == 0.8


def test_random_walk_seeded():
    a = synth_curves("RANDOM_WALK", 20, {"step_std": 0.3}, seed=4)
    b = synth_curves("RANDOM_WALK", 20, {"step_std": 0.3}, seed=4)
    c = synth_curves("RANDOM_WALK", 20, {"step_std": 0.3}, seed=5)
    assert a == b and a != c
    assert a.values[0] == 0.5


def test_curve_noise_applies_and_is_seeded():
    a = synth_curves("PLATEAU", 30, {"level": 1.0, "noise_std": 0.1}, seed=3)
    assert a != synth_curves("PLATEAU", 30, {"level": 1.0})
    assert a == synth_curves("PLATEAU", 30, {"level": 1.0, "noise_std": 0.1}, seed=3)
    assert np.std(a.values) == pytest.approx(0.1, rel=0.4)


@pytest.mark.parametrize(
    "family,length,params",
    [
        ("SAWTOOTH", 5, {}),
        ("PLATEAU", 1, {}),
        ("PLATEAU", 5, {"slope": 1.0}),
        ("RISE_THEN_COLLAPSE", 2, {}),
        ("RISE_THEN_COLLAPSE", 6, {"peak": 0.1}),
        ("LOGISTIC_IMPROVE", 6, {"ceiling": 0.1}),
    ],
)
def test_synth_rejects_bad_input(family, length, params):
    with pytest.raises(InputError):
        synth_curves(family, length, params)


@settings(max_examples=80, deadline=None)
@given(
    length=st.integers(3, 40),
    floor=st.floats(-1, 1),
    span=st.floats(0.01, 2),
    rate=st.floats(0.05, 3),
    midpoint=st.floats(-5, 20),
)
def test_logistic_monotone(length, floor, span, rate, midpoint):
    p = {"floor": floor, "ceiling": floor + span, "rate": rate, "midpoint": midpoint}
    v = synth_curves("LOGISTIC_IMPROVE", length, p).values
    assert all(b >= a for a, b in zip(v, v[1:]))
    assert max(v) <= floor + span


@settings(max_examples=80, deadline=None)
@given(
    length=st.integers(3, 40),
    start=st.floats(-1, 1),
    rise=st.floats(0.01, 1),
    drop=st.floats(0.01, 1),
    peak_at=st.floats(0, 50),
    decay=st.floats(0.05, 3),
)
def test_rise_then_collapse_unimodal(length, start, rise, drop, peak_at, decay):
    peak = start + rise
    p = {"start": start, "peak": peak, "end": peak - drop, "peak_at": peak_at, "decay": decay}
    v = synth_curves("RISE_THEN_COLLAPSE", length, p).values
    k = v.index(max(v))
    assert 0 < k < length - 1
    assert all(b > a for a, b in zip(v[: k + 1], v[1 : k + 1]))
    # the decay tail saturates at `end` in floating point, so only non-increasing
    assert all(b <= a for a, b in zip(v[k:], v[k + 1 :]))
    assert v[-1] < v[k]


@settings(max_examples=40, deadline=None)
@given(length=st.integers(2, 40), level=st.floats(-100, 100))
def test_plateau_property(length, level):
    assert set(synth_curves("PLATEAU", length, {"level": level}).values) == {level}


# --- load_traces -----------------------------------------------------------


def test_load_traces_well_formed(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("policy_id,iteration,value\n1,0,0.1\n1,1,0.2\n1,2,0.3\n2,0,0.5\n2,2,0.3\n2,1,0.4\n")
    (tmp_path / "t.json").write_text('{"eval_noise_std": 0.05, "behavior_value": 0.25, "seed": 3}')
    cfg = load_traces(path)
    assert [c.values for c in cfg.curves] == [(0.1, 0.2, 0.3), (0.5, 0.4, 0.3)]
    assert cfg.eval_noise_std == 0.05 and cfg.behavior_value == 0.25 and cfg.seed == 3
    assert cfg.ope_bias == 0.0


def test_load_traces_missing_iteration_names_policy(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("policy_id,iteration,value\n1,0,0.1\n1,1,0.2\n2,0,0.5\n2,2,0.3\n")
    with pytest.raises(FormatError, match="policy 2 is missing iterations \\[1\\]"):
        load_traces(path)


def test_load_traces_empty_file(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("")
    with pytest.raises(FormatError, match="empty"):
        load_traces(path)


@pytest.mark.parametrize(
    "body,pattern",
    [
        ("policy_id,iteration,value\n1,0,abc\n", ":2:"),
        ("policy_id,iteration,value\n1,0,0.1\n1,0,0.2\n", "duplicate"),
        ("policy_id,iteration,value\n1,0,0.1,9\n", "3 fields"),
        ("id,it,v\n1,0,0.1\n", "header"),
        ("policy_id,iteration,value\n2,0,0.1\n", "1..K"),
        ("policy_id,iteration,value\n1,0,nan\n", "non-finite"),
        ("policy_id,iteration,value\n", "no data"),
    ],
)
def test_load_traces_format_errors(tmp_path, body, pattern):
    path = tmp_path / "t.csv"
    path.write_text(body)
    with pytest.raises(FormatError, match=pattern):
        load_traces(path)


def test_load_traces_bad_sidecar(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("policy_id,iteration,value\n1,0,0.1\n")
    (tmp_path / "t.json").write_text('{"temperature": 1}')
    with pytest.raises(FormatError, match="unknown keys"):
        load_traces(path)


def test_write_then_load_round_trip(tmp_path):
    cfg = _cfg((0.1, 0.123456789012345), (1e-17, -3.0), eval_noise_std=0.2, ope_bias=-1.0, seed=9)
    write_traces(cfg, tmp_path / "r.csv")
    assert load_traces(tmp_path / "r.csv") == cfg


# --- EnvConfig -------------------------------------------------------------


def test_env_config_collects_problems():
    with pytest.raises(ConfigError) as err:
        EnvConfig((TrueCurve(2, (0.1,)),), eval_noise_std=-1.0, ope_noise_std=math.nan)
    assert len(err.value.problems) == 3


def test_check_budget_requires_longer_curves():
    cfg = _cfg((0.1, 0.2, 0.3), (0.1, 0.2))
    cfg.check_budget(1)
    with pytest.raises(ConfigError, match="\\[2\\]"):
        cfg.check_budget(2)
