from fractions import Fraction
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blowup_lab.exceptions import ConfigError, OutputError, UsageError
from blowup_lab.frames import ExponentPair, classify
from blowup_lab.harness import (CSV_HEADER, LifespanRecord, LifespanScalingRegressor, SweepPlan,
                                emit, fit_scaling, load_config, parse_config, read_records,
                                sweep, with_calibration)
from blowup_lab.solver import ModelConfig
from blowup_lab.specialfn import DampingSpec

SUB = classify(1, DampingSpec("None"), ExponentPair(2, 2))
CRIT = classify(2, DampingSpec("None"), ExponentPair(math.sqrt(3), math.sqrt(3)))
EPS = (0.5, 0.35, 0.25, 0.18, 0.125, 0.09)


def records_from(eps, T):
    return [LifespanRecord(epsilon=e, status="BlowupDetected", censored=False, t_blowup=t,
                           t_final=t, steps=1) for e, t in zip(eps, T)]


def test_synthetic_power_law_fit():
    eps = np.array(EPS)
    fit = fit_scaling(records_from(eps, 2.0 * eps ** -3.0), SUB)
    assert fit["slope"] == pytest.approx(3.0, abs=1e-9)
    assert fit["r2"] > 1 - 1e-12
    assert fit["verdict"] == "PASS" and fit["monotone"]
    assert fit["C_hat"] == pytest.approx(2.0)


def test_fit_fails_on_steeper_law():
    eps = np.array(EPS)
    fit = fit_scaling(records_from(eps, eps ** -4.0), SUB)
    assert fit["verdict"] == "FAIL"


def test_fit_fails_above_calibrated_envelope():
    eps = np.array(EPS)
    T = eps ** -3.0
    T[-1] *= 1.5
    fit = fit_scaling(records_from(eps, T), SUB)
    assert not fit["under_envelope"] and fit["verdict"] == "FAIL"


def test_critical_fit():
    eps = np.array([0.9, 0.8, 0.7, 0.6, 0.5])
    T = np.exp(1.5 * eps ** -2.0)
    fit = fit_scaling(records_from(eps, T), CRIT)
    assert fit["slope"] == pytest.approx(2.0, abs=1e-9) and fit["verdict"] == "PASS"


@pytest.mark.parametrize("count", [0, 2, 3])
def test_fit_inconclusive_without_data(count):
    fit = fit_scaling(records_from(EPS[:count], [1.0, 2.0, 3.0][:count]), SUB)
    assert fit["verdict"] == "INCONCLUSIVE"


def test_censored_records_are_excluded():
    recs = records_from(EPS[:4], [1, 2, 3, 4])
    recs.append(LifespanRecord(0.1, "CompletedToTmax", True, None, 10.0, 5))
    assert fit_scaling(recs, SUB)["points"] == 4


@given(st.floats(0.5, 5.0), st.floats(0.1, 100.0))
def test_regressor_recovers_power(power, scale):
    eps = np.geomspace(0.05, 0.8, 7)
    reg = LifespanScalingRegressor().fit(eps, scale * eps ** -power)
    assert reg.slope_ == pytest.approx(power, rel=1e-9)
    assert np.allclose(reg.predict(eps), scale * eps ** -power, rtol=1e-8)


def test_regressor_validation():
    with pytest.raises(UsageError):
        LifespanScalingRegressor().fit([0.5], [1.0])
    with pytest.raises(UsageError):
        LifespanScalingRegressor("OutOfRange").fit([0.5, 0.4], [1.0, 2.0])


def test_plan_validation():
    base = ModelConfig()
    with pytest.raises(ConfigError):
        SweepPlan(base, (0.2, 0.3))
    with pytest.raises(ConfigError):
        SweepPlan(base, (0.2, -0.1))
    with pytest.raises(ConfigError):
        SweepPlan(base, ())
    with pytest.raises(ConfigError):
        SweepPlan(base, (0.5,), parallelism=0)
    with pytest.warns(UserWarning):
        SweepPlan(base, (0.5, 0.45))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        SweepPlan(base, EPS)


def test_single_epsilon_plan():
    res = sweep(SweepPlan(ModelConfig(t_max=20.0), (0.5,)))
    assert len(res.records) == 1 and res.records[0].status == "BlowupDetected"
    assert res.records[0].envelope_value > res.records[0].t_blowup


def test_out_of_range_plan_is_censored():
    cfg = ModelConfig(damping=DampingSpec("ScaleInvariant", mu=2.0), t_max=5.0)
    with pytest.warns(UserWarning):
        res = sweep(SweepPlan(cfg, (0.05, 0.02)))
    assert all(r.censored for r in res.records) and res.inconclusive
    assert res.envelope is None


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = ModelConfig(t_max=30.0)
    eps = (0.6, 0.5, 0.4)
    with pytest.warns(UserWarning):
        a = sweep(SweepPlan(cfg, eps, parallelism=1))
        b = sweep(SweepPlan(cfg, eps, parallelism=3))
    emit(a.records, tmp_path / "a.csv")
    emit(b.records, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_round_trip(tmp_path):
    recs = records_from(EPS[:3], [6.1, 11.5, 24.25])
    recs.append(LifespanRecord(0.1, "CompletedToTmax", True, None, 1e3, 7, 1e9, None))
    recs = with_calibration(recs, {"calibrated": {0.5: 6.1}})
    path = tmp_path / "out" / "l.csv"
    emit(recs, path)
    assert read_records(path) == recs


def test_empty_records_give_header_only(tmp_path):
    emit([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(CSV_HEADER) + "\n"


def test_plot_script_is_valid_python(tmp_path):
    emit([], tmp_path / "plot.py", "plot-script", csv_name="lifespans.csv")
    src = (tmp_path / "plot.py").read_text()
    compile(src, "plot.py", "exec")
    assert "lifespans.csv" in src


def test_emit_errors_carry_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError, match="file"):
        emit([], blocker / "sub" / "x.csv")
    with pytest.raises(UsageError):
        emit([], tmp_path / "x.txt", "json")


def test_config_parsing(tmp_path):
    text = """
    # golden scale-invariant instance
    n = 1
    p = 3/2
    q = 1.5
    damping.mode = ScaleInvariant
    damping.mu = 1
    epsilons = 0.3, 0.2
    grid.dr = 1/64
    time.t_max = 50   # censor here
    model.nonlinear = yes
    frames.K1 = 0.2
    sweep.jobs = 2
    """
    path = tmp_path / "c.cfg"
    path.write_text(text)
    spec = load_config(path)
    assert spec.model.exps.p == Fraction(3, 2) and isinstance(spec.model.exps.q, float)
    assert spec.model.dr == 1 / 64 and spec.model.t_max == 50
    assert spec.epsilons == (0.3, 0.2) and spec.model.epsilon == 0.3
    assert spec.frames == {"K1": 0.2} and spec.jobs == 2


@pytest.mark.parametrize("text,match", [
    ("foo = 1", "unknown key"),
    ("n = 1\nn = 2", "duplicate"),
    ("n", "key = value"),
    ("n = two", "bad value"),
    ("model.nonlinear = maybe", "bad value"),
    ("profile.u0_amp = 2", "u_1 >= u_0"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")
