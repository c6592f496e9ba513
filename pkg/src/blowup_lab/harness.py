"""Sweeps over the data size, lifespan scaling fits, config files and output."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import csv
from fractions import Fraction
import math
import os
import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, column_or_1d

from .exceptions import ConfigError, OutputError, UsageError
from .frames import (DEFAULT_BASE, ExponentPair, build_schedule, classify, envelope,
                     iteration_constants)
from .solver import DataProfile, ModelConfig, run
from .specialfn import DampingSpec

__all__ = [
    "RunSpec", "parse_config", "load_config", "SweepPlan", "LifespanRecord",
    "SweepResult", "sweep", "theory_envelope", "fit_scaling",
    "LifespanScalingRegressor", "emit", "read_records", "CSV_HEADER",
    "GOLDEN_SWEEP_CONFIG",
]

# Reference lifespan study: n = 1, no damping, p = q = 2.  The source of each
# equation travels at the characteristic speed of the other, so lifespans at
# small eps need dr = 1/128 to settle within a few percent.
GOLDEN_SWEEP_CONFIG = """\
n = 1
p = 2
q = 2
damping.mode = None
epsilons = 0.5, 0.35, 0.25, 0.18, 0.125, 0.09
grid.dr = 1/128
time.t_max = 3000
"""


_MODEL_KEYS = {
    "n": int, "p": "exponent", "q": "exponent",
    "damping.mode": str, "damping.mu": float, "damping.b0": float, "damping.kappa": float,
    "profile.R": float, "profile.u0_amp": float, "profile.u1_amp": float,
    "profile.v0_amp": float, "profile.v1_amp": float,
    "grid.dr": "ratio", "grid.margin_cells": int,
    "time.cfl": float, "time.dt0": "ratio", "time.t_max": float,
    "time.blowup_threshold": float, "time.dt_floor": float, "time.snapshot_every": "ratio",
    "model.nonlinear": bool, "model.u_damping": float,
}
_OTHER_KEYS = {
    "epsilon": "list", "epsilons": "list",
    "frames.T0": float, "frames.j_max": int, "frames.K1": float, "frames.C": float,
    "frames.K": float, "frames.threshold": float,
    "sweep.slack": float, "sweep.jobs": int,
}
CONFIG_KEYS = tuple(_MODEL_KEYS) + tuple(_OTHER_KEYS)


def _parse_value(key, raw, kind):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "ratio":
            return float(Fraction(raw))
        if kind == "exponent":
            # rationals stay exact so the frames tables use exact arithmetic
            if "/" in raw or raw.lstrip("+-").isdigit():
                return Fraction(raw)
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "list":
            return tuple(float(Fraction(x.strip())) for x in raw.split(",") if x.strip())
        return raw
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


@dataclass(frozen=True)
class RunSpec:
    """Everything a config file can specify."""

    model: ModelConfig
    epsilons: tuple
    frames: dict = field(default_factory=dict)
    slack: float = 0.5
    jobs: int = 1


def parse_config(text, source="<string>"):
    """Parse the flat ``key = value`` format; ``#`` starts a comment.

    Unknown and repeated keys are errors.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        kind = _MODEL_KEYS.get(key, _OTHER_KEYS.get(key))
        if kind is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, kind)
    return spec_from_values(values)


def spec_from_values(values):
    v = dict(values)
    eps = v.pop("epsilons", None) or v.pop("epsilon", None) or (0.5,)
    v.pop("epsilon", None)
    damping = DampingSpec(v.pop("damping.mode", "None"), mu=v.pop("damping.mu", 0.0),
                          b0=v.pop("damping.b0", 0.0), kappa=v.pop("damping.kappa", 2.0))
    prof_keys = {k: v.pop("profile." + k) for k in ("R", "u0_amp", "u1_amp", "v0_amp", "v1_amp")
                 if "profile." + k in v}
    kw = {}
    for key, name in (("grid.dr", "dr"), ("grid.margin_cells", "margin_cells"),
                      ("time.cfl", "cfl"), ("time.dt0", "dt0"), ("time.t_max", "t_max"),
                      ("time.blowup_threshold", "blowup_threshold"),
                      ("time.dt_floor", "dt_floor"), ("time.snapshot_every", "snapshot_every"),
                      ("model.nonlinear", "nonlinear"), ("model.u_damping", "u_damping")):
        if key in v:
            kw[name] = v.pop(key)
    model = ModelConfig(n=v.pop("n", 1), exps=ExponentPair(v.pop("p", 2), v.pop("q", 2)),
                        damping=damping, epsilon=eps[0], profile=DataProfile(**prof_keys), **kw)
    frames = {k.split(".", 1)[1]: v.pop(k) for k in list(v) if k.startswith("frames.")}
    slack = v.pop("sweep.slack", 0.5)
    jobs = v.pop("sweep.jobs", 1)
    if v:
        raise ConfigError(f"unhandled keys: {sorted(v)}")
    return RunSpec(model=model, epsilons=tuple(eps), frames=frames, slack=slack, jobs=jobs)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))


@dataclass(frozen=True)
class SweepPlan:
    """A base instance and a strictly decreasing list of positive data sizes."""

    base_config: ModelConfig
    epsilons: tuple
    parallelism: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        if not eps:
            raise ConfigError("a sweep needs at least one epsilon")
        if any(e <= 0 for e in eps):
            raise ConfigError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilons must be strictly decreasing")
        if not isinstance(self.parallelism, int) or self.parallelism < 1:
            raise ConfigError("parallelism must be an integer >= 1")
        if len(eps) > 1:
            ratios = [b / a for a, b in zip(eps, eps[1:])]
            if len(eps) < 5 or max(ratios) > 0.75:
                warnings.warn("sweep is short or coarsely spaced: scaling fits need at least "
                              "5 points with ratio near 0.7 or below", stacklevel=2)


@dataclass(frozen=True)
class LifespanRecord:
    epsilon: float
    status: str
    censored: bool
    t_blowup: float = None
    t_final: float = None
    steps: int = 0
    envelope_value: float = None
    envelope_calibrated: float = None


CSV_HEADER = ("epsilon", "status", "censored", "t_blowup", "t_final", "steps",
              "envelope_value", "envelope_calibrated")


@dataclass
class SweepResult:
    records: list
    classifier: object
    inconclusive: bool
    envelope: object = None


def theory_envelope(config, frames=None):
    """Envelope from the iteration constants, or ``None`` outside the blow-up range."""
    frames = dict(frames or {})
    clf = classify(config.n, config.damping, config.exps)
    if clf.regime == "OutOfRange":
        return clf, None
    base = {k: frames.get(k, DEFAULT_BASE[k]) for k in ("K1", "C", "K")}
    j_max = frames.get("j_max", 40)
    sched = build_schedule(frames.get("T0", 1.0), config.exps, j_max)
    consts = iteration_constants(sched, clf, base, j_max)
    return clf, envelope(clf, consts)


def _one_run(config):
    report, _, _ = run(config, keep_trajectory=False, with_trace=False)
    return report


def sweep(plan, frames=None):
    """One solver run per epsilon, results in input order."""
    clf, env = theory_envelope(plan.base_config, frames)
    if clf.regime == "OutOfRange":
        warnings.warn("instance is outside the blow-up range; runs may be censored",
                      stacklevel=2)
    configs = [plan.base_config.with_epsilon(e) for e in plan.epsilons]
    if plan.parallelism > 1:
        with ThreadPoolExecutor(max_workers=plan.parallelism) as pool:
            reports = list(pool.map(_one_run, configs))
    else:
        reports = [_one_run(c) for c in configs]
    records = []
    for eps, rep in zip(plan.epsilons, reports):
        ok = rep.status == "BlowupDetected"
        records.append(LifespanRecord(
            epsilon=eps, status=rep.status, censored=not ok,
            t_blowup=rep.t_blowup_estimate if ok else None, t_final=rep.t_final,
            steps=rep.steps, envelope_value=None if env is None else float(env.bound(eps))))
    inconclusive = all(r.censored for r in records)
    return SweepResult(records=records, classifier=clf, inconclusive=inconclusive, envelope=env)


class LifespanScalingRegressor(RegressorMixin, BaseEstimator):
    """Power-law fit of lifespan against ``1/eps``.

    ``fit(eps, T)`` regresses ``log T`` (subcritical) or ``log log T``
    (critical) on ``log(1/eps)``; ``predict`` inverts the fitted law.
    """

    def __init__(self, regime="Subcritical"):
        self.regime = regime

    def _transform_y(self, T):
        if self.regime == "Critical":
            if np.any(T <= 1):
                raise UsageError("critical fits need lifespans > 1")
            return np.log(np.log(T))
        return np.log(T)

    def fit(self, X, y):
        if self.regime not in ("Subcritical", "Critical"):
            raise UsageError(f"unsupported regime {self.regime!r}")
        X, y = check_X_y(np.asarray(X, dtype=float).reshape(-1, 1), y, y_numeric=True)
        eps = X[:, 0]
        if np.any(eps <= 0) or np.any(y <= 0):
            raise UsageError("eps and lifespans must be positive")
        if eps.size < 2:
            raise UsageError("need at least two points")
        x = np.log(1.0 / eps)
        z = self._transform_y(y)
        A = np.column_stack([x, np.ones_like(x)])
        (slope, intercept), *_ = np.linalg.lstsq(A, z, rcond=None)
        resid = z - A @ np.array([slope, intercept])
        ss_tot = float(np.sum((z - z.mean()) ** 2))
        self.slope_ = float(slope)
        self.intercept_ = float(intercept)
        self.r2_ = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        eps = column_or_1d(np.asarray(X, dtype=float).reshape(-1, 1))
        z = self.intercept_ + self.slope_ * np.log(1.0 / eps)
        return np.exp(np.exp(z)) if self.regime == "Critical" else np.exp(z)


def fit_scaling(records, classifier, slack=0.5):
    """Fit the lifespan law and compare it with the theoretical upper bound.

    Returns a dict with ``slope``, ``intercept``, ``r2``, ``verdict``
    (``PASS``/``FAIL``/``INCONCLUSIVE``), the calibrated constant ``C_hat``,
    the ``target`` slope, ``monotone`` and the calibrated envelope values.
    Only upper-bound consistency is judged.
    """
    live = [r for r in records if not r.censored and r.t_blowup is not None]
    out = {"slope": None, "intercept": None, "r2": None, "verdict": "INCONCLUSIVE",
           "C_hat": None, "target": None, "monotone": None, "calibrated": {},
           "points": len(live), "reason": ""}
    if len(live) < 4:
        out["reason"] = f"need at least 4 uncensored records, got {len(live)}"
        return out
    live.sort(key=lambda r: -r.epsilon)
    eps = np.array([r.epsilon for r in live])
    T = np.array([r.t_blowup for r in live])
    out["monotone"] = bool(np.all(np.diff(T) >= 0))
    regime = classifier.regime
    if regime not in ("Subcritical", "Critical"):
        out["reason"] = "no lifespan bound outside the blow-up range"
        return out
    reg = LifespanScalingRegressor(regime).fit(eps, T)
    out.update(slope=reg.slope_, intercept=reg.intercept_, r2=reg.r2_)
    if regime == "Subcritical":
        power = 1.0 / float(classifier.theta)
        C_hat = T[0] * eps[0] ** power
        bound = C_hat * eps ** (-power)
    else:
        power = float(classifier.exps.pq) - 1.0
        C_hat = math.log(T[0]) * eps[0] ** power
        bound = np.exp(C_hat * eps ** (-power))
    target = power + slack
    under = bool(np.all(T <= bound * (1 + 1e-12)))
    out.update(C_hat=float(C_hat), target=target, under_envelope=under,
               calibrated={float(e): float(b) for e, b in zip(eps, bound)})
    out["verdict"] = "PASS" if (reg.slope_ <= target and under) else "FAIL"
    return out


def with_calibration(records, fit):
    cal = fit.get("calibrated", {})
    return [replace(r, envelope_calibrated=cal.get(float(r.epsilon))) for r in records]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit(records, path, fmt="csv", csv_name=None):
    """Write records as CSV, or a plotting script that reads such a CSV.

    ``csv_name`` is the CSV file the script loads (default: ``path`` with a
    ``.csv`` suffix).
    """
    if fmt not in ("csv", "plot-script"):
        raise UsageError(f"unknown format {fmt!r}")
    try:
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_HEADER)
                for r in records:
                    w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
        else:
            name = csv_name or os.path.splitext(os.path.basename(path))[0] + ".csv"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(_PLOT_SCRIPT.replace("@CSV@", name))
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def read_records(path):
    """Parse a CSV written by :func:`emit` back into records."""
    def num(s, cast=float):
        return None if s == "" else cast(s)

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [LifespanRecord(epsilon=float(r["epsilon"]), status=r["status"],
                           censored=r["censored"] == "true", t_blowup=num(r["t_blowup"]),
                           t_final=num(r["t_final"]), steps=int(r["steps"]),
                           envelope_value=num(r["envelope_value"]),
                           envelope_calibrated=num(r["envelope_calibrated"]))
            for r in rows]


_PLOT_SCRIPT = '''"""Log-log lifespan plot with envelope overlays (generated)."""
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
src = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "@CSV@")
rows = list(csv.DictReader(open(src, newline="")))
live = [r for r in rows if r["censored"] == "false" and r["t_blowup"]]
eps = [float(r["epsilon"]) for r in live]
fig, ax = plt.subplots(figsize=(5, 4))
ax.loglog([1 / e for e in eps], [float(r["t_blowup"]) for r in live], "o", label="measured T")
cal = [(1 / float(r["epsilon"]), float(r["envelope_calibrated"])) for r in live
       if r["envelope_calibrated"]]
if cal:
    ax.loglog(*zip(*cal), "-", label="calibrated envelope")
th = [(1 / float(r["epsilon"]), float(r["envelope_value"])) for r in rows
      if r["envelope_value"]]
if th:
    ax.loglog(*zip(*th), "--", label="theoretical envelope")
cens = [r for r in rows if r["censored"] == "true"]
if cens:
    ax.loglog([1 / float(r["epsilon"]) for r in cens], [float(r["t_final"]) for r in cens],
              "^", label="censored (t_final)")
ax.set_xlabel("1/epsilon")
ax.set_ylabel("lifespan")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.splitext(src)[0] + ".png", dpi=120)
'''
