"""Radially symmetric method-of-lines integrator for the coupled damped wave system

    u_tt - Delta u + u_t      = |v_t|^p
    v_tt - Delta v + b(t) v_t = |u_t|^q
    (u, u_t, v, v_t)(0) = eps (u0, u1, v0, v1)

on ``0 <= r <= r_active``, with the radial Laplacian ``w'' + (n-1)/r w'``
(``n w''`` at the origin).

Time stepping is the explicit central-difference Newmark scheme: positions
advance with the explicit acceleration, velocities by the trapezoidal rule
with the end-of-step damping and source terms solved pointwise.  The step is
second order in time and space and accepts a variable ``dt``.
"""

from dataclasses import dataclass, field, replace, asdict
from functools import cached_property
import logging
import math

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_int, check_scalar
from .exceptions import BlowupLabError, ConfigError, UsageError
from .frames import ExponentPair
from .specialfn import DEFAULT_QUAD, DampingSpec, sphere_area

__all__ = [
    "DataProfile", "ModelConfig", "RadialState", "BlowupReport",
    "NumericalBlowup", "bump", "init_state", "step", "run",
    "radial_laplacian", "BlowupSimulator",
]

logger = logging.getLogger(__name__)

_GROWTH_LIMIT = 1.1
_FIXED_POINT_ITERS = 60


class NumericalBlowup(BlowupLabError):
    """Raised by :func:`step` when the update produces non-finite values."""


def bump(s):
    """``exp(1 - 1/(1 - s^2))`` on ``|s| < 1``, zero elsewhere (peak value 1)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class DataProfile:
    """Initial data ``(u0, u1, v0, v1) = amplitudes * bump(r/R)``."""

    R: float = 1.0
    u0_amp: float = 0.5
    u1_amp: float = 1.0
    v0_amp: float = 1.0
    v1_amp: float = 1.0

    def __post_init__(self):
        check_scalar(self.R, "R", lower=0, strict_lower=True, exc=ConfigError)
        for name in ("u0_amp", "u1_amp", "v0_amp", "v1_amp"):
            check_scalar(getattr(self, name), name, lower=0, exc=ConfigError)


@dataclass(frozen=True)
class ModelConfig:
    """A complete problem instance plus its discretization.

    ``dt0`` defaults to ``cfl * dr`` and ``snapshot_every`` to ``50 * dt0``.
    ``blowup_threshold`` is relative to the initial peak of ``|u_t|, |v_t|``.
    ``u_damping`` is the constant damping coefficient of the first equation.
    """

    n: int = 1
    exps: ExponentPair = field(default_factory=lambda: ExponentPair(2, 2))
    damping: DampingSpec = field(default_factory=DampingSpec)
    epsilon: float = 0.5
    profile: DataProfile = field(default_factory=DataProfile)
    dr: float = 1.0 / 32.0
    margin_cells: int = 2
    cfl: float = 0.5
    dt0: float = None
    t_max: float = 100.0
    blowup_threshold: float = 1e8
    dt_floor: float = 1e-9
    snapshot_every: float = None
    nonlinear: bool = True
    u_damping: float = 1.0

    def __post_init__(self):
        check_int(self.n, "n", lower=1, exc=ConfigError)
        if not isinstance(self.exps, ExponentPair):
            raise ConfigError("exps must be an ExponentPair")
        if not isinstance(self.damping, DampingSpec):
            raise ConfigError("damping must be a DampingSpec")
        check_scalar(self.epsilon, "epsilon", lower=0, exc=ConfigError)
        check_scalar(self.dr, "dr", lower=0, strict_lower=True, exc=ConfigError)
        check_int(self.margin_cells, "margin_cells", lower=2, exc=ConfigError)
        check_scalar(self.cfl, "cfl", lower=0, upper=1, strict_lower=True, exc=ConfigError)
        if self.dt0 is None:
            object.__setattr__(self, "dt0", self.cfl * self.dr)
        check_scalar(self.dt0, "dt0", lower=0, strict_lower=True, exc=ConfigError)
        if self.dt0 > self.cfl * self.dr * (1 + 1e-12):
            raise ConfigError(f"dt0={self.dt0} violates the CFL bound {self.cfl}*dr")
        check_scalar(self.t_max, "t_max", lower=0, strict_lower=True, exc=ConfigError)
        check_scalar(self.blowup_threshold, "blowup_threshold", lower=1, strict_lower=True,
                     exc=ConfigError)
        check_scalar(self.dt_floor, "dt_floor", lower=0, strict_lower=True, exc=ConfigError)
        if self.snapshot_every is None:
            object.__setattr__(self, "snapshot_every", 50.0 * self.dt0)
        check_scalar(self.snapshot_every, "snapshot_every", lower=0, strict_lower=True,
                     exc=ConfigError)
        check_scalar(self.u_damping, "u_damping", lower=0, exc=ConfigError)
        self.check_hypotheses()

    def check_hypotheses(self):
        prof = self.profile
        if prof.u1_amp < prof.u0_amp:
            raise ConfigError("data hypothesis violated: u_1 >= u_0 is required "
                              f"(u1_amp={prof.u1_amp} < u0_amp={prof.u0_amp})")
        if self.damping.mode == "ScaleInvariant" and prof.v0_amp <= 0:
            raise ConfigError("data hypothesis violated: v_0 must be nontrivial "
                              "for scale-invariant damping")
        if self.damping.mode == "Scattering" and prof.v1_amp <= 0:
            raise ConfigError("data hypothesis violated: v_1 must be nontrivial "
                              "for scattering damping")

    def with_epsilon(self, epsilon):
        return replace(self, epsilon=epsilon)

    def refined(self, factor=2):
        """Same instance with ``dr``, ``dt0`` and the snapshot cadence divided by ``factor``."""
        return replace(self, dr=self.dr / factor, dt0=self.dt0 / factor,
                       snapshot_every=self.snapshot_every / factor)


@dataclass(frozen=True, eq=False)
class RadialState:
    """Fields on the uniform grid ``r_i = i * dr``, ``i < len(u)``."""

    t: float
    dr: float
    u: np.ndarray
    du: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    r_active: float

    @property
    def r(self):
        return self.dr * np.arange(self.u.size)

    @cached_property
    def peak_du(self):
        return float(np.max(np.abs(self.du)))

    @cached_property
    def peak_dv(self):
        return float(np.max(np.abs(self.dv)))

    @property
    def peak(self):
        return max(self.peak_du, self.peak_dv)


@dataclass(frozen=True)
class BlowupReport:
    status: str
    t_final: float
    t_blowup_estimate: float = None
    peak_du: float = 0.0
    peak_dv: float = 0.0
    steps: int = 0
    rejected: int = 0
    dt_final: float = 0.0
    history: tuple = ()

    def as_record(self, config=None):
        rec = {"status": self.status, "t_final": self.t_final,
               "t_blowup_estimate": self.t_blowup_estimate,
               "peak_du": self.peak_du, "peak_dv": self.peak_dv,
               "steps": self.steps, "rejected": self.rejected, "dt_final": self.dt_final}
        if config is not None:
            rec.update({"dr": config.dr, "dt0": config.dt0, "cfl": config.cfl,
                        "t_max": config.t_max, "blowup_threshold": config.blowup_threshold,
                        "dt_floor": config.dt_floor, "epsilon": config.epsilon})
        return rec


def _grid_size(r_active, dr):
    return int(math.ceil(r_active / dr - 1e-9)) + 1


def init_state(config):
    """State at ``t = 0`` with ``eps``-scaled bump data on ``[0, R + margin]``."""
    prof = config.profile
    r_active = prof.R + config.margin_cells * config.dr
    r = config.dr * np.arange(_grid_size(r_active, config.dr))
    b = bump(r / prof.R)
    eps = float(config.epsilon)
    return RadialState(t=0.0, dr=config.dr,
                       u=eps * prof.u0_amp * b, du=eps * prof.u1_amp * b,
                       v=eps * prof.v0_amp * b, dv=eps * prof.v1_amp * b,
                       r_active=r_active)


def radial_laplacian(w, dr, n):
    """Second-order radial Laplacian with even reflection at 0 and zero beyond the last node."""
    inv = 1.0 / (dr * dr)
    out = np.empty_like(w)
    out[1:-1] = w[2:] + w[:-2]
    out[-1] = w[-2]
    out[1:] -= 2.0 * w[1:]
    out[0] = 2.0 * n * (w[1] - w[0])
    if n > 1:
        grad = np.empty(w.size - 1)
        grad[:-1] = w[2:] - w[:-2]
        grad[-1] = -w[-2]
        out[1:] += (0.5 * (n - 1)) * grad / np.arange(1, w.size)
    out *= inv
    return out


def _abs_pow(x, p):
    if p == 2:
        return x * x
    a = np.abs(x)
    if p == 1.5:
        return a * np.sqrt(a)
    if p == 3:
        return a * a * a
    return a ** p


def _extend(state, r_target):
    size = _grid_size(r_target, state.dr)
    if size <= state.u.size:
        return state.u, state.du, state.v, state.dv
    pad = size - state.u.size
    return tuple(np.concatenate([a, np.zeros(pad)]) for a in
                 (state.u, state.du, state.v, state.dv))


def step(state, config, dt):
    """Advance one step of size ``dt``; returns a new :class:`RadialState`.

    Raises
    ------
    UsageError
        If ``dt`` exceeds ``cfl * dr``.
    NumericalBlowup
        If the update is non-finite or the pointwise velocity solve diverges.
    """
    if not dt > 0 or dt > config.cfl * state.dr * (1 + 1e-12):
        raise UsageError(f"dt={dt} violates 0 < dt <= cfl*dr = {config.cfl * state.dr}")
    n = config.n
    p, q = float(config.exps.p), float(config.exps.q)
    nl = config.nonlinear
    a_u_damp = config.u_damping
    b0 = float(config.damping.coefficient(state.t))
    b1 = float(config.damping.coefficient(state.t + dt))
    r_active = config.profile.R + state.t + dt + config.margin_cells * state.dr
    u, du, v, dv = _extend(state, r_active)

    with np.errstate(over="ignore", invalid="ignore"):
        src_u = _abs_pow(dv, p) if nl else 0.0
        src_v = _abs_pow(du, q) if nl else 0.0
        acc_u = radial_laplacian(u, state.dr, n) - a_u_damp * du + src_u
        acc_v = radial_laplacian(v, state.dr, n) - b0 * dv + src_v
        u1 = u + dt * du + 0.5 * dt * dt * acc_u
        v1 = v + dt * dv + 0.5 * dt * dt * acc_v
        # support is tracked exactly: nothing lives beyond R + t + margin
        outside = state.dr * np.arange(u.size) > r_active + 1e-9 * state.dr
        outside[-1] = True
        u1[outside] = 0.0
        v1[outside] = 0.0
        h = 0.5 * dt
        rhs_u = du + h * (acc_u + radial_laplacian(u1, state.dr, n))
        rhs_v = dv + h * (acc_v + radial_laplacian(v1, state.dr, n))
        den_u = 1.0 + h * a_u_damp
        den_v = 1.0 + h * b1
        dv1 = dv + dt * acc_v
        # du1 depends on dv1 only through the source, so convergence is tracked on dv1
        scale = 1.0 + state.peak
        for _ in range(_FIXED_POINT_ITERS):
            if nl:
                du1 = (rhs_u + h * _abs_pow(dv1, p)) / den_u
                dv_new = (rhs_v + h * _abs_pow(du1, q)) / den_v
            else:
                du1 = rhs_u / den_u
                dv_new = rhs_v / den_v
            change = float(np.max(np.abs(dv_new - dv1)))
            dv1 = dv_new
            if not math.isfinite(change):
                raise NumericalBlowup(f"non-finite velocities at t={state.t + dt}")
            if change <= 1e-13 * scale or not nl:
                break
        else:
            raise NumericalBlowup(f"pointwise velocity solve diverged at t={state.t + dt}")
    for a in (du1, dv1):
        a[outside] = 0.0
    if not (math.isfinite(float(np.sum(u1))) and math.isfinite(float(np.sum(v1)))
            and math.isfinite(float(np.sum(du1)))):
        raise NumericalBlowup(f"non-finite fields at t={state.t + dt}")
    return RadialState(t=state.t + dt, dr=state.dr, u=u1, du=du1, v=v1, dv=dv1,
                       r_active=r_active)


def _ode_rate(exps):
    """Blow-up rate ``a`` of ``|u_t| ~ (T - t)^-a`` for ``x' = y^p, y' = x^q``."""
    p, q = float(exps.p), float(exps.q)
    return (p + 1.0) / (p * q - 1.0)


def extrapolate_blowup_time(times, peaks, rate, window=12):
    """Fit ``peak^(-1/rate) ~ kappa (T* - t)`` on the last ``window`` samples, return ``T*``.

    With ``rate = 1`` this is the reciprocal fit ``1/peak``.
    """
    t = np.asarray(times, dtype=float)[-window:]
    y = np.asarray(peaks, dtype=float)[-window:] ** (-1.0 / rate)
    if t.size < 3:
        return float(t[-1])
    slope, intercept = np.polyfit(t, y, 1)
    if slope >= 0:
        return float(t[-1])
    return max(float(-intercept / slope), float(t[-1]))


def run(config, quad=DEFAULT_QUAD, keep_trajectory=True, with_trace=True):
    """Integrate until blow-up is detected, the step floor is hit, or ``t_max``.

    Returns ``(report, trajectory, trace)``: the :class:`BlowupReport`, the list
    of snapshots taken every ``config.snapshot_every`` (empty when
    ``keep_trajectory`` is false) and the functional trace sampled at every
    accepted step (``None`` when ``with_trace`` is false).
    """
    state = init_state(config)
    builder = None
    if with_trace:
        from .functionals import TraceBuilder, build_kernel
        builder = TraceBuilder(build_kernel(config, quad), config)
        builder.add(state)
    trajectory = [state] if keep_trajectory else []

    peak0 = state.peak
    limit = config.blowup_threshold * peak0
    dt = config.dt0
    every = config.snapshot_every
    next_snap = every
    snap_index = 1
    times, peaks_u, peaks_v = [0.0], [state.peak_du], [state.peak_dv]
    steps = rejected = 0
    status = "CompletedToTmax"
    t_est = None

    while state.t < config.t_max - 1e-12:
        target = min(next_snap, config.t_max)
        dt_try = min(dt, target - state.t)
        hits = dt_try >= target - state.t - 1e-12
        try:
            new = step(state, config, dt_try)
        except NumericalBlowup:
            rejected += 1
            dt = 0.5 * dt
            if dt < config.dt_floor:
                status = "StepFloorHit"
                break
            continue
        if hits:
            new = replace(new, t=target)
        grew = state.peak > 0 and new.peak > _GROWTH_LIMIT * state.peak
        state = new
        steps += 1
        times.append(state.t)
        peaks_u.append(state.peak_du)
        peaks_v.append(state.peak_dv)
        on_cadence = hits and target == next_snap
        if builder is not None:
            builder.add(state, snapshot=on_cadence)
        if on_cadence:
            if keep_trajectory:
                trajectory.append(state)
            snap_index += 1
            next_snap = snap_index * every
        if peak0 > 0 and state.peak > limit:
            status = "BlowupDetected"
            t_est = extrapolate_blowup_time(times, peaks_u, _ode_rate(config.exps))
            break
        if grew:
            dt = 0.5 * dt
            if dt < config.dt_floor:
                status = "StepFloorHit"
                break

    if keep_trajectory and trajectory[-1] is not state:
        trajectory.append(state)
    report = BlowupReport(status=status, t_final=state.t, t_blowup_estimate=t_est,
                          peak_du=max(peaks_u), peak_dv=max(peaks_v), steps=steps,
                          rejected=rejected, dt_final=dt,
                          history=(tuple(times), tuple(peaks_u), tuple(peaks_v)))
    logger.info("run finished: %s at t=%.6g (estimate %s)", status, state.t, t_est)
    trace = builder.finish() if builder is not None else None
    return report, trajectory, trace


def support_leak(state, config, cells=2):
    """Largest field magnitude beyond ``R + t + cells*dr`` relative to the field maximum."""
    edge = config.profile.R + state.t + cells * state.dr
    outside = state.r > edge
    ratios = []
    for a in (state.u, state.du, state.v, state.dv):
        m = np.max(np.abs(a))
        if m > 0 and np.any(outside):
            ratios.append(float(np.max(np.abs(a[outside])) / m))
    return max(ratios, default=0.0)


def radial_integral(values, dr, n):
    """``int_{R^n} f(|x|) dx`` by the trapezoid rule on the uniform radial grid."""
    r = dr * np.arange(values.size)
    w = np.full(values.size, dr)
    w[0] = w[-1] = 0.5 * dr
    return sphere_area(n) * float(np.sum(values * r ** (n - 1) * w))


def flat_params(config):
    """Flatten a :class:`ModelConfig` to the dotted keys used by config files."""
    return {
        "n": config.n, "p": config.exps.p, "q": config.exps.q,
        "damping.mode": config.damping.mode, "damping.mu": config.damping.mu,
        "damping.b0": config.damping.b0, "damping.kappa": config.damping.kappa,
        "epsilon": config.epsilon,
        **{f"profile.{k}": v for k, v in asdict(config.profile).items()},
        "grid.dr": config.dr, "grid.margin_cells": config.margin_cells,
        "time.cfl": config.cfl, "time.dt0": config.dt0, "time.t_max": config.t_max,
        "time.blowup_threshold": config.blowup_threshold, "time.dt_floor": config.dt_floor,
        "time.snapshot_every": config.snapshot_every,
        "model.nonlinear": config.nonlinear, "model.u_damping": config.u_damping,
    }


class BlowupSimulator(BaseEstimator):
    """Estimator-style wrapper around :func:`run`.

    Hyperparameters mirror the flat configuration keys, so ``get_params`` /
    ``set_params`` and ``sklearn.base.clone`` work as usual.  ``fit`` performs
    the integration and stores ``report_``, ``trajectory_``, ``trace_`` and
    ``blowup_time_``.

    Examples
    --------
    >>> sim = BlowupSimulator(epsilon=0.5, t_max=2.0).fit()   # doctest: +SKIP
    >>> sim.report_.status                                     # doctest: +SKIP
    """

    def __init__(self, n=1, p=2, q=2, damping_mode="None", mu=0.0, b0=0.0, kappa=2.0,
                 epsilon=0.5, R=1.0, u0_amp=0.5, u1_amp=1.0, v0_amp=1.0, v1_amp=1.0,
                 dr=1.0 / 32.0, cfl=0.5, t_max=100.0, blowup_threshold=1e8,
                 dt_floor=1e-9, snapshot_every=None, keep_trajectory=False,
                 with_trace=True):
        self.n = n
        self.p = p
        self.q = q
        self.damping_mode = damping_mode
        self.mu = mu
        self.b0 = b0
        self.kappa = kappa
        self.epsilon = epsilon
        self.R = R
        self.u0_amp = u0_amp
        self.u1_amp = u1_amp
        self.v0_amp = v0_amp
        self.v1_amp = v1_amp
        self.dr = dr
        self.cfl = cfl
        self.t_max = t_max
        self.blowup_threshold = blowup_threshold
        self.dt_floor = dt_floor
        self.snapshot_every = snapshot_every
        self.keep_trajectory = keep_trajectory
        self.with_trace = with_trace

    def make_config(self):
        return ModelConfig(
            n=self.n, exps=ExponentPair(self.p, self.q),
            damping=DampingSpec(self.damping_mode, mu=self.mu, b0=self.b0, kappa=self.kappa),
            epsilon=self.epsilon,
            profile=DataProfile(self.R, self.u0_amp, self.u1_amp, self.v0_amp, self.v1_amp),
            dr=self.dr, cfl=self.cfl, t_max=self.t_max,
            blowup_threshold=self.blowup_threshold, dt_floor=self.dt_floor,
            snapshot_every=self.snapshot_every)

    def fit(self, X=None, y=None):
        self.config_ = self.make_config()
        self.report_, self.trajectory_, self.trace_ = run(
            self.config_, keep_trajectory=self.keep_trajectory, with_trace=self.with_trace)
        self.blowup_time_ = self.report_.t_blowup_estimate
        return self
