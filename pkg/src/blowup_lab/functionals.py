"""Weighted space averages of solver output and the inequalities they satisfy.

With ``Psi1(t, x) = exp(-t) phi(x)`` and ``Psi = rho(t) phi(x)`` (scale-invariant
damping) or ``Psi = Psi1`` (otherwise)::

    U0 = int u Psi1      U1 = int u_t Psi1
    V0 = int v Psi       V1 = int v_t Psi

All integrals are radial trapezoid sums on the solver grid.  Values are
accumulated at every accepted solver step, so time integrals remain accurate
inside the blow-up window where the step shrinks.  Entries taken at the
uniform snapshot cadence are flagged for finite-difference checks.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import nnls
from sklearn.base import BaseEstimator

from ._validation import check_monotone_times, first_persistent_index
from .exceptions import UsageError
from .specialfn import (DEFAULT_QUAD, phi, rho, rho_log_derivative, sphere_area)

__all__ = [
    "WeightKernel", "FunctionalTrace", "TraceBuilder", "InequalityResult",
    "build_kernel", "trace", "check_u0_ode", "check_frames", "check_signs",
    "check_holder", "fit_constants", "factorization_roots_consistent",
    "FunctionalConstantsFitter",
]

_PERSISTENCE = 5


def _trapezoid_weights(size, dr, n):
    r = dr * np.arange(size)
    w = np.full(size, dr)
    w[0] = w[-1] = 0.5 * dr
    return sphere_area(n) * w * r ** (n - 1)


class WeightKernel:
    """Test functions for one model instance, with grid caches for the solver.

    ``psi1`` and ``psi2`` accept scalars or arrays and evaluate directly through
    the special functions.  ``grid_weights`` returns the scaled weight
    ``exp(r - t) * exp(-r) phi(r) = Psi1`` on the first ``size`` grid nodes
    together with the ratio ``Psi / Psi1`` (``exp(t) rho(t)`` or 1).
    """

    def __init__(self, n, damping, dr=None, r_max=None, t_max=None, quad=DEFAULT_QUAD):
        self.n = n
        self.damping = damping
        self.quad = quad
        self.dr = dr
        self._phi_scaled = None
        self._rho_spline = None
        self._rho_range = 0.0
        if dr is not None and r_max is not None:
            self._phi_scaled = phi(n, dr * np.arange(int(math.ceil(r_max / dr)) + 2), quad,
                                   scaled=True)
        self._t_hint = t_max

    @property
    def scale_invariant(self):
        return self.damping.mode == "ScaleInvariant"

    def psi1(self, t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        return np.exp(r - t) * phi(self.n, r, self.quad, scaled=True)

    def psi2(self, t, r):
        if not self.scale_invariant:
            raise UsageError("psi2 is defined for scale-invariant damping only")
        t = np.asarray(t, dtype=float)
        return rho(self.damping.mu, t, self.quad) * phi(self.n, np.asarray(r, dtype=float),
                                                         self.quad)

    def psi_v(self, t, r):
        """Weight used for the ``v`` functionals."""
        return self.psi2(t, r) if self.scale_invariant else self.psi1(t, r)

    def rho_scaled(self, t):
        """``exp(t) rho(t)`` from a cubic spline in ``log``, extended on demand."""
        if not self.scale_invariant:
            return 1.0
        if self._rho_spline is None or t > self._rho_range:
            upper = max(2.0 * t, self._t_hint or 0.0, 16.0) + 1.0
            grid = np.linspace(0.0, upper, int(upper * 32) + 1)
            vals = rho(self.damping.mu, grid, self.quad, scaled=True)
            self._rho_spline = CubicSpline(grid, np.log(vals))
            self._rho_range = upper
        return float(np.exp(self._rho_spline(t)))

    def phi_scaled_grid(self, size):
        if self._phi_scaled is None or self._phi_scaled.size < size:
            extra = max(size, 2 * (0 if self._phi_scaled is None else self._phi_scaled.size))
            self._phi_scaled = phi(self.n, self.dr * np.arange(extra), self.quad, scaled=True)
        return self._phi_scaled[:size]

    def grid_weights(self, t, size):
        r = self.dr * np.arange(size)
        return np.exp(r - t) * self.phi_scaled_grid(size), self.rho_scaled(t)

    def adjoint_residual(self, t_grid, r_grid, h=1e-3):
        """Relative residual of ``Psi_tt - Lap Psi - (b Psi)_t`` for ``Psi = psi2``.

        Derivatives are centered differences of step ``h``; the radial Laplacian
        uses the even extension at the origin.
        """
        if not self.scale_invariant:
            raise UsageError("adjoint residual is defined for scale-invariant damping only")
        T, Rg = np.meshgrid(np.asarray(t_grid, float), np.asarray(r_grid, float), indexing="ij")
        T = np.maximum(T, h)
        b = self.damping.coefficient

        def f(t, r):
            return self.psi2(t.ravel(), np.abs(r).ravel()).reshape(t.shape)

        c = f(T, Rg)
        tt = (f(T + h, Rg) - 2 * c + f(T - h, Rg)) / h ** 2
        rr = (f(T, Rg + h) - 2 * c + f(T, Rg - h)) / h ** 2
        r1 = (f(T, Rg + h) - f(T, Rg - h)) / (2 * h)
        safe_r = np.where(Rg > 0, Rg, 1.0)
        lap = np.where(Rg > 0, rr + (self.n - 1) * r1 / safe_r, self.n * rr)
        damp = (b(T + h) * f(T + h, Rg) - b(T - h) * f(T - h, Rg)) / (2 * h)
        scale = np.abs(tt) + np.abs(lap) + np.abs(damp)
        return float(np.max(np.abs(tt - lap - damp) / scale))


def build_kernel(config, quad=DEFAULT_QUAD):
    r_max = config.profile.R + config.t_max + (config.margin_cells + 4) * config.dr
    return WeightKernel(config.n, config.damping, dr=config.dr, r_max=r_max,
                        t_max=config.t_max, quad=quad)


@dataclass
class FunctionalTrace:
    """Functionals sampled at every accepted step; ``snapshot`` marks the uniform cadence.

    ``source_u = int |v_t|^p Psi1``, ``source_v = int |u_t|^q Psi1``,
    ``source_v_weighted = int |u_t|^q Psi`` and
    ``holder_factor = int Psi^(p') Psi1^(-p'/p)``; ``tol`` is the per-sample
    quadrature error budget from comparing grid spacings ``dr`` and ``2 dr``.
    """

    times: np.ndarray
    U0: np.ndarray
    U1: np.ndarray
    V0: np.ndarray
    V1: np.ndarray
    source_u: np.ndarray
    source_v: np.ndarray
    source_v_weighted: np.ndarray
    holder_factor: np.ndarray
    tol: np.ndarray
    snapshot: np.ndarray
    data_weights: dict = field(default_factory=dict)
    epsilon: float = 0.0
    n: int = 1
    p: float = 2.0
    q: float = 2.0
    mode: str = "None"
    mu: float = 0.0
    u_damping: float = 1.0
    nonlinear: bool = True

    def __len__(self):
        return len(self.times)

    def snapshots(self):
        """Sub-trace at the uniform snapshot cadence (arrays only)."""
        idx = np.flatnonzero(self.snapshot)
        return {k: getattr(self, k)[idx] for k in
                ("times", "U0", "U1", "V0", "V1", "source_u", "source_v")}


def _data_weights(state, kernel, epsilon):
    """``I_mu`` (scale-invariant only) and ``J`` from the unscaled initial data."""
    if epsilon <= 0:
        return {"I_mu": 0.0 if kernel.scale_invariant else None, "J": 0.0}
    c = _trapezoid_weights(state.u.size, state.dr, kernel.n)
    ph = phi(kernel.n, state.r, kernel.quad)
    v0 = state.v / epsilon
    v1 = state.dv / epsilon
    J = float(np.sum((v0 + v1) * ph * c))
    I_mu = None
    if kernel.scale_invariant:
        mu = kernel.damping.mu
        rho0 = float(rho(mu, 0.0, kernel.quad))
        shift = mu - float(rho_log_derivative(mu, 0.0, kernel.quad))
        I_mu = rho0 * float(np.sum((v1 + shift * v0) * ph * c))
    return {"I_mu": I_mu, "J": J}


class TraceBuilder:
    """Accumulates :class:`FunctionalTrace` samples one solver state at a time."""

    def __init__(self, kernel, config):
        self.kernel = kernel
        self.config = config
        self.p = float(config.exps.p)
        self.q = float(config.exps.q)
        self.rows = []
        self.flags = []
        self.data_weights = None

    @property
    def last_time(self):
        return self.rows[-1][0] if self.rows else -math.inf

    def add(self, state, snapshot=True):
        k = self.kernel
        if k.dr is None:
            k.dr = state.dr
        if self.data_weights is None:
            self.data_weights = _data_weights(state, k, float(self.config.epsilon))
        size = state.u.size
        w, ratio = k.grid_weights(state.t, size)
        c = _trapezoid_weights(size, state.dr, k.n)
        wc = w * c
        stack = np.vstack([state.u, state.du, state.v, state.dv,
                           np.abs(state.dv) ** self.p, np.abs(state.du) ** self.q])
        U0, U1, V0, V1, Fp, Fq = stack @ wc
        # same sums on every other node give the quadrature error budget
        c2 = _trapezoid_weights((size + 1) // 2, 2 * state.dr, k.n)
        coarse = stack[:4, ::2] @ (w[::2] * c2)
        err = np.abs(np.array([U0, U1, V0, V1]) - coarse)
        err[2:] *= ratio
        pprime = self.p / (self.p - 1.0)
        holder = ratio ** pprime * float(np.sum(wc))
        scale = max(abs(U0), abs(U1), abs(ratio * V0), abs(ratio * V1))
        tol = float(np.max(err)) + 1e-12 * scale
        self.rows.append((state.t, U0, U1, ratio * V0, ratio * V1, Fp, Fq, ratio * Fq,
                          holder, tol))
        self.flags.append(bool(snapshot))

    def finish(self):
        if not self.rows:
            raise UsageError("no samples were recorded")
        a = np.array(self.rows, dtype=float).T
        cfg = self.config
        return FunctionalTrace(
            times=a[0], U0=a[1], U1=a[2], V0=a[3], V1=a[4], source_u=a[5], source_v=a[6],
            source_v_weighted=a[7], holder_factor=a[8], tol=a[9],
            snapshot=np.array(self.flags, dtype=bool), data_weights=self.data_weights,
            epsilon=float(cfg.epsilon), n=cfg.n, p=self.p, q=self.q,
            mode=cfg.damping.mode, mu=float(cfg.damping.mu),
            u_damping=float(cfg.u_damping), nonlinear=bool(cfg.nonlinear))


def trace(trajectory, kernel, config):
    """Functionals of a stored trajectory; every state counts as a snapshot."""
    if len(trajectory) == 0:
        raise UsageError("trajectory is empty")
    builder = TraceBuilder(kernel, config)
    for state in trajectory:
        builder.add(state)
    return builder.finish()


@dataclass(frozen=True)
class InequalityResult:
    """One checked inequality; ``worst_margin`` is ``min (lhs - rhs) / scale``."""

    name: str
    ref: str
    worst_margin: float
    verdict: str
    constant: float = None
    detail: str = ""


def _verdict(ok):
    return "PASS" if ok else "FAIL"


def _relative_margin(lhs, rhs, tol):
    """Worst ``(lhs - rhs + tol) / scale``; nonnegative means the inequality holds."""
    lhs = np.asarray(lhs, float)
    rhs = np.asarray(rhs, float)
    if lhs.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    return float(np.min((lhs - rhs + tol) / scale))


def check_u0_ode(tr):
    """Residual of ``U0'' + (2+a) U0' + a U0 = int |v_t|^p Psi1`` at the snapshot cadence.

    ``a`` is the damping coefficient of the first equation (1 by default, which
    gives ``U0'' + 3 U0' + U0``); the forcing is zero for linear runs.  Centered
    differences on the uniform snapshot samples; the relative residual is
    ``max |res| / max(|U0|, |forcing|)`` over interior points.
    """
    snap = tr.snapshots()
    t, U0 = snap["times"], snap["U0"]
    F = snap["source_u"] if tr.nonlinear else np.zeros_like(U0)
    if t.size < 5:
        raise UsageError(f"need at least 5 snapshot samples, got {t.size}")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * dt[0]:
        raise UsageError("snapshot cadence is not uniform")
    h = dt[0]
    a = tr.u_damping
    d1 = (U0[2:] - U0[:-2]) / (2 * h)
    d2 = (U0[2:] - 2 * U0[1:-1] + U0[:-2]) / h ** 2
    res = d2 + (2 + a) * d1 + a * U0[1:-1] - F[1:-1]
    scale = max(float(np.max(np.abs(U0))), float(np.max(np.abs(F))))
    max_abs = float(np.max(np.abs(res)))
    rel = 0.0 if scale == 0 else max_abs / scale
    return {"relative": rel, "max_abs": max_abs, "scale": scale, "h": h,
            "times": t[1:-1], "residual": res, "points": int(t.size)}


def _exp_memory_integral(t, f, rate=2.0):
    """``int_0^t exp(rate (s - t)) f(s) ds`` by the trapezoid rule, overflow-free."""
    out = np.zeros_like(f)
    for k in range(1, t.size):
        h = t[k] - t[k - 1]
        decay = math.exp(-rate * h)
        out[k] = decay * out[k - 1] + 0.5 * h * (decay * f[k - 1] + f[k])
    return out


def _cumulative(t, f):
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * np.diff(t) * (f[1:] + f[:-1]))
    return out


def _fit_min_ratio(lhs, rhs, mask):
    sel = mask & (rhs > 0)
    if not np.any(sel):
        return None
    return float(np.min(lhs[sel] / rhs[sel]))


def frame_weights(tr, scattering):
    """Power weights ``(1+s)^a`` of the two frame integrands."""
    n, p, q = tr.n, tr.p, tr.q
    mu = 0.0 if scattering else tr.mu
    s1 = 1.0 + tr.times
    wu = s1 ** (-(n - 1) * (p - 1) / 2.0 - mu * p / 2.0)
    wv = s1 ** (-(n - 1) * (q - 1) / 2.0 + mu / 2.0)
    return wu, wv


def check_frames(tr, persistence=_PERSISTENCE):
    """Check the precursor bound and both iteration frames on a trace.

    Returns ``(results, info)`` where ``results`` is a list of
    :class:`InequalityResult` and ``info`` holds the fitted constants,
    the scan time ``T6_hat`` and the evaluated integrals.
    """
    t = check_monotone_times(tr.times, exc=UsageError)
    U1, V1 = tr.U1, tr.V1
    tol = tr.tol
    results = []
    info = {}

    pre = _exp_memory_integral(t, tr.source_u)
    m = _relative_margin(U1, pre, tol)
    results.append(InequalityResult("u1_precursor", "U1 >= memory integral of v_t source",
                                    m, _verdict(m >= 0)))
    info["precursor_rhs"] = pre

    scattering = tr.mode != "ScaleInvariant"
    empty = not (np.any(U1) or np.any(V1))
    if scattering or empty:
        k6 = 0
    else:
        k6 = first_persistent_index((U1 > 0) & (V1 > 0), persistence)
    if k6 is None:
        results.append(InequalityResult("frame_u", "frame for U1", -math.inf, "FAIL",
                                        detail="U1, V1 never persistently positive"))
        results.append(InequalityResult("frame_v", "frame for V1", -math.inf, "FAIL",
                                        detail="U1, V1 never persistently positive"))
        return results, info
    T6 = float(t[k6])
    info["T6_hat"] = T6
    wu, wv = frame_weights(tr, scattering)
    after = np.arange(t.size) >= k6
    ts = t[k6:]
    A = np.zeros_like(t)
    B = np.zeros_like(t)
    A[k6:] = _exp_memory_integral(ts, wu[k6:] * np.abs(V1[k6:]) ** tr.p)
    B[k6:] = _cumulative(ts, wv[k6:] * np.abs(U1[k6:]) ** tr.q)
    info["frame_u_integral"] = A
    info["frame_v_integral"] = B
    zero_run = tr.epsilon == 0 or not np.any(A > 0)
    for name, lhs, rhs, label in (("frame_u", U1, A, "U1 >= C * weighted memory of V1^p"),
                                  ("frame_v", V1, B, "V1 >= K * weighted integral of U1^q")):
        if zero_run and not np.any(rhs > 0):
            m = _relative_margin(lhs[after], rhs[after], tol[after])
            results.append(InequalityResult(name, label, m, _verdict(m >= 0), 0.0,
                                            "both sides vanish"))
            continue
        const = _fit_min_ratio(lhs, rhs, after)
        ok = const is not None and const > 0 and np.isfinite(const)
        m = _relative_margin(lhs[after], (const or 0.0) * rhs[after], tol[after])
        results.append(InequalityResult(name, label, m, _verdict(ok and m >= 0), const,
                                        f"T6_hat={T6:.6g}"))
    info["C_hat"] = results[-2].constant
    info["K_hat"] = results[-1].constant

    if scattering and tr.mode == "Scattering":
        consts = fit_constants(tr)
        acc = _cumulative(t, tr.source_v)
        info["accumulated_source"] = acc
        if consts["ok"]:
            K2, K3 = consts["K2"], consts["K3"]
            rhs = K2 * tr.epsilon + K3 * acc
            m = _relative_margin(V1, rhs, tol)
            results.append(InequalityResult(
                "v1_lower_bound", "V1 >= K2 eps + K3 * accumulated u_t source", m,
                _verdict(K2 > 0 and K3 > 0 and m >= 0), K3, f"K2={K2:.6g}"))
            m0 = _relative_margin(V1, K2 * tr.epsilon * np.ones_like(V1), tol)
            results.append(InequalityResult("v1_data_bound", "V1 >= K2 eps from t = 0", m0,
                                            _verdict(m0 >= 0), K2))
        else:
            results.append(InequalityResult("v1_lower_bound",
                                            "V1 >= K2 eps + K3 * accumulated u_t source",
                                            -math.inf, "FAIL", detail=consts["reason"]))
        info["constants"] = consts
    return results, info


def check_signs(tr):
    """``U0, V0, V1 >= -tol`` at every sample (``V1`` for scale-invariant runs only)."""
    out = []
    names = [("U0", "U0 nonnegative"), ("V0", "V0 nonnegative")]
    if tr.mode == "ScaleInvariant":
        names.append(("V1", "V1 nonnegative"))
    for key, label in names:
        vals = getattr(tr, key)
        scale = max(float(np.max(np.abs(vals))), 1e-300)
        m = float(np.min((vals + tr.tol) / scale))
        out.append(InequalityResult(f"{key}_sign", label, m, _verdict(m >= 0)))
    return out


def check_holder(tr):
    """``V1^p <= (int |v_t|^p Psi1) * (int Psi^p' Psi1^(-p'/p))^(p/p')`` at each sample."""
    p = tr.p
    lhs = np.abs(tr.V1) ** p
    rhs = tr.source_u * tr.holder_factor ** (p - 1.0)
    scale = np.maximum(np.maximum(lhs, rhs), 1e-300)
    m = float(np.min((rhs - lhs) / scale + 1e-12))
    return InequalityResult("holder", "V1^p bounded by source times weight norm", m,
                            _verdict(m >= 0))


def factorization_roots_consistent():
    """Roots of ``a^2 - 3a + 1`` have product 1 and sum 3 (symbolic check)."""
    import sympy as sp
    a = sp.symbols("a")
    r1, r2 = sp.solve(a ** 2 - 3 * a + 1, a)
    return sp.simplify(r1 * r2 - 1) == 0 and sp.simplify(r1 + r2 - 3) == 0


def fit_constants(tr, plateau_fraction=0.1, persistence=_PERSISTENCE):
    """Fit ``K0 .. K3`` and ``T3_hat``; never raises on bad data.

    Returns a dict with ``ok`` and ``reason``; on failure the constants are
    ``None``.  ``K2, K3`` come from nonnegative least squares of ``V1`` on
    ``[eps, accumulated source]`` scaled down to a valid lower bound.
    """
    empty = {"ok": False, "K0": None, "K1": None, "K2": None, "K3": None, "T3_hat": None}
    eps = tr.epsilon
    if eps <= 0 or not (np.any(tr.V0 != 0) or np.any(tr.V1 != 0)):
        return {**empty, "reason": "empty signal: zero data or zero run"}
    bad = (tr.V0 < -tr.tol) | (tr.V1 < -tr.tol)
    if np.any(bad):
        first = float(tr.times[np.argmax(bad)])
        return {**empty, "reason": f"hypothesis violation: V0 or V1 negative at t={first:.6g}"}
    K0 = float(np.min(tr.V0) / eps)
    ratio = tr.V1 / eps
    k3 = first_persistent_index(ratio > plateau_fraction * ratio[0], persistence)
    T3 = None if k3 is None else float(tr.times[k3])
    K1 = None if k3 is None else float(np.min(ratio[k3:]))
    out = {"ok": True, "reason": "", "K0": K0, "K1": K1, "T3_hat": T3, "K2": None, "K3": None}
    acc = _cumulative(tr.times, tr.source_v)
    if np.min(tr.V1) <= 0:
        out["reason"] = "V1 not strictly positive; K2, K3 not fitted"
        return out
    A = np.column_stack([np.full_like(acc, eps), acc])
    (K2, K3), _ = nnls(A, tr.V1)
    if K2 > 0 and K3 > 0:
        shrink = min(1.0, float(np.min(tr.V1 / (A @ np.array([K2, K3])))))
        K2, K3 = K2 * shrink, K3 * shrink
    else:
        K2 = 0.5 * float(np.min(tr.V1)) / eps
        pos = acc > 0
        K3 = float(np.min((tr.V1[pos] - K2 * eps) / acc[pos])) if np.any(pos) else 0.0
    out["K2"], out["K3"] = float(K2), float(K3)
    return out


class FunctionalConstantsFitter(BaseEstimator):
    """Estimator wrapper for :func:`fit_constants`; ``fit`` takes a trace."""

    def __init__(self, plateau_fraction=0.1, persistence=_PERSISTENCE):
        self.plateau_fraction = plateau_fraction
        self.persistence = persistence

    def fit(self, X, y=None):
        if not isinstance(X, FunctionalTrace):
            raise UsageError("fit expects a FunctionalTrace")
        self.report_ = fit_constants(X, self.plateau_fraction, self.persistence)
        for key in ("K0", "K1", "K2", "K3"):
            setattr(self, key + "_", self.report_[key])
        self.T3_hat_ = self.report_["T3_hat"]
        return self
