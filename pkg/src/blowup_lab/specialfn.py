"""Special functions behind the weighted functionals.

Everything here is evaluated by quadrature from integral representations:

* ``K_nu(t) = int_0^inf exp(-t cosh y) cosh(nu y) dy`` (modified Bessel
  function of the second kind),
* ``phi``, the radial profile of the positive solution of ``Delta phi = phi``
  obtained by averaging ``exp(x . omega)`` over the unit sphere,
* ``rho(t) = (1+t)^((mu+1)/2) K_l(1+t)`` with ``l = |mu-1|/2``, the time factor
  of the separated solution of the adjoint scale-invariant equation,
* ``m(t) = exp(-int_t^inf b)``, the integrating factor for an integrable
  damping coefficient.

All public functions accept scalars or arrays for the time/radius argument and
return the same shape.  Large arguments are handled through exponentially
scaled variants (``scaled=True``) so callers can form products like
``exp(-t) * phi(r)`` without overflow.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import gamma as _gamma

from ._validation import (as_float_array, check_int, check_scalar, unwrap,
                          first_persistent_index)
from .exceptions import ConvergenceError, DomainError, UsageError

__all__ = [
    "QuadratureSpec", "DampingSpec", "DEFAULT_QUAD",
    "bessel_k", "bessel_k_with_error", "bessel_k_derivative",
    "sphere_area", "phi", "rho", "rho_log_derivative", "m_weight",
    "phi_ball_integral", "scan_damping_window", "scan_rho_sandwich",
    "fit_ball_constant", "rho_ode_residual", "phi_eigen_residual",
]

_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)
# Tail target for the truncated cosh-integral, relative to the integral value.
_TAIL_RTOL = 1e-18


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre settings.

    ``node_count`` is the starting number of nodes (rounded up to whole
    16-point panels); the panel count is doubled until two consecutive
    estimates agree to ``rel_tol``, at most ``max_refinements`` times.
    ``truncation_y_max`` caps the automatically chosen cut of the
    cosh-integral variable.
    """

    node_count: int = 32
    truncation_y_max: float = 60.0
    rel_tol: float = 1e-12
    max_refinements: int = 12

    def __post_init__(self):
        check_int(self.node_count, "node_count", lower=16)
        check_scalar(self.truncation_y_max, "truncation_y_max", lower=0,
                     strict_lower=True)
        check_scalar(self.rel_tol, "rel_tol", lower=0, upper=1e-4,
                     strict_lower=True)
        check_int(self.max_refinements, "max_refinements", lower=1)

    @property
    def panels(self):
        return -(-self.node_count // _GL_ORDER)


DEFAULT_QUAD = QuadratureSpec()

_MODES = ("ScaleInvariant", "Scattering", "Classical", "None")


@dataclass(frozen=True)
class DampingSpec:
    """Damping coefficient ``b(t)`` of the second equation.

    ``ScaleInvariant``: ``mu / (1+t)``; ``Scattering``: ``b0 (1+t)^-kappa``
    with ``kappa > 1``; ``Classical``: ``1``; ``None``: ``0``.
    """

    mode: str = "None"
    mu: float = 0.0
    b0: float = 0.0
    kappa: float = 2.0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise DomainError(f"damping mode must be one of {_MODES}, got {self.mode!r}")
        if self.mode == "ScaleInvariant":
            check_scalar(self.mu, "mu", lower=0, strict_lower=True)
        if self.mode == "Scattering":
            check_scalar(self.b0, "b0", lower=0)
            check_scalar(self.kappa, "kappa", lower=1, strict_lower=True)

    def coefficient(self, t):
        """Evaluate ``b(t)``."""
        if self.mode == "ScaleInvariant":
            return self.mu / (1.0 + t)
        if self.mode == "Scattering":
            return self.b0 * (1.0 + t) ** (-self.kappa)
        if self.mode == "Classical":
            return 1.0 + 0.0 * t
        return 0.0 * t

    def tail_integral(self, t):
        """``int_t^inf b(s) ds`` for the scattering family."""
        if self.mode != "Scattering":
            raise UsageError("tail integral is only finite for Scattering damping")
        return self.b0 * (1.0 + t) ** (1.0 - self.kappa) / (self.kappa - 1.0)

    @property
    def l1_norm(self):
        return self.tail_integral(0.0)


def _composite_gauss(integrand, upper, panels):
    """Integrate ``integrand(y)`` over ``[0, upper_i]`` row by row.

    ``integrand`` receives a ``(m, nodes)`` array and returns the same shape.
    """
    k = np.arange(panels)
    s = (k[:, None] + 0.5 * (_GL_X[None, :] + 1.0)).ravel()
    w = np.tile(0.5 * _GL_W, panels)
    h = upper / panels
    y = h[:, None] * s[None, :]
    return (integrand(y) * w).sum(axis=1) * h


def _refine(integrand, upper, quad):
    panels = quad.panels
    prev = _composite_gauss(integrand, upper, panels)
    err = np.full_like(prev, np.inf)
    for _ in range(quad.max_refinements):
        panels *= 2
        cur = _composite_gauss(integrand, upper, panels)
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.abs(cur - prev) / np.abs(cur)
        err = np.where(cur == prev, 0.0, err)
        if np.all(err <= quad.rel_tol):
            return cur, err
        prev = cur
    raise ConvergenceError(
        f"quadrature did not reach rel_tol={quad.rel_tol} "
        f"(worst estimate {np.max(err):.3e})", estimate=cur, error=err)


def _log_scaled_integrand(nu, t, y):
    # log of exp(-t (cosh y - 1)) cosh(nu y), dropping log(1 + e^{-2 nu y}) - log 2 <= 0
    return -t * (np.cosh(y) - 1.0) + nu * y


def _bessel_cut(nu, t, cap):
    """Cut ``y_max`` beyond which the scaled integrand is negligible."""
    y_peak = np.arcsinh(nu / t)
    log_peak = _log_scaled_integrand(nu, t, y_peak)
    target = log_peak + math.log(_TAIL_RTOL) - 0.5 * np.log1p(t * np.cosh(y_peak)) - 5.0
    lo = y_peak.copy()
    hi = y_peak + 1.0
    while True:
        above = _log_scaled_integrand(nu, t, hi) > target
        if not np.any(above):
            break
        hi = np.where(above, 2.0 * hi, hi)
        if np.any(hi > 4 * cap):
            break
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        above = _log_scaled_integrand(nu, t, mid) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return hi


def bessel_k_with_error(order, t, quad=DEFAULT_QUAD, scaled=False):
    """Return ``(K_order(t), self-estimated relative error)``.

    With ``scaled=True`` the value is ``exp(t) K_order(t)``.
    """
    nu = float(check_scalar(order, "order", lower=0))
    tt, scalar = as_float_array(t, "t", positive=True)
    y_max = _bessel_cut(nu, tt, quad.truncation_y_max)
    if np.any(y_max > quad.truncation_y_max):
        raise ConvergenceError(
            f"truncation cut {np.max(y_max):.3g} exceeds truncation_y_max="
            f"{quad.truncation_y_max}", estimate=None)

    def integrand(y):
        return np.exp(-tt[:, None] * (np.cosh(y) - 1.0)) * np.cosh(nu * y)

    for _ in range(8):
        value, err = _refine(integrand, y_max, quad)
        tail = np.exp(-tt * (np.cosh(y_max) - 1.0)) * np.cosh(nu * y_max)
        short = tail >= _TAIL_RTOL * value
        if not np.any(short):
            break
        y_max = np.where(short, y_max + 1.0, y_max)
    else:
        raise ConvergenceError("could not certify the truncation tail", estimate=value)
    if not scaled:
        value = value * np.exp(-tt)
    return unwrap(value, scalar), unwrap(err, scalar)


def bessel_k(order, t, quad=DEFAULT_QUAD, scaled=False):
    """Modified Bessel function of the second kind, ``K_order(t)`` for ``t > 0``.

    Evaluated from ``int_0^inf exp(-t cosh y) cosh(order*y) dy`` truncated at
    a certified cut and integrated by composite Gauss-Legendre with panel
    doubling until ``quad.rel_tol``.

    Raises
    ------
    DomainError
        If ``t <= 0`` or ``order < 0``.
    ConvergenceError
        If the tolerance is not met; the last estimate is attached.
    """
    return bessel_k_with_error(order, t, quad, scaled)[0]


def bessel_k_derivative(order, t, quad=DEFAULT_QUAD):
    """``d/dt K_order(t) = -K_{order+1}(t) + (order/t) K_order(t)``."""
    nu = float(check_scalar(order, "order", lower=0))
    tt, scalar = as_float_array(t, "t", positive=True)
    value = -bessel_k(nu + 1.0, tt, quad) + nu / tt * bessel_k(nu, tt, quad)
    return unwrap(value, scalar)


def sphere_area(n):
    """Surface measure ``|S^{n-1}|`` of the unit sphere in ``R^n`` (``|S^0| = 2``)."""
    n = check_int(n, "n", lower=1)
    return 2.0 * math.pi ** (n / 2.0) / _gamma(n / 2.0)


def phi(n, r, quad=DEFAULT_QUAD, scaled=False):
    """Radial profile of ``phi(x) = int_{S^{n-1}} exp(x . omega) dsigma``.

    ``n = 1`` gives ``e^r + e^-r``.  For ``n >= 2`` the sphere average is
    reduced to ``|S^{n-2}| int_0^pi exp(r cos th) sin(th)^(n-2) dth``.
    ``scaled=True`` returns ``exp(-r) phi(r)``.
    """
    n = check_int(n, "n", lower=1)
    rr, scalar = as_float_array(r, "r", nonnegative=True)
    if n == 1:
        value = 1.0 + np.exp(-2.0 * rr)
    else:
        power = n - 2

        def integrand(th):
            return np.exp(rr[:, None] * (np.cos(th) - 1.0)) * np.sin(th) ** power

        value, _ = _refine(integrand, np.full(rr.shape, math.pi), quad)
        value = sphere_area(n - 1) * value
    if not scaled:
        value = value * np.exp(rr)
    return unwrap(value, scalar)


def rho(mu, t, quad=DEFAULT_QUAD, scaled=False):
    """``rho(t) = (1+t)^((mu+1)/2) K_l(1+t)`` with ``l = |mu-1|/2``.

    ``scaled=True`` returns ``exp(t) rho(t)``, which grows only polynomially.
    """
    mu = float(check_scalar(mu, "mu", lower=0, strict_lower=True))
    tt, scalar = as_float_array(t, "t", nonnegative=True)
    ell = abs(mu - 1.0) / 2.0
    x = 1.0 + tt
    k = bessel_k(ell, x, quad, scaled=True)
    value = x ** ((mu + 1.0) / 2.0) * k * math.exp(-1.0)
    if not scaled:
        value = value * np.exp(-tt)
    return unwrap(value, scalar)


def rho_log_derivative(mu, t, quad=DEFAULT_QUAD):
    """``rho'(t)/rho(t) = (mu+1+|mu-1|) / (2(1+t)) - K_{l+1}(1+t) / K_l(1+t)``."""
    mu = float(check_scalar(mu, "mu", lower=0, strict_lower=True))
    tt, scalar = as_float_array(t, "t", nonnegative=True)
    ell = abs(mu - 1.0) / 2.0
    x = 1.0 + tt
    ratio = bessel_k(ell + 1.0, x, quad, scaled=True) / bessel_k(ell, x, quad, scaled=True)
    value = (mu + 1.0 + abs(mu - 1.0)) / (2.0 * x) - ratio
    return unwrap(value, scalar)


def m_weight(damping, t):
    """``m(t) = exp(-int_t^inf b(s) ds)`` for the scattering damping family."""
    if not isinstance(damping, DampingSpec) or damping.mode != "Scattering":
        raise UsageError("m_weight requires a Scattering DampingSpec")
    tt, scalar = as_float_array(t, "t", nonnegative=True)
    return unwrap(np.exp(-damping.tail_integral(tt)), scalar)


def phi_ball_integral(n, r_power, R, t, quad=DEFAULT_QUAD, log=False):
    """``int_{|x| <= R+t} phi(x)^r_power dx`` by radial quadrature.

    With ``log=True`` the natural logarithm is returned, which stays finite
    for balls whose integral overflows a double.
    """
    n = check_int(n, "n", lower=1)
    r_power = float(check_scalar(r_power, "r_power", lower=1))
    check_scalar(R, "R", lower=0, strict_lower=True)
    tt, scalar = as_float_array(t, "t", nonnegative=True)
    out = np.empty_like(tt)
    for i, ti in enumerate(tt):
        a = R + ti

        def integrand(s, a=a):
            shape = s.shape
            flat = s.ravel()
            ps = np.asarray(phi(n, flat, quad, scaled=True))
            vals = np.exp(r_power * (flat - a)) * ps ** r_power * flat ** (n - 1)
            return vals.reshape(shape)

        val, _ = _refine(integrand, np.array([a]), quad)
        out[i] = math.log(sphere_area(n) * val[0]) + r_power * a
    if not log:
        out = np.exp(out)
    return unwrap(out, scalar)


def scan_damping_window(mu, t_grid, quad=DEFAULT_QUAD):
    """Locate the start of the window ``1 <= mu/(1+t) - 2 rho'/rho <= 3``.

    Returns ``(T2_hat, values)`` where ``T2_hat`` is the smallest grid point
    from which the inequality holds at every later grid point (``None`` if
    it fails at the last point) and ``values`` is the sampled expression.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    values = mu / (1.0 + t_grid) - 2.0 * np.asarray(rho_log_derivative(mu, t_grid, quad))
    k = first_persistent_index((values >= 1.0) & (values <= 3.0))
    return (None if k is None else float(t_grid[k])), values


def scan_rho_sandwich(mu, t_grid, C1=None, quad=DEFAULT_QUAD):
    """Two-sided exponential sandwich for ``rho(t)^2 (1+t)^-mu``.

    The normalized quantity ``q(t) = rho^2 (1+t)^-mu e^{2t}`` tends to
    ``pi / (2 e^2)``.  When ``C1`` is not supplied it defaults to twice the
    larger of that limit and its reciprocal.  Returns ``(T1_hat, C1, q)``
    where ``T1_hat`` is the first grid point from which
    ``1/C1 <= q <= C1`` holds onward.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if C1 is None:
        lim = math.pi / (2.0 * math.e ** 2)
        C1 = 2.0 * max(lim, 1.0 / lim)
    rs = np.asarray(rho(mu, t_grid, quad, scaled=True))
    q = rs ** 2 * (1.0 + t_grid) ** (-mu)
    k = first_persistent_index((q >= 1.0 / C1) & (q <= C1))
    return (None if k is None else float(t_grid[k])), float(C1), q


def fit_ball_constant(n, r_power, R, t_grid, quad=DEFAULT_QUAD):
    """Smallest ``C`` with ``int_{B_{R+t}} phi^r <= C e^{rt} (R+t)^{(n-1)(1-r/2)}`` on the grid.

    Returns ``(C, ratios)``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    log_int = np.asarray(phi_ball_integral(n, r_power, R, t_grid, quad, log=True))
    log_env = r_power * t_grid + (n - 1) * (1.0 - r_power / 2.0) * np.log(R + t_grid)
    ratios = np.exp(log_int - log_env)
    return float(np.max(ratios)), ratios


def _fd_derivatives(f, x, h):
    """First and second derivatives of ``f`` at ``x >= 0`` by second-order differences.

    Points with ``x < h`` use one-sided stencils so ``f`` is never evaluated
    at negative arguments.
    """
    x = np.asarray(x, dtype=float)
    fwd = x < h
    xc = np.where(fwd, h, x)
    c0, cp, cm = f(xc), f(xc + h), f(xc - h)
    d1 = (cp - cm) / (2 * h)
    d2 = (cp - 2 * c0 + cm) / h ** 2
    if np.any(fwd):
        xs = x[fwd]
        f0, f1, f2, f3 = f(xs), f(xs + h), f(xs + 2 * h), f(xs + 3 * h)
        d1[fwd] = (-3 * f0 + 4 * f1 - f2) / (2 * h)
        d2[fwd] = (2 * f0 - 5 * f1 + 4 * f2 - f3) / h ** 2
    return d1, d2


def rho_ode_residual(mu, t_grid, h=1e-3, quad=DEFAULT_QUAD):
    """Relative residual of ``rho'' - rho - (mu/(1+t) rho)'`` on ``t_grid``.

    Derivatives are finite differences of ``rho``; the residual is divided by
    ``|rho''| + |rho| + |(mu/(1+t) rho)'|`` pointwise.  Returns the array.
    """
    t = np.asarray(t_grid, dtype=float)

    def f(s):
        return np.asarray(rho(mu, s, quad))

    def g(s):
        return mu / (1.0 + s) * f(s)

    _, d2 = _fd_derivatives(f, t, h)
    dg, _ = _fd_derivatives(g, t, h)
    val = f(t)
    return np.abs(d2 - val - dg) / (np.abs(d2) + np.abs(val) + np.abs(dg))


def phi_eigen_residual(n, r_grid, h=1e-3, quad=DEFAULT_QUAD):
    """Relative residual of ``phi'' + (n-1)/r phi' - phi`` (``n phi'' - phi`` at ``r = 0``).

    ``phi`` is even, so the stencil at the origin reflects ``phi(-h) = phi(h)``.
    """
    r = np.asarray(r_grid, dtype=float)

    def f(s):
        return np.asarray(phi(n, np.abs(s), quad))

    c0, cp, cm = f(r), f(r + h), f(r - h)
    d1 = (cp - cm) / (2 * h)
    d2 = (cp - 2 * c0 + cm) / h ** 2
    safe = np.where(r > 0, r, 1.0)
    lap = np.where(r > 0, d2 + (n - 1) * d1 / safe, n * d2)
    return np.abs(lap - c0) / (np.abs(lap) + np.abs(c0))
