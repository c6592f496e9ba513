"""Blow-up classifier, slicing schedules, iteration constants and lifespan envelopes.

The iteration argument produces a sequence of lower bounds

    V_1(t) >= C_j eps^{(pq)^j} (1+t)^{-alpha_j} (t - L_j T0)^{beta_j}          (subcritical)
    V_1(t) >= D_j eps^{(pq)^j} (ln(t / (Lambda_j T0)))^{gamma_j}               (critical)

whose divergence as ``j -> inf`` gives an upper bound for the lifespan.  The
exponent sequences are kept exact (``fractions.Fraction``) whenever ``p``,
``q`` and the effective dimension are rational; the constants ``C_j``,
``D_j`` live in log space because ``(pq)^j`` overflows almost immediately.
"""

from dataclasses import dataclass, field
from fractions import Fraction
import math
import numbers

import numpy as np
from scipy.optimize import brentq

from ._validation import check_int, check_scalar
from .exceptions import DomainError, UsageError
from .specialfn import DampingSpec

# reference frame constants K1, C, K: rounded fits from the scattering
# reference run at dr = 1/32
DEFAULT_BASE = {"K1": 0.17, "C": 0.87, "K": 0.46}

__all__ = [
    "ExponentPair", "BlowupClassifier", "FrameSchedule", "IterationConstants",
    "LifespanEnvelope", "classify", "build_schedule", "closed_forms",
    "recursion_sequences", "double_sum_identity", "iteration_constants",
    "envelope", "lower_bound_envelope", "log_lower_bound",
    "divergence_exponent", "weak_divergence_exponent", "threshold_time",
    "critical_identity_holds", "frames_table",
]

CRITICAL_TOL = 1e-12


def _is_exact(x):
    return isinstance(x, (numbers.Rational, Fraction)) and not isinstance(x, bool)


def _as_number(x, name):
    if isinstance(x, str):
        try:
            return Fraction(x)
        except ValueError:
            raise DomainError(f"{name} is not a number: {x!r}") from None
    check_scalar(x, name)
    return Fraction(x) if isinstance(x, numbers.Integral) else x


@dataclass(frozen=True)
class ExponentPair:
    """Exponents ``p`` (source of the first equation) and ``q`` (second).

    Integers, ``Fraction`` values and strings such as ``"3/2"`` select the
    exact rational path; floats select the floating path.
    """

    p: object
    q: object

    def __post_init__(self):
        p = _as_number(self.p, "p")
        q = _as_number(self.q, "q")
        if not p > 1 or not q > 1:
            raise DomainError(f"exponents must satisfy p, q > 1, got p={p}, q={q}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def exact(self):
        return _is_exact(self.p) and _is_exact(self.q)

    @property
    def pq(self):
        return self.p * self.q


@dataclass(frozen=True)
class BlowupClassifier:
    n_eff: object
    theta: object
    regime: str
    lambda_value: object
    exps: ExponentPair

    def critical_exponent_residual(self):
        """``-(n_eff-1)(pq-1)/2 + 1``; zero exactly when the instance is critical."""
        pq = self.exps.pq
        return -(self.n_eff - 1) * (pq - 1) / 2 + 1


def classify(n, damping, exps, tol=CRITICAL_TOL):
    """Blow-up classifier ``Theta(n_eff, p, q) = 1/(pq-1) - (n_eff-1)/2``.

    ``n_eff = n + mu`` for scale-invariant damping and ``n`` otherwise.
    """
    n = check_int(n, "n", lower=1)
    if not isinstance(damping, DampingSpec):
        raise UsageError("damping must be a DampingSpec")
    if damping.mode == "ScaleInvariant":
        mu = damping.mu
        n_eff = n + (Fraction(mu) if _is_exact(mu) else mu)
    else:
        n_eff = Fraction(n)
    exact = exps.exact and _is_exact(n_eff)
    pq = exps.pq
    if exact:
        theta = 1 / (pq - 1) - (n_eff - 1) / Fraction(2)
        lam = max(exps.p + 1, exps.q + 1) / (pq - 1) - (n_eff - 1) / Fraction(2)
    else:
        pq = float(pq)
        theta = 1.0 / (pq - 1.0) - (float(n_eff) - 1.0) / 2.0
        lam = max(float(exps.p) + 1, float(exps.q) + 1) / (pq - 1.0) - (float(n_eff) - 1.0) / 2.0
    if abs(theta) <= tol:
        regime = "Critical"
    elif theta > 0:
        regime = "Subcritical"
    else:
        regime = "OutOfRange"
    return BlowupClassifier(n_eff=n_eff, theta=theta, regime=regime,
                            lambda_value=lam, exps=exps)


def critical_identity_holds():
    """Symbolically confirm that ``Theta = 0`` forces the critical exponent relation.

    Checks, for symbolic ``n, mu, p, q``, that on ``Theta(n+mu, p, q) = 0`` both
    ``-(n+mu-1)(pq-1)/2`` and the sum of the frame weights
    ``-(n-1)(p-1)q/2 - mu pq/2 - (n-1)(q-1)/2 + mu/2`` equal ``-1``.
    """
    import sympy as sp

    n, mu, p, q = sp.symbols("n mu p q", positive=True)
    n_eff = sp.solve(sp.Eq(1 / (p * q - 1) - (n + mu - 1) / 2, 0), n)[0]
    first = -(n_eff + mu - 1) * (p * q - 1) / 2
    weights = (-(n - 1) * (p - 1) * q / 2 - mu * p * q / 2
               - (n - 1) * (q - 1) / 2 + mu / 2).subs(n, n_eff)
    return sp.simplify(first + 1) == 0 and sp.simplify(weights + 1) == 0


@dataclass(frozen=True)
class FrameSchedule:
    T0: object
    pq: object
    ell: list
    L: list
    L_limit: float
    Lambda: list
    Lambda_limit: object


def build_schedule(T0, exps, j_max):
    """Slicing factors ``ell_j``, partial products ``L_j`` and critical ``Lambda_j``."""
    T0 = _as_number(T0, "T0")
    if not T0 > 0:
        raise DomainError(f"T0 must be > 0, got {T0}")
    j_max = check_int(j_max, "j_max", lower=1)
    pq = exps.pq
    exact = exps.exact and _is_exact(T0)
    one = Fraction(1) if exact else 1.0
    if not exact:
        pq, T0 = float(pq), float(T0)
    ell = [max(one / (2 * T0), one)]
    ell += [one + one / pq ** j for j in range(1, j_max + 1)]
    L = []
    acc = one
    for e in ell:
        acc = acc * e
        L.append(acc)
    # tail of the infinite product; terms decay geometrically
    log_tail = 0.0
    k = j_max + 1
    while True:
        term = math.log1p(float(pq) ** (-k))
        log_tail += term
        if term < 1e-18 or k > j_max + 10000:
            break
        k += 1
    L_limit = float(L[-1]) * math.exp(log_tail)
    Lambda = [one + (2 - one / 2 ** j) / T0 for j in range(j_max + 1)]
    return FrameSchedule(T0=T0, pq=pq, ell=ell, L=L, L_limit=L_limit,
                         Lambda=Lambda, Lambda_limit=one + 2 / T0)


def _exact_pair(n_eff, exps):
    if exps.exact and _is_exact(n_eff):
        return Fraction(n_eff), exps.pq, Fraction(1)
    return float(n_eff), float(exps.pq), 1.0


def closed_forms(n_eff, exps, j):
    """Closed forms ``(alpha_j, beta_j, gamma_j)``.

    ``alpha_j = (n_eff-1)/2 ((pq)^j - 1)``, ``beta_j = gamma_j = ((pq)^j - 1)/(pq - 1)``.
    """
    j = check_int(j, "j", lower=0)
    n_eff, pq, one = _exact_pair(n_eff, exps)
    power = pq ** j
    alpha = (n_eff - one) / 2 * (power - one)
    beta = (power - one) / (pq - one)
    return alpha, beta, beta


def recursion_sequences(n_eff, exps, j_max):
    """``alpha, beta, gamma`` for ``j = 0..j_max`` generated by their recursions."""
    j_max = check_int(j_max, "j_max", lower=0)
    n_eff, pq, one = _exact_pair(n_eff, exps)
    zero = one - one
    alpha, beta, gamma = [zero], [zero], [zero]
    step = (n_eff - one) / 2 * (pq - one)
    for _ in range(j_max):
        alpha.append(step + pq * alpha[-1])
        beta.append(one + pq * beta[-1])
        gamma.append(one + pq * gamma[-1])
    return alpha, beta, gamma


def double_sum_identity(pq, j):
    """Both sides of ``sum_{k<j} (j-k) pq^k = ((pq^{j+1} - pq)/(pq-1) - j) / (pq-1)``."""
    j = check_int(j, "j", lower=1)
    pq = _as_number(pq, "pq")
    if not pq > 1:
        raise DomainError(f"pq must be > 1, got {pq}")
    lhs = sum((j - k) * pq ** k for k in range(j))
    rhs = ((pq ** (j + 1) - pq) / (pq - 1) - j) / (pq - 1)
    return lhs, rhs


@dataclass(frozen=True)
class IterationConstants:
    """Log-space iteration constants for one instance.

    ``ln_C``/``ln_D`` hold ``ln C_j``/``ln D_j``; ``margin_C``/``margin_D`` hold
    ``ln C_j - (pq)^j ln E`` and ``ln D_j - (pq)^j ln N`` computed by their own
    (cancellation-free) recursion.  ``rate_C``/``rate_D`` are the limits of
    ``ln C_j / (pq)^j`` and ``ln D_j / (pq)^j``.
    """

    n_eff: object
    pq: object
    q: float
    theta: object
    alpha: list
    beta: list
    gamma: list
    ln_C: list
    ln_D: list
    margin_C: list
    margin_D: list
    base: dict
    j0: int
    j2: int
    rate_C: float
    rate_D: float
    slicing_factors: list = field(default_factory=list)


def _smallest_positive_index(slope, offset):
    # smallest j in N with slope*j + offset > 0 (slope > 0)
    if offset > 0:
        return 0
    return int(math.floor(-offset / slope)) + 1


def iteration_constants(schedule, classifier, base, j_max=None):
    """Iterate the constant recursions and the bounds used to extract the lifespan.

    ``base`` must provide positive ``K1`` (first lower bound constant) and the
    frame constants ``C`` and ``K``.
    """
    if classifier.regime == "OutOfRange":
        raise UsageError("iteration constants are only defined for Subcritical or Critical instances")
    K1 = float(check_scalar(base["K1"], "K1", lower=0, strict_lower=True))
    C = float(check_scalar(base["C"], "C", lower=0, strict_lower=True))
    K = float(check_scalar(base["K"], "K", lower=0, strict_lower=True))
    if j_max is None:
        j_max = len(schedule.ell) - 1
    j_max = check_int(j_max, "j_max", lower=1)
    if j_max > len(schedule.ell) - 1:
        raise UsageError("schedule is shorter than j_max")
    exps = classifier.exps
    q = float(exps.q)
    pqf = float(exps.pq)
    lpq = math.log(pqf)
    alpha, beta, gamma = recursion_sequences(classifier.n_eff, exps, j_max)

    M = 1.1 * math.exp(pqf / (pqf - 1.0))
    ln_D = math.log(K) + q * math.log(C) + q * math.log(pqf - 0.5) + math.log(pqf - 1.0) \
        - q * math.log(2.0) - math.log(M)
    ln_Q = (2.0 * q + 1.0) * lpq
    ln_E = math.log(K1) - pqf * ln_Q / (pqf - 1.0) ** 2 + ln_D / (pqf - 1.0)
    ln_E_tilde = ln_E - (float(classifier.n_eff) - 1.0) / 2.0 * math.log(2.0) \
        - math.log(2.0) / (pqf - 1.0)
    j0 = _smallest_positive_index(ln_Q / (pqf - 1.0),
                                  -ln_D / (pqf - 1.0) + pqf * ln_Q / (pqf - 1.0) ** 2)

    ln_Dt = math.log(K) + q * math.log(C) + math.log(pqf - 1.0)
    ln_Qt = 2.0 * q * math.log(2.0) + lpq
    ln_N = math.log(K1) + ln_Dt / (pqf - 1.0) - pqf * ln_Qt / (pqf - 1.0) ** 2
    j2 = _smallest_positive_index(ln_Qt / (pqf - 1.0),
                                  pqf * ln_Qt / (pqf - 1.0) ** 2 - ln_Dt / (pqf - 1.0))

    common = math.log(K) + q * math.log(C)
    slicing = []

    def beta_f(j):
        # beta_j = gamma_j; closed form past the recorded range
        return float(beta[j]) if j < len(beta) else (pqf ** j - 1.0) / (pqf - 1.0)

    def step_C(j):
        # additive part of ln C_{j+1} = step_C(j) + pq ln C_j
        bpq = beta_f(j) * pqf
        log_ell = math.log1p(pqf ** (-(j + 1)))
        slicing.append(math.exp(bpq * log_ell))
        return (common + q * math.log(pqf - 0.5) - q * math.log(2.0)
                - bpq * log_ell - 2.0 * q * (j + 1) * lpq - math.log(bpq + 1.0))

    def step_D(j):
        return common - 2.0 * q * (j + 1) * math.log(2.0) - math.log(1.0 + pqf * beta_f(j))

    lnC, lnD = [math.log(K1)], [math.log(K1)]
    mC, mD = [math.log(K1) - ln_E], [math.log(K1) - ln_N]
    rate_C, rate_D = mC[0], mD[0]
    for j in range(j_max):
        aC, aD = step_C(j), step_D(j)
        lnC.append(aC + pqf * lnC[-1])
        lnD.append(aD + pqf * lnD[-1])
        mC.append(aC + pqf * mC[-1])
        mD.append(aD + pqf * mD[-1])
        rate_C += aC / pqf ** (j + 1)
        rate_D += aD / pqf ** (j + 1)
    # the series for the limiting rate converges geometrically; finish it
    # without recording slicing factors past j_max
    recorded = list(slicing)
    j = j_max
    while True:
        inc_C = step_C(j) / pqf ** (j + 1)
        inc_D = step_D(j) / pqf ** (j + 1)
        rate_C += inc_C
        rate_D += inc_D
        j += 1
        if max(abs(inc_C), abs(inc_D)) < 1e-17 * (1.0 + abs(rate_C) + abs(rate_D)) or j > j_max + 4000:
            break
    rate_C += ln_E
    rate_D += ln_N

    base_constants = {
        "C0": K1, "D0": K1, "C": C, "K": K, "M": M,
        "D": math.exp(ln_D), "Q": math.exp(ln_Q), "E": math.exp(ln_E),
        "E_tilde": math.exp(ln_E_tilde), "D_tilde": math.exp(ln_Dt),
        "Q_tilde": math.exp(ln_Qt), "N": math.exp(ln_N),
        "c": 2.0 * math.exp(-(pqf - 1.0) * ln_N),
        "ln_E": ln_E, "ln_E_tilde": ln_E_tilde, "ln_N": ln_N,
        "T0": float(schedule.T0), "L_limit": schedule.L_limit,
        "Lambda_limit": float(schedule.Lambda_limit),
    }
    return IterationConstants(
        n_eff=classifier.n_eff, pq=exps.pq, q=q, theta=classifier.theta,
        alpha=alpha, beta=beta, gamma=gamma, ln_C=lnC, ln_D=lnD,
        margin_C=mC, margin_D=mD, base=base_constants, j0=j0, j2=j2,
        rate_C=rate_C, rate_D=rate_D, slicing_factors=recorded)


@dataclass(frozen=True)
class LifespanEnvelope:
    """Upper bound ``T(eps) <= bound(eps)``.

    Subcritical: ``constant_C * eps^exponent`` with ``exponent = -1/Theta``.
    Critical: ``exp(constant_C * eps^-exponent)`` with ``exponent = pq - 1``.
    """

    regime: str
    constant_C: float
    exponent: float

    def bound(self, eps):
        eps = np.asarray(eps, dtype=float)
        if np.any(eps <= 0):
            raise DomainError("eps must be > 0")
        with np.errstate(over="ignore"):
            if self.regime == "Subcritical":
                out = self.constant_C * eps ** self.exponent
            else:
                out = np.exp(self.constant_C * eps ** (-self.exponent))
        return float(out) if out.ndim == 0 else out


def envelope(classifier, constants):
    """Lifespan envelope implied by the iteration constants."""
    if classifier.regime == "Subcritical":
        theta = float(classifier.theta)
        ln_Et = constants.base["ln_E_tilde"]
        return LifespanEnvelope("Subcritical", math.exp(-ln_Et / theta), -1.0 / theta)
    if classifier.regime == "Critical":
        return LifespanEnvelope("Critical", constants.base["c"], float(constants.pq) - 1.0)
    raise UsageError("no lifespan envelope for OutOfRange instances")


def log_lower_bound(t, j, constants, classifier, schedule, eps):
    """Natural log of the ``j``-th lower bound for ``V_1(t)``; ``-inf`` on the boundary."""
    j = check_int(j, "j", lower=0)
    if j >= len(constants.ln_C):
        raise UsageError(f"j={j} exceeds the computed sequence length")
    eps = float(check_scalar(eps, "eps", lower=0, strict_lower=True))
    t = float(t)
    T0 = float(schedule.T0)
    power = float(constants.pq) ** j
    if classifier.regime == "Subcritical":
        start = float(schedule.L[j]) * T0
        if t < start:
            raise DomainError(f"t={t} lies before the admissible start {start}")
        beta = float(constants.beta[j])
        base = constants.ln_C[j] + power * math.log(eps) - float(constants.alpha[j]) * math.log1p(t)
        if beta == 0.0:
            return base
        gap = t - start
        return -math.inf if gap <= 0 else base + beta * math.log(gap)
    if classifier.regime == "Critical":
        start = float(schedule.Lambda[j]) * T0
        if t < start:
            raise DomainError(f"t={t} lies before the admissible start {start}")
        gamma = float(constants.gamma[j])
        base = constants.ln_D[j] + power * math.log(eps)
        if gamma == 0.0:
            return base
        lg = math.log(t / start)
        return -math.inf if lg <= 0 else base + gamma * math.log(lg)
    raise UsageError("no lower bounds for OutOfRange instances")


def lower_bound_envelope(t, j, constants, classifier, schedule, eps):
    """The ``j``-th lower bound for ``V_1(t)``; overflow is reported as ``+inf``."""
    val = log_lower_bound(t, j, constants, classifier, schedule, eps)
    return math.inf if val > 709.0 else math.exp(val)


def divergence_exponent(t, eps, constants, classifier, schedule):
    """Limit of ``ln(bound_j) / (pq)^j``; the bounds diverge in ``j`` iff it is positive."""
    pqf = float(constants.pq)
    if classifier.regime == "Subcritical":
        gap = t - schedule.L_limit * float(schedule.T0)
        if gap <= 0:
            return -math.inf
        return (constants.rate_C + math.log(eps) - (float(constants.n_eff) - 1.0) / 2.0 * math.log1p(t)
                + math.log(gap) / (pqf - 1.0))
    lg = math.log(t / (float(schedule.Lambda_limit) * float(schedule.T0)))
    if lg <= 0:
        return -math.inf
    return constants.rate_D + math.log(eps) + math.log(lg) / (pqf - 1.0)


def weak_divergence_exponent(t, eps, constants, classifier, schedule):
    """The weaker divergence criterion built from ``E_tilde`` (resp. ``N``).

    Subcritical: ``ln(E_tilde eps t^Theta)`` (meaningful for ``t >= 2 L T0``);
    critical: ``ln(N eps ln(t/(Lambda T0))^{1/(pq-1)})``.
    """
    if classifier.regime == "Subcritical":
        return constants.base["ln_E_tilde"] + math.log(eps) + float(classifier.theta) * math.log(t)
    lg = math.log(t / (float(schedule.Lambda_limit) * float(schedule.T0)))
    if lg <= 0:
        return -math.inf
    return constants.base["ln_N"] + math.log(eps) + math.log(lg) / (float(constants.pq) - 1.0)


def threshold_time(j, threshold, constants, classifier, schedule, eps, t_cap=1e300):
    """First time at which the ``j``-th lower bound reaches ``threshold``.

    The bounds are nondecreasing in ``t``, so the crossing is found by
    bracketing in ``ln t`` and Brent's method.  Returns ``inf`` when the
    bound stays below the threshold up to ``t_cap``.
    """
    log_thr = math.log(threshold)
    start = float((schedule.L if classifier.regime == "Subcritical" else schedule.Lambda)[j]) \
        * float(schedule.T0)

    def g(logt):
        return log_lower_bound(math.exp(logt), j, constants, classifier, schedule, eps) - log_thr

    if g(math.log(start)) >= 0:
        return start
    lo = math.log(start)
    hi = lo + 1.0
    while g(hi) < 0:
        lo = hi
        hi = lo + 2.0 * (hi - math.log(start))
        if hi > math.log(t_cap):
            return math.inf
    return math.exp(brentq(g, lo, hi, xtol=1e-12, rtol=1e-12))


def frames_table(n, damping, exps, T0, eps, j_max, base, threshold=1e6):
    """Row dictionaries for the ``frames`` CLI table."""
    clf = classify(n, damping, exps)
    sched = build_schedule(T0, exps, j_max)
    consts = iteration_constants(sched, clf, base, j_max)
    rows = []
    for j in range(j_max + 1):
        t_hit = threshold_time(j, threshold, consts, clf, sched, eps)
        if clf.regime == "Subcritical":
            rows.append({
                "j": j, "ell_j": float(sched.ell[j]), "L_j": float(sched.L[j]),
                "alpha_j": float(consts.alpha[j]), "beta_j": float(consts.beta[j]),
                "ln_C_j": consts.ln_C[j], "t_threshold": t_hit,
            })
        else:
            rows.append({
                "j": j, "Lambda_j": float(sched.Lambda[j]), "gamma_j": float(consts.gamma[j]),
                "ln_D_j": consts.ln_D[j], "t_threshold": t_hit,
            })
    return clf, consts, rows
