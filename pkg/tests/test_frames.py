from fractions import Fraction
import math

import pytest
from hypothesis import given, strategies as st

from blowup_lab.exceptions import DomainError, UsageError
from blowup_lab.frames import (DEFAULT_BASE, ExponentPair, LifespanEnvelope, build_schedule,
                               classify, closed_forms, critical_identity_holds,
                               divergence_exponent, double_sum_identity, envelope,
                               frames_table, iteration_constants, lower_bound_envelope,
                               weak_divergence_exponent, recursion_sequences, threshold_time)
from blowup_lab.specialfn import DampingSpec

NONE = DampingSpec("None")
F = Fraction
RATIONAL_PAIRS = [ExponentPair(F(6, 5), F(5, 4)), ExponentPair(F(4, 3), F(3, 2)),
                  ExponentPair(2, F(3, 2)), ExponentPair(2, 2)]


def test_classifier_examples():
    c = classify(1, NONE, ExponentPair(2, 2))
    assert c.theta == F(1, 3) and c.regime == "Subcritical"
    c = classify(2, NONE, ExponentPair(math.sqrt(3), math.sqrt(3)))
    assert c.regime == "Critical" and abs(c.theta) < 1e-12
    c = classify(1, DampingSpec("ScaleInvariant", mu=2), ExponentPair(2, 2))
    assert c.theta == F(1, 3) - 1 and c.regime == "OutOfRange"


def test_exponents_must_exceed_one():
    with pytest.raises(DomainError):
        ExponentPair(1, 2)


def test_exact_path_keeps_fractions():
    assert ExponentPair("3/2", 2).pq == 3
    assert isinstance(ExponentPair("3/2", 2).p, Fraction)
    assert not ExponentPair(1.5, 2.0).exact


def test_schedule_examples():
    s = build_schedule(1, ExponentPair(2, 2), 5)
    assert s.ell[0] == 1 and s.ell[1] == F(5, 4) and s.ell[2] == F(17, 16)
    assert s.Lambda[0] == 2 and s.Lambda[1] == F(5, 2) and s.Lambda_limit == 3
    assert float(s.L[-1]) < s.L_limit < float(s.L[-1]) * 1.01


def test_closed_form_examples():
    assert closed_forms(1, ExponentPair(F(4, 3), F(3, 2)), 3)[1] == 7
    assert closed_forms(1, ExponentPair(2, 2), 0) == (0, 0, 0)
    assert closed_forms(2, ExponentPair(F(3, 2), 2), 2)[0] == 4


@pytest.mark.parametrize("exps", RATIONAL_PAIRS)
def test_closed_forms_equal_recursions_exactly(exps):
    for n_eff in (F(1), F(2), F(5, 2)):
        a, b, g = recursion_sequences(n_eff, exps, 40)
        for j in range(41):
            assert closed_forms(n_eff, exps, j) == (a[j], b[j], g[j])


@given(st.floats(1.05, 3.0), st.floats(1.05, 3.0), st.floats(1.0, 4.0))
def test_closed_forms_float_path(p, q, n_eff):
    exps = ExponentPair(p, q)
    a, b, g = recursion_sequences(n_eff, exps, 25)
    for j in range(26):
        ca, cb, cg = closed_forms(n_eff, exps, j)
        assert ca == pytest.approx(a[j], rel=1e-12, abs=1e-300)
        assert cb == pytest.approx(b[j], rel=1e-12, abs=1e-300)
        assert b[j] * exps.pq + 1 == pytest.approx(b[j + 1] if j < 25 else b[j] * exps.pq + 1)


def test_double_sum_examples():
    assert double_sum_identity(2, 2) == (4, 4)
    assert double_sum_identity(3, 1) == (1, 1)
    assert double_sum_identity(2, 10) == (2036, 2036)


@pytest.mark.parametrize("pq", [F(3, 2), 2, 3, 4])
def test_double_sum_exact(pq):
    for j in range(1, 31):
        lhs, rhs = double_sum_identity(pq, j)
        assert lhs == rhs


@pytest.mark.parametrize("exps", RATIONAL_PAIRS)
def test_log_constant_dominates(exps):
    clf = classify(1, NONE, exps)
    consts = iteration_constants(build_schedule(1, exps, 40), clf, DEFAULT_BASE, 40)
    assert all(m >= 0 for m in consts.margin_C[consts.j0:])


@pytest.mark.parametrize("exps", RATIONAL_PAIRS)
def test_slicing_factors_below_M(exps):
    clf = classify(1, NONE, exps)
    consts = iteration_constants(build_schedule(1, exps, 40), clf, DEFAULT_BASE, 40)
    assert max(consts.slicing_factors) < consts.base["M"]


def test_critical_identity():
    assert critical_identity_holds()
    c = classify(2, NONE, ExponentPair(math.sqrt(3), math.sqrt(3)))
    assert abs(c.critical_exponent_residual()) < 1e-12


def test_envelope_examples():
    env = LifespanEnvelope("Subcritical", 1.0, -3.0)
    assert env.bound(0.1) == pytest.approx(1e3)
    crit = LifespanEnvelope("Critical", 1.0, 2.0)
    assert crit.bound(0.5) == pytest.approx(math.exp(4))
    with pytest.raises(DomainError):
        env.bound(0.0)


@given(st.floats(1e-3, 0.9), st.floats(1e-3, 0.9))
def test_envelope_monotone_and_slope(e1, e2):
    clf = classify(1, NONE, ExponentPair(2, 2))
    env = envelope(clf, iteration_constants(build_schedule(1, clf.exps, 20), clf, DEFAULT_BASE))
    lo, hi = sorted((e1, e2))
    assert env.bound(lo) >= env.bound(hi)
    if hi / lo > 1.01:
        slope = math.log(env.bound(lo) / env.bound(hi)) / math.log(hi / lo)
        assert slope == pytest.approx(3.0, rel=1e-9)


def test_envelope_out_of_range():
    clf = classify(1, DampingSpec("ScaleInvariant", mu=2), ExponentPair(2, 2))
    with pytest.raises(UsageError):
        iteration_constants(build_schedule(1, clf.exps, 5), clf, DEFAULT_BASE)


def _instance(exps=ExponentPair(2, 2), n=1, j_max=60):
    clf = classify(n, NONE, exps)
    sched = build_schedule(1, exps, j_max)
    return clf, sched, iteration_constants(sched, clf, DEFAULT_BASE, j_max)


def test_lower_bound_first_term_and_boundary():
    clf, sched, consts = _instance()
    assert lower_bound_envelope(5.0, 0, consts, clf, sched, 0.2) == pytest.approx(0.17 * 0.2)
    assert lower_bound_envelope(float(sched.L[1]), 1, consts, clf, sched, 0.2) == 0.0
    with pytest.raises(DomainError):
        lower_bound_envelope(0.5, 1, consts, clf, sched, 0.2)


@given(st.floats(0.01, 0.9), st.floats(4.0, 1e8))
def test_divergence_criterion_matches_iterates(eps, t):
    clf, sched, consts = _instance()
    rate = divergence_exponent(t, eps, consts, clf, sched)
    logs = [math.log(max(lower_bound_envelope(t, j, consts, clf, sched, eps), 1e-300))
            if j < 8 else None for j in range(8)]
    assert all(v is not None for v in logs)
    if abs(rate) > 1e-3:
        # ln(bound_j)/(pq)^j approaches the rate; its sign decides divergence
        from blowup_lab.frames import log_lower_bound
        tail = log_lower_bound(t, 60, consts, clf, sched, eps) / float(consts.pq) ** 60
        assert tail == pytest.approx(rate, abs=1e-6)


@given(st.floats(0.01, 0.9), st.floats(4.0, 1e8))
def test_weaker_criterion_implies_divergence(eps, t):
    clf, sched, consts = _instance()
    if t >= 2 * sched.L_limit and weak_divergence_exponent(t, eps, consts, clf, sched) > 0:
        assert divergence_exponent(t, eps, consts, clf, sched) > 0


def test_critical_divergence():
    exps = ExponentPair(math.sqrt(3), math.sqrt(3))
    clf, sched, consts = _instance(exps, n=2)
    assert clf.regime == "Critical"
    assert divergence_exponent(2.9, 0.5, consts, clf, sched) == -math.inf
    # the critical constant is large; eps=10 keeps exp(c eps^-2) in float range
    env = envelope(clf, consts)
    t_bound = env.bound(10.0)
    assert math.isfinite(t_bound)
    # exact crossing of the weaker criterion: ln(t/3) = (N eps)^-(pq-1)
    t_cross = 3.0 * math.exp((consts.base["N"] * 10.0) ** -2.0)
    assert weak_divergence_exponent(t_cross * 1.001, 10.0, consts, clf, sched) > 0
    assert weak_divergence_exponent(t_cross * 0.999, 10.0, consts, clf, sched) < 0
    assert t_bound >= t_cross


def test_threshold_time_crossing():
    clf, sched, consts = _instance()
    t = threshold_time(3, 1e6, consts, clf, sched, 0.5)
    assert math.isfinite(t)
    from blowup_lab.frames import log_lower_bound
    assert log_lower_bound(t, 3, consts, clf, sched, 0.5) == pytest.approx(math.log(1e6), abs=1e-6)


def test_frames_table_rows():
    clf, consts, rows = frames_table(1, NONE, ExponentPair(2, 2), 1, 0.5, 10, DEFAULT_BASE)
    assert len(rows) == 11 and rows[0]["ln_C_j"] == pytest.approx(math.log(0.17))
    assert rows[1]["ell_j"] == 1.25
    _, _, crit = frames_table(2, NONE, ExponentPair(math.sqrt(3), math.sqrt(3)), 1, 0.5, 5,
                              DEFAULT_BASE)
    assert "ln_D_j" in crit[0] and "Lambda_j" in crit[0]
