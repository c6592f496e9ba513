"""Property suite behind the ``verify`` command.

Each check returns an :class:`~blowup_lab.functionals.InequalityResult`; the
suite is the list of all of them.
"""

from fractions import Fraction
import math

import numpy as np

from . import functionals as fn
from .frames import (DEFAULT_BASE, ExponentPair, build_schedule, classify, closed_forms,
                     critical_identity_holds, double_sum_identity, iteration_constants,
                     recursion_sequences)
from .functionals import InequalityResult
from .solver import ModelConfig, run
from .specialfn import (DampingSpec, bessel_k, fit_ball_constant, m_weight,
                        phi_eigen_residual, rho_log_derivative, rho_ode_residual,
                        scan_damping_window)

__all__ = ["golden_scale_invariant", "golden_scattering", "specialfn_checks",
           "frames_checks", "run_checks", "verify_suite"]


def _res(name, ref, margin, ok, constant=None, detail=""):
    return InequalityResult(name, ref, float(margin), "PASS" if ok else "FAIL", constant, detail)


def golden_scale_invariant(dr=1.0 / 32.0):
    return ModelConfig(n=1, exps=ExponentPair(Fraction(3, 2), Fraction(3, 2)),
                       damping=DampingSpec("ScaleInvariant", mu=1.0), epsilon=0.3,
                       dr=dr, snapshot_every=2 * dr, t_max=200.0)


def golden_scattering(dr=1.0 / 32.0):
    return ModelConfig(n=1, exps=ExponentPair(2, 2),
                       damping=DampingSpec("Scattering", b0=1.0, kappa=2.0), epsilon=0.3,
                       dr=dr, snapshot_every=2 * dr, t_max=200.0)


def specialfn_checks():
    out = []
    t = np.geomspace(0.1, 50.0, 50)
    for nu, closed in ((0.5, lambda x: np.sqrt(np.pi / (2 * x)) * np.exp(-x)),
                       (1.5, lambda x: np.sqrt(np.pi / (2 * x)) * np.exp(-x) * (1 + 1 / x))):
        err = float(np.max(np.abs(bessel_k(nu, t) / closed(t) - 1)))
        out.append(_res(f"bessel_closed_form_{nu}", "half-integer K closed form",
                        1e-8 - err, err <= 1e-8, detail=f"max rel err {err:.2e}"))
    tg = np.linspace(0.0, 20.0, 81)
    for mu in (0.5, 1.0, 2.0, 3.0):
        r = float(np.max(rho_ode_residual(mu, tg)))
        out.append(_res(f"rho_ode_mu{mu:g}", "time factor solves the adjoint ODE",
                        1e-5 - r, r <= 1e-5, detail=f"max rel residual {r:.2e}"))
    ts = np.linspace(0.0, 40.0, 401)
    for mu in (0.5, 1.0, 2.0, 3.0):
        pos = mu / (1 + ts) - np.asarray(rho_log_derivative(mu, ts))
        out.append(_res(f"damping_gap_mu{mu:g}", "mu/(1+t) - rho'/rho > 0",
                        float(np.min(pos)), bool(np.all(pos > 0))))
        T2, _ = scan_damping_window(mu, ts)
        ok = T2 is not None and T2 <= 10
        out.append(_res(f"damping_window_mu{mu:g}", "1 <= mu/(1+t) - 2 rho'/rho <= 3 from T2",
                        (10 - T2) if T2 is not None else -math.inf, ok, T2,
                        f"T2_hat={T2}"))
    tb = np.linspace(0.0, 40.0, 81)
    for n, rp in ((1, 1), (2, 1), (2, 2), (3, 2)):
        _, ratios = fit_ball_constant(n, rp, 1.0, tb)
        med = float(np.median(ratios))
        spread = float(max(np.max(ratios) / med, med / np.min(ratios)))
        out.append(_res(f"ball_integral_n{n}_r{rp}", "ball integral of phi^r within its envelope",
                        3 - spread, spread <= 3, detail=f"max factor from median {spread:.3f}"))
    for n in (1, 2, 3):
        r = float(np.max(phi_eigen_residual(n, np.linspace(0, 10, 41))))
        out.append(_res(f"phi_eigen_n{n}", "Laplacian of phi equals phi", 1e-5 - r, r <= 1e-5))
    damp = DampingSpec("Scattering", b0=1.0, kappa=2.0)
    tm = np.array([0.0, 1.0, 10.0])
    h = 1e-4
    fd = (m_weight(damp, tm + h) - m_weight(damp, np.maximum(tm - h, 0))) / \
        np.where(tm > 0, 2 * h, h)
    # forward difference at t=0 is first order; compare with a matching tolerance
    exact = damp.coefficient(tm) * m_weight(damp, tm)
    err = np.abs(fd / exact - 1)
    ok = err[0] <= 1e-3 and np.all(err[1:] <= 1e-6)
    out.append(_res("m_weight_derivative", "m' = b m", float(1e-6 - np.max(err[1:])), ok))
    return out


def frames_checks(j_max=40):
    out = []
    F = Fraction
    # rational pairs with pq = 3/2, 2, 3, 4
    for exps in (ExponentPair(F(6, 5), F(5, 4)), ExponentPair(F(4, 3), F(3, 2)),
                 ExponentPair(F(2), F(3, 2)), ExponentPair(F(2), F(2))):
        n_eff = Fraction(1)
        a, b, g = recursion_sequences(n_eff, exps, j_max)
        same = all(closed_forms(n_eff, exps, j) == (a[j], b[j], g[j]) for j in range(j_max + 1))
        out.append(_res(f"closed_forms_pq{exps.pq}", "closed forms equal recursions exactly",
                        0.0 if same else -1.0, same))
        ds = all(l == r for l, r in (double_sum_identity(exps.pq, j) for j in range(1, 31)))
        out.append(_res(f"double_sum_pq{exps.pq}", "double sum identity exact",
                        0.0 if ds else -1.0, ds))
        clf = classify(1, DampingSpec("None"), exps)
        consts = iteration_constants(build_schedule(1, exps, j_max), clf, DEFAULT_BASE, j_max)
        m = float(np.min(consts.margin_C[consts.j0:]))
        out.append(_res(f"lnC_lower_bound_pq{exps.pq}", "ln C_j >= (pq)^j ln E for j >= j0",
                        m, m >= 0, detail=f"j0={consts.j0}"))
    ok = critical_identity_holds()
    out.append(_res("critical_identity", "critical exponent identity (symbolic)",
                    0.0 if ok else -1.0, ok))
    ok = fn.factorization_roots_consistent()
    out.append(_res("factorization_roots", "roots of a^2-3a+1: product 1, sum 3",
                    0.0 if ok else -1.0, ok))
    return out


def run_checks(config, label=""):
    """Run ``config`` and check signs, Hoelder, the ODE and the frames on its trace."""
    report, _, tr = run(config, keep_trajectory=False)
    pre = f"{label}_" if label else ""
    out = [InequalityResult(pre + r.name, r.ref, r.worst_margin, r.verdict, r.constant,
                            r.detail) for r in fn.check_signs(tr)]
    h = fn.check_holder(tr)
    out.append(InequalityResult(pre + h.name, h.ref, h.worst_margin, h.verdict))
    ode = fn.check_u0_ode(tr)
    out.append(_res(pre + "u0_ode", "U0'' + 3U0' + U0 = source (relative residual)",
                    5e-2 - ode["relative"], ode["relative"] <= 5e-2,
                    detail=f"relative residual {ode['relative']:.3e}"))
    frames, _ = fn.check_frames(tr)
    out += [InequalityResult(pre + r.name, r.ref, r.worst_margin, r.verdict, r.constant,
                             r.detail) for r in frames]
    out.append(_res(pre + "run_status", "run ends in detected blow-up",
                    0.0, report.status == "BlowupDetected",
                    detail=f"{report.status} t={report.t_final:.6g}"))
    return out


def verify_suite(config=None, quick=False):
    """All checks; ``quick`` skips the simulation-backed ones."""
    results = specialfn_checks() + frames_checks()
    if not quick:
        if config is not None:
            results += run_checks(config, "config")
        else:
            results += run_checks(golden_scale_invariant(), "scale_invariant")
            results += run_checks(golden_scattering(), "scattering")
    return results
