"""Acceptance criteria 1-10.

Each criterion is a function returning ``(ok, detail)``.  Under pytest every
criterion is one test and a ``PASS``/``FAIL`` line is written to the terminal;
run as a script (``python tests/test_acceptance.py``) it prints the same lines
and exits nonzero on any failure.  Criterion 10 reuses the sweep of criterion 9.
"""

from fractions import Fraction
import os
import sys
import tempfile
import time

import numpy as np
import pytest

from blowup_lab import functionals as fn
from blowup_lab.frames import (DEFAULT_BASE, ExponentPair, build_schedule, classify,
                               closed_forms, double_sum_identity, iteration_constants,
                               recursion_sequences)
from blowup_lab.harness import (GOLDEN_SWEEP_CONFIG, SweepPlan, emit, fit_scaling,
                                parse_config, sweep, with_calibration)
from blowup_lab.solver import DataProfile, ModelConfig, run
from blowup_lab.specialfn import (DampingSpec, bessel_k, fit_ball_constant,
                                  rho_log_derivative, rho_ode_residual, scan_damping_window)
from blowup_lab.suite import golden_scale_invariant, golden_scattering

sys.path.insert(0, os.path.dirname(__file__))
from oracles import dalembert, observed_orders  # noqa: E402

MUS = (0.5, 1.0, 2.0, 3.0)


def _timed(func):
    start = time.perf_counter()
    out = func()
    return out, time.perf_counter() - start


def criterion_1():
    def body():
        t = np.geomspace(0.1, 50.0, 50)
        half = np.sqrt(np.pi / (2 * t)) * np.exp(-t)
        e1 = np.max(np.abs(bessel_k(0.5, t) - half) / half)
        e2 = np.max(np.abs(bessel_k(1.5, t) - half * (1 + 1 / t)) / (half * (1 + 1 / t)))
        return max(e1, e2)
    err, secs = _timed(body)
    return err <= 1e-8 and secs < 5, f"max rel err {err:.2e}, {secs:.2f}s"


def criterion_2():
    t = np.linspace(0.0, 20.0, 201)
    worst = max(float(np.max(rho_ode_residual(mu, t))) for mu in MUS)
    return worst <= 1e-5, f"max rel residual {worst:.2e}"


def criterion_3():
    t = np.linspace(0.0, 40.0, 801)
    gaps, windows = [], []
    for mu in MUS:
        ld = np.asarray(rho_log_derivative(mu, t))
        gaps.append(float(np.min(mu / (1 + t) - ld)))
        T2, _ = scan_damping_window(mu, t)
        if T2 is None:
            windows.append((mu, None, False))
            continue
        tail = t >= T2
        w = mu / (1 + t[tail]) - 2 * ld[tail]
        windows.append((mu, T2, bool(np.all((w >= 1) & (w <= 3))) and T2 <= 10))
    ok = min(gaps) > 0 and all(w[2] for w in windows)
    t2s = ", ".join(f"mu={m:g}: T2={T2}" for m, T2, _ in windows)
    return ok, f"min gap {min(gaps):.3e}; {t2s}"


def criterion_4():
    t = np.linspace(0.0, 40.0, 161)
    worst = 0.0
    for n, rp in ((1, 1), (2, 1), (2, 2), (3, 2)):
        _, ratios = fit_ball_constant(n, rp, 1.0, t)
        med = float(np.median(ratios))
        worst = max(worst, float(np.max(ratios)) / med, med / float(np.min(ratios)))
    return worst <= 3, f"largest factor from median {worst:.3f}"


def criterion_5():
    def body():
        F = Fraction
        ok = True
        for exps in (ExponentPair(F(6, 5), F(5, 4)), ExponentPair(F(4, 3), F(3, 2)),
                     ExponentPair(2, F(3, 2)), ExponentPair(2, 2)):
            assert exps.pq in (F(3, 2), 2, 3, 4)
            a, b, g = recursion_sequences(F(1), exps, 40)
            ok &= all(closed_forms(F(1), exps, j) == (a[j], b[j], g[j]) for j in range(41))
            ok &= all(lhs == rhs for lhs, rhs in
                      (double_sum_identity(exps.pq, j) for j in range(1, 31)))
            clf = classify(1, DampingSpec("None"), exps)
            c = iteration_constants(build_schedule(1, exps, 40), clf, DEFAULT_BASE, 40)
            ok &= all(m >= 0 for m in c.margin_C[c.j0:41])
        return ok
    ok, secs = _timed(body)
    return ok and secs < 1, f"exact identities {'hold' if ok else 'broken'}, {secs:.2f}s"


def criterion_6():
    def body():
        errors = []
        for dr in (1 / 64, 1 / 128, 1 / 256):
            cfg = ModelConfig(n=1, damping=DampingSpec("None"), epsilon=1.0,
                              profile=DataProfile(R=2.0), dr=dr, t_max=1.5,
                              snapshot_every=1.5, nonlinear=False, u_damping=0.0)
            _, traj, _ = run(cfg, with_trace=False)
            s = traj[-1]
            stride = round((1 / 64) / dr)
            ref = dalembert(s.r[::stride], s.t, 2.0, 1.0, 1.0)
            errors.append(float(np.max(np.abs(s.v[::stride] - ref))))
        return errors
    errors, secs = _timed(body)
    orders = observed_orders(errors)
    return min(orders) >= 1.9 and secs < 30, \
        f"orders {', '.join(f'{o:.3f}' for o in orders)}, {secs:.1f}s"


def criterion_7():
    def body():
        _, _, tr = run(golden_scale_invariant(), keep_trajectory=False)
        signs = fn.check_signs(tr)
        frames, info = fn.check_frames(tr)
        ode = fn.check_u0_ode(tr)["relative"]
        ode_fine = fn.check_u0_ode(
            run(golden_scale_invariant().refined(2), keep_trajectory=False)[2])["relative"]
        return signs, frames, info, ode, ode_fine
    (signs, frames, info, ode, ode_fine), secs = _timed(body)
    names = {r.name for r in frames}
    ok = (all(r.verdict == "PASS" for r in signs + frames)
          and {"U0_sign", "V0_sign", "V1_sign"} <= {r.name for r in signs}
          and {"u1_precursor", "frame_u", "frame_v"} <= names
          and info["C_hat"] > 0 and info["K_hat"] > 0
          and ode <= 5e-2 and ode_fine < ode and secs < 120)
    return ok, (f"C_hat={info['C_hat']:.4g} K_hat={info['K_hat']:.4g} T6_hat={info['T6_hat']:g}"
                f" ode {ode:.3e} -> {ode_fine:.3e}, {secs:.1f}s")


def criterion_8():
    def body():
        _, _, tr = run(golden_scattering(), keep_trajectory=False)
        return fn.check_frames(tr)
    (results, info), secs = _timed(body)
    by = {r.name: r for r in results}
    c = info.get("constants", {})
    ok = (all(r.verdict == "PASS" for r in results)
          and {"v1_lower_bound", "frame_u", "frame_v"} <= set(by)
          and (c.get("K2") or 0) > 0 and (c.get("K3") or 0) > 0 and secs < 120)
    return ok, (f"K2={c.get('K2'):.4g} K3={c.get('K3'):.4g} C_hat={info['C_hat']:.4g} "
                f"K_hat={info['K_hat']:.4g}, {secs:.1f}s")


def golden_sweep(out_dir):
    spec = parse_config(GOLDEN_SWEEP_CONFIG, "<golden sweep>")
    result = sweep(SweepPlan(spec.model, spec.epsilons, parallelism=2))
    fit = fit_scaling(result.records, result.classifier, slack=spec.slack)
    records = with_calibration(result.records, fit)
    path = os.path.join(out_dir, "lifespans.csv")
    emit(records, path)
    with open(path, "rb") as fh:
        return records, fit, fh.read()


def criterion_9(sweep_run):
    (records, fit, _), secs = sweep_run
    blown = all(r.status == "BlowupDetected" for r in records)
    if fit["slope"] is None:
        return False, f"fit {fit['verdict']}: {fit['reason']}"
    ok = (blown and fit["monotone"] and fit["slope"] <= 1 / (1 / 3) + 0.5
          and fit["under_envelope"] and fit["verdict"] == "PASS" and secs < 600)
    T = ", ".join(f"{r.t_blowup:.4g}" for r in records if r.t_blowup is not None)
    return ok, f"T=[{T}] slope {fit['slope']:.3f} (<= 3.5), C_hat={fit['C_hat']:.4g}, {secs:.0f}s"


def criterion_10(sweep_run):
    first = sweep_run[0][2]
    with tempfile.TemporaryDirectory() as d:
        second = golden_sweep(d)[2]
    return first == second, f"{len(first)} bytes, identical={first == second}"


# ---------------------------------------------------------------- pytest glue

def _report(request, number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    rep = request.config.pluginmanager.get_plugin("terminalreporter")
    if rep is not None:
        rep.write_line(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def sweep_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("sweep")
    return _timed(lambda: golden_sweep(str(d)))


@pytest.mark.parametrize("number", [1, 2, 3, 4, 5, 6, 7, 8])
def test_criterion(request, number):
    ok, detail = globals()[f"criterion_{number}"]()
    _report(request, number, ok, detail)


def test_criterion_9_lifespan_scaling(request, sweep_run):
    _report(request, 9, *criterion_9(sweep_run))


def test_criterion_10_determinism(request, sweep_run):
    _report(request, 10, *criterion_10(sweep_run))


def main():
    results = []
    for number in range(1, 9):
        results.append((number, *globals()[f"criterion_{number}"]()))
        print(f"{'PASS' if results[-1][1] else 'FAIL'} criterion {number}: {results[-1][2]}",
              flush=True)
    with tempfile.TemporaryDirectory() as d:
        sweep_run = _timed(lambda: golden_sweep(d))
        for number, func in ((9, criterion_9), (10, criterion_10)):
            ok, detail = func(sweep_run)
            results.append((number, ok, detail))
            print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}", flush=True)
    failures = sum(1 for _, ok, _ in results if not ok)
    print(f"{len(results) - failures}/{len(results)} criteria passed")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
