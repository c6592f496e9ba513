"""Command line entry point: ``verify``, ``simulate``, ``sweep`` and ``frames``.

Exit status is 0 when every verdict is PASS, 1 when any check fails or a
sweep is inconclusive, and 2 for usage or configuration errors.
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import functionals as fn
from .exceptions import BlowupLabError, OutputError
from .frames import DEFAULT_BASE, frames_table
from .harness import (GOLDEN_SWEEP_CONFIG, SweepPlan, emit, fit_scaling, load_config,
                      parse_config, sweep, with_calibration)
from .solver import flat_params, run
from .suite import verify_suite

logger = logging.getLogger("blowup_lab")

SNAPSHOT_HEADER = ("t", "r", "u", "du", "v", "dv")
TRACE_HEADER = ("t", "U0", "U1", "V0", "V1", "source_u", "source_v", "tol", "snapshot")
VERIFY_HEADER = ("name", "ref", "worst_margin", "verdict", "constant", "detail")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_rows(path, header, rows):
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _write_text(path, text):
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _line_plot_script(csv_name, x, ys, logy=False):
    """A small matplotlib script plotting columns ``ys`` against ``x`` of ``csv_name``."""
    return (
        '"""Line plot generated from a CSV table."""\n'
        "import csv\nimport os\nimport sys\n\n"
        "import matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n"
        "here = os.path.dirname(os.path.abspath(__file__))\n"
        f"src = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, {csv_name!r})\n"
        "rows = list(csv.DictReader(open(src, newline=\"\")))\n"
        "fig, ax = plt.subplots(figsize=(6, 4))\n"
        f"for col in {list(ys)!r}:\n"
        f"    pts = [(float(r[{x!r}]), float(r[col])) for r in rows if r[col] not in (\"\", \"inf\")]\n"
        "    if pts:\n"
        "        ax.plot(*zip(*pts), label=col)\n"
        + ("ax.set_yscale(\"symlog\")\n" if logy else "")
        + f"ax.set_xlabel({x!r})\nax.legend()\nfig.tight_layout()\n"
        "fig.savefig(os.path.splitext(src)[0] + \".png\", dpi=120)\n")


def _print_results(results, stream):
    width = max((len(r.name) for r in results), default=4)
    for r in results:
        print(f"{r.verdict:5s} {r.name:<{width}s} margin={r.worst_margin: .3e} {r.detail}",
              file=stream)


def _exit_code(verdicts):
    return 0 if all(v == "PASS" for v in verdicts) else 1


def cmd_verify(args):
    spec = load_config(args.config) if args.config else None
    results = verify_suite(spec.model if spec else None, quick=args.quick)
    _print_results(results, sys.stdout)
    if args.out:
        path = os.path.join(args.out, "verify.csv")
        _write_rows(path, VERIFY_HEADER, [(r.name, r.ref, r.worst_margin, r.verdict,
                                           r.constant, r.detail) for r in results])
        if args.format == "plot-script":
            _write_text(os.path.join(args.out, "verify_plot.py"),
                        _line_plot_script("verify.csv", "worst_margin", ["worst_margin"]))
    failed = [r.name for r in results if r.verdict != "PASS"]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return _exit_code([r.verdict for r in results])


def cmd_simulate(args):
    spec = load_config(args.config) if args.config else _default_spec()
    cfg = spec.model
    report, trajectory, tr = run(cfg, keep_trajectory=bool(args.out))
    summary = report.as_record(cfg)
    summary.update({k: _fmt(v) if not isinstance(v, (int, float, str, bool)) or v is None
                    else v for k, v in flat_params(cfg).items()})
    line = json.dumps(summary, sort_keys=True, default=str)
    print(line)
    if args.out:
        snap_rows = ((s.t, r, a, b, c, d) for s in trajectory
                     for r, a, b, c, d in zip(s.r, s.u, s.du, s.v, s.dv))
        _write_rows(os.path.join(args.out, "snapshots.csv"), SNAPSHOT_HEADER, snap_rows)
        _write_rows(os.path.join(args.out, "functionals.csv"), TRACE_HEADER,
                    zip(tr.times, tr.U0, tr.U1, tr.V0, tr.V1, tr.source_u, tr.source_v,
                        tr.tol, tr.snapshot))
        _write_text(os.path.join(args.out, "summary.jsonl"), line + "\n")
        if args.format == "plot-script":
            _write_text(os.path.join(args.out, "functionals_plot.py"),
                        _line_plot_script("functionals.csv", "t",
                                          ["U0", "U1", "V0", "V1"], logy=True))
    verdicts = [r.verdict for r in fn.check_signs(tr)]
    return _exit_code(verdicts)


def cmd_sweep(args):
    spec = load_config(args.config) if args.config else _default_spec(sweep=True)
    jobs = args.jobs if args.jobs is not None else spec.jobs
    plan = SweepPlan(spec.model, spec.epsilons, parallelism=jobs)
    result = sweep(plan, spec.frames)
    fit = fit_scaling(result.records, result.classifier, slack=spec.slack)
    records = with_calibration(result.records, fit)
    out = args.out or "."
    emit(records, os.path.join(out, "lifespans.csv"), "csv")
    if args.format == "plot-script":
        emit(records, os.path.join(out, "lifespan_plot.py"), "plot-script",
             csv_name="lifespans.csv")
    summary = {k: fit[k] for k in ("slope", "intercept", "r2", "verdict", "C_hat", "target",
                                   "monotone", "points", "reason")}
    summary["regime"] = result.classifier.regime
    summary["inconclusive"] = result.inconclusive
    summary["calibration"] = "C_hat from the largest epsilon"
    print(json.dumps(summary, sort_keys=True, default=str))
    _write_text(os.path.join(out, "sweep_summary.jsonl"),
                json.dumps(summary, sort_keys=True, default=str) + "\n")
    if result.inconclusive:
        return 1
    return _exit_code([fit["verdict"]])


def cmd_frames(args):
    spec = load_config(args.config) if args.config else _default_spec()
    cfg = spec.model
    fr = spec.frames
    base = {k: fr.get(k, DEFAULT_BASE[k]) for k in ("K1", "C", "K")}
    clf, consts, rows = frames_table(cfg.n, cfg.damping, cfg.exps, fr.get("T0", 1),
                                     cfg.epsilon, fr.get("j_max", 20), base,
                                     fr.get("threshold", 1e6))
    header = tuple(rows[0].keys())
    print(f"regime={clf.regime} theta={float(clf.theta):.6g} j0={consts.j0} j2={consts.j2}")
    for row in rows:
        print("  ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    if args.out:
        _write_rows(os.path.join(args.out, "frames.csv"), header,
                    (tuple(r.values()) for r in rows))
        if args.format == "plot-script":
            col = "ln_C_j" if "ln_C_j" in header else "ln_D_j"
            _write_text(os.path.join(args.out, "frames_plot.py"),
                        _line_plot_script("frames.csv", "j", [col], logy=True))
    return 0


def _default_spec(sweep=False):
    if sweep:
        return parse_config(GOLDEN_SWEEP_CONFIG, "<golden sweep>")
    return parse_config("n = 1\np = 2\nq = 2\nepsilon = 0.5\n", "<defaults>")


def build_parser():
    parser = argparse.ArgumentParser(prog="blowup-lab",
                                     description="Blow-up experiments for coupled damped waves.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_ in (("verify", cmd_verify, "run the property suite"),
                              ("simulate", cmd_simulate, "integrate one instance"),
                              ("sweep", cmd_sweep, "lifespan study over epsilon"),
                              ("frames", cmd_frames, "iteration-constant tables")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, default=None, help="parallel runs (sweep)")
        p.add_argument("--format", choices=("csv", "plot-script"), default="csv")
        if name == "verify":
            p.add_argument("--quick", action="store_true",
                           help="skip the simulation-backed checks")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except BlowupLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
