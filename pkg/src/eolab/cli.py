"""Command-line interface: experiment runner, verification suites, dominance tests.

Subcommands:
  run            execute an experiment config and write the report
  dominance      compare two scalar samples in increasing convex order
  verify         run a named invariant suite (conjugates|gradients|expansions|limits)
  list-problems  print the built-in problem catalog
  report         render figures and a summary from a CSV report

Exit codes: 0 success, 1 domain failure, 2 usage/config error; `dominance`
additionally uses 3 for an inconclusive verdict.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import asymptotics, divergence, dominance, harness, model
from .dominance import DominancePolicy, EmpiricalSample
from .solvers import ProcedureSpec


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eolab",
                                description="Data-driven stochastic optimization laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write the report")
    run.add_argument("config", help="path to a JSON experiment config")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--jobs", type=int, default=1, help="worker count")
    run.add_argument("--out", default=None, help="override the output path")
    run.add_argument("--format", choices=("csv", "json"), default=None,
                     help="override the output format")
    run.add_argument("--raw", action="store_true",
                     help="print raw gaps instead of scaled gaps in summaries")

    dom = sub.add_parser("dominance",
                         help="test increasing convex dominance of sample A by sample B")
    dom.add_argument("fileA", help="file with one scalar per line")
    dom.add_argument("fileB", help="file with one scalar per line")
    dom.add_argument("--z", type=float, default=3.0, help="tolerance band in SEs")
    dom.add_argument("--grid", type=int, default=512, help="evaluation grid size")

    ver = sub.add_parser("verify", help="run a named invariant suite")
    ver.add_argument("--suite", required=True,
                     choices=("conjugates", "gradients", "expansions", "limits"))
    ver.add_argument("--problem", default=None, help="restrict to one catalog problem")

    sub.add_parser("list-problems", help="print the built-in problem catalog")

    rep = sub.add_parser("report", help="render figures and a summary from a CSV report")
    rep.add_argument("csv", help="path to a CSV report produced by `run`")
    rep.add_argument("--out-dir", default=None,
                     help="directory for figures (default: alongside the CSV)")
    return p


# -- run ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        config = harness.ExperimentConfig.from_json(doc)
    except (harness.HarnessError, KeyError, TypeError, ValueError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2

    out = args.out or config.output or "report.csv"
    fmt = args.format or config.format
    budget_exceeded = None
    try:
        report = harness.run_experiment(config, jobs=args.jobs)
    except harness.FailureBudgetError as exc:
        budget_exceeded = str(exc)
        report = exc.report
    except (model.ModelError, harness.HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if report is not None:
        harness.write_report(report, out, fmt)
        unit = "mean_gap" if args.raw else "mean_scaled_gap"
        for cell in report.cells:
            val = cell[unit]
            shown = "nan" if val is None else f"{val:.6g}"
            print(f"{cell['procedure']:<32} n={cell['n']:<6} lambda={cell['lambda']:.6g} "
                  f"{unit}={shown} failures={cell['failures']}")
        print(f"report written to {out}")
    if budget_exceeded:
        print(f"error: {budget_exceeded}", file=sys.stderr)
        return 1
    return 0


# -- dominance ----------------------------------------------------------------------

def _read_scalars(path):
    with open(path, encoding="utf-8") as f:
        vals = [float(line) for line in f if line.strip()]
    if len(vals) < 2:
        raise ValueError(f"{path}: need at least 2 values")
    return np.asarray(vals)


def cmd_dominance(args) -> int:
    try:
        a = _read_scalars(args.fileA)
        b = _read_scalars(args.fileB)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    policy = DominancePolicy(z=args.z, grid_size=args.grid)
    verdict = dominance.icx_dominates(EmpiricalSample(a, args.fileA),
                                      EmpiricalSample(b, args.fileB), policy)
    print(verdict.to_json())
    return {"dominated": 0, "not-dominated": 1, "inconclusive": 3}[verdict.verdict]


# -- verify -------------------------------------------------------------------------

def _check(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"[{status}] {name}{suffix}")
    return bool(ok)


def _suite_conjugates(_problem):
    results = []
    for name in ("kl", "chi2"):
        rep = divergence.verify_conjugate_identities(divergence.get_divergence(name))
        for key, val in rep.residuals().items():
            results.append(_check(f"{name}: {key} < 1e-8", val < 1e-8, f"{val:.3e}"))
    return results


def _suite_gradients(problem_id):
    ids = [problem_id] if problem_id else model.list_problems()
    results = []
    for pid in ids:
        out = model.check_derivatives(model.get_problem(pid))
        results.append(_check(
            f"{pid}: finite-difference gradient/Hessian",
            out["ok"], f"grad {out['grad_rel_err']:.2e}, hess {out['hess_rel_err']:.2e}"))
    return results


def _suite_expansions(problem_id):
    results = []
    pid = problem_id or "shifted-gaussian-mean"
    prob = model.get_problem(pid)
    fit = asymptotics.expansion_residual_rate(
        prob, "regularized", (250, 1000, 4000), lambda n: 1 / math.sqrt(n),
        replications=200, seed=11)
    results.append(_check(f"{pid}: first-order expansion residual slope >= 1.5",
                          fit["slope"] >= 1.5, f"slope {fit['slope']:.3f}"))
    # worst-case expansion: residual against mean + sqrt(2 lam phi*''(0) var)
    exp_prob = model.get_problem("exp-quadratic")
    data = model.sample_dataset(exp_prob, 1000, 5)
    h = exp_prob.loss(exp_prob.certificate.x_star, data.values)
    div = divergence.get_divergence("kl")
    lams = np.array([1e-2, 1e-3, 1e-4, 1e-5])
    resid = []
    from .solvers import worst_case_expectation
    for lam in lams:
        w, _, _, _ = worst_case_expectation(h, div, lam)
        pred = h.mean() + math.sqrt(2 * lam * div.curvature_at_zero * h.var())
        resid.append(abs(w - pred))
    slope = float(np.polyfit(np.log(lams), np.log(resid), 1)[0])
    results.append(_check("worst-case expansion residual log-log slope >= 0.75",
                          slope >= 0.75, f"slope {slope:.3f}"))
    return results


def _suite_limits(problem_id):
    results = []
    pid = problem_id or "shifted-gaussian-mean"
    prob = model.get_problem(pid)
    R, n = 2000, 4000
    eo_sample, _ = asymptotics.gap_distribution(
        prob, ProcedureSpec(kind="eo"), n, R, seed=21)
    # case 1: a heavy-decay schedule matches the plain EO limit
    s1, _ = asymptotics.gap_distribution(
        prob, ProcedureSpec(kind="regularized", lam=n ** -0.75), n, R, seed=21)
    ks1 = asymptotics.ks_distance(s1, eo_sample)
    results.append(_check("case 1: KS(lambda=n^-0.75, lambda=0) <= 0.05",
                          ks1 <= 0.05, f"KS {ks1:.4f}"))
    # case 3: matches the shifted-and-spread limit law
    s3, _ = asymptotics.gap_distribution(
        prob, ProcedureSpec(kind="regularized", lam=1 / math.sqrt(n)), n, R, seed=22)
    params = asymptotics.limit_params_for(prob, "regularized", a=1.0)
    draw = asymptotics.sample_limit_law(params, R, seed=23)
    ks3 = asymptotics.ks_distance(s3, draw.sample)
    results.append(_check("case 3: KS(observed, limit law) <= 0.05",
                          ks3 <= 0.05, f"KS {ks3:.4f}"))
    # case 2: blow-up of the scaled gap across n
    medians = []
    for nn in (250, 1000, 4000):
        s2, _ = asymptotics.gap_distribution(
            prob, ProcedureSpec(kind="regularized", lam=nn ** -0.25), nn, R, seed=24)
        medians.append(float(np.median(s2.values)))
    ratio = min(b / a for a, b in zip(medians, medians[1:]))
    results.append(_check("case 2: scaled-gap median ratio >= 1.5 across n",
                          ratio >= 1.5, f"min ratio {ratio:.3f}"))
    return results


def cmd_verify(args) -> int:
    suites = {
        "conjugates": _suite_conjugates,
        "gradients": _suite_gradients,
        "expansions": _suite_expansions,
        "limits": _suite_limits,
    }
    try:
        results = suites[args.suite](args.problem)
    except (model.ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if all(results) else 1


# -- report rendering -----------------------------------------------------------------

def cmd_report(args) -> int:
    import csv as _csv

    try:
        with open(args.csv, encoding="utf-8", newline="") as f:
            reader = _csv.DictReader(f)
            if reader.fieldnames is None or list(reader.fieldnames) != list(harness.CSV_COLUMNS):
                print(f"error: {args.csv}: unexpected columns {reader.fieldnames}",
                      file=sys.stderr)
                return 2
            rows = [r for r in reader]
    except OSError as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return 2

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.csv))
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.splitext(os.path.basename(args.csv))[0]

    by_cell = {}
    for r in rows:
        if not r["scaled_gap"]:
            continue
        key = (r["procedure"], int(r["n"]))
        by_cell.setdefault(key, []).append(float(r["scaled_gap"]))
    if not by_cell:
        print("error: report contains no successful replications", file=sys.stderr)
        return 1

    written = []
    ns = sorted({n for _, n in by_cell})
    procs = sorted({p for p, _ in by_cell})

    fig, ax = plt.subplots(figsize=(7, 4.5))
    n_hist = max(ns)
    for proc in procs:
        vals = by_cell.get((proc, n_hist))
        if vals:
            hi = np.quantile(vals, 0.99)
            ax.hist(np.clip(vals, None, hi), bins=60, density=True,
                    histtype="step", label=proc)
    ax.set_xlabel(f"scaled optimality gap (n = {n_hist})")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    ax.set_title("Scaled gap distributions")
    path = os.path.join(out_dir, f"{base}-gap-hist.png")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for proc in procs:
        xs = [n for n in ns if (proc, n) in by_cell]
        ys = [float(np.median(by_cell[(proc, n)])) for n in xs]
        ax.plot(xs, ys, marker="o", label=proc)
    ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("median scaled gap")
    ax.legend(fontsize=8)
    ax.set_title("Scaled gap medians across sample sizes")
    path = os.path.join(out_dir, f"{base}-medians.png")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    summary = os.path.join(out_dir, f"{base}-summary.txt")
    with open(summary, "w", encoding="utf-8") as f:
        f.write(f"{'procedure':<32} {'n':>7} {'mean':>12} {'median':>12} {'reps':>7}\n")
        for (proc, n) in sorted(by_cell):
            vals = np.asarray(by_cell[(proc, n)])
            f.write(f"{proc:<32} {n:>7} {vals.mean():>12.6g} "
                    f"{np.median(vals):>12.6g} {vals.size:>7}\n")
    written.append(summary)
    for p in written:
        print(p)
    return 0


def cmd_list_problems(_args) -> int:
    for pid in model.list_problems():
        print(pid)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "dominance": cmd_dominance,
        "verify": cmd_verify,
        "list-problems": cmd_list_problems,
        "report": cmd_report,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
