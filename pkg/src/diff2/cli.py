"""Command line entry point: ``diff2 run | calibrate | selftest``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time

import numpy as np

from .accountant import PrivacyBudget, calibrate_diff2_bvrlsgd, calibrate_diff2_gd, verify_budget
from .data import DATASET_PRESETS

log = logging.getLogger("diff2")


def _algos(values: list[str]) -> tuple[str, ...]:
    out = []
    for v in values:
        out.extend(a.strip() for a in v.split(",") if a.strip())
    return tuple(dict.fromkeys(out))


def _add_budget(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, default=3.0, help="target epsilon (default 3)")
    p.add_argument("--delta", type=float, default=1e-5, help="target delta (default 1e-5)")
    p.add_argument("--rounds", type=int, default=2000, help="communication rounds R")
    p.add_argument("--clients", type=int, default=10, help="number of clients P")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diff2", description="Differentially private federated nonconvex optimisation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="tune and run algorithms over seeds, write CSV/JSON/SVG")
    run.add_argument("--dataset", required=True, help="CSV file with a header row")
    run.add_argument("--task", choices=("regression", "classification"), default="regression")
    run.add_argument("--preset", choices=sorted(DATASET_PRESETS), help="column rules of a known dataset")
    run.add_argument("--target", help="target column (default: last column)")
    run.add_argument("--drop", action="append", default=[], help="column to discard (repeatable)")
    run.add_argument("--algo", action="append", default=[],
                     help="gd, dp-gd, diff2-gd or diff2-bvr-lsgd; repeatable or comma separated")
    _add_budget(run)
    run.add_argument("--seeds", type=int, default=5, help="number of seeds (runs seeds 1..N)")
    run.add_argument("--seed", type=int, default=0, help="root seed")
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--tune", action="store_true", help="grid search with patience (default)")
    mode.add_argument("--eta", type=float, help="fixed learning rate; disables tuning")
    run.add_argument("--c1", type=float, default=1.0)
    run.add_argument("--c2", type=float, default=1.0)
    run.add_argument("--c3", type=float, help="local clipping factor (default: c2)")
    run.add_argument("--restart-interval", type=int, help="T; fixes T even when tuning")
    run.add_argument("--local-steps", type=int, default=10, help="K for BVR-L-SGD")
    run.add_argument("--batch", type=int, default=40, help="minibatch b for BVR-L-SGD")
    run.add_argument("--fast", action="store_true", help="reduced tuning grid")
    run.add_argument("--stride", type=int, default=20, help="tuning checkpoint stride")
    run.add_argument("--jobs", type=int, default=1, help="worker processes over seeds")
    run.add_argument("--out", required=True, help="output directory")

    cal = sub.add_parser("calibrate", help="print the noise plan and its budget audit")
    cal.add_argument("--algo", choices=("dp-gd", "diff2-gd", "diff2-bvr-lsgd"), default="diff2-gd")
    _add_budget(cal)
    cal.add_argument("--restart-interval", type=int, default=20)
    cal.add_argument("--n-min", type=int, required=True, help="smallest client shard size")
    cal.add_argument("--u", type=float, default=1.25)
    cal.add_argument("--u1", type=float, default=3.0)
    cal.add_argument("--u2", type=float, default=3.0)
    cal.add_argument("--local-steps", type=int, default=10)
    cal.add_argument("--batch", type=int, default=40)

    sub.add_parser("selftest", help="quick invariant checks")
    return parser


def cmd_run(args) -> int:
    from .harness.experiment import ExperimentConfig, run_experiment
    from .harness.report import emit_outputs

    target, drop = args.target, tuple(args.drop)
    if args.preset:
        preset = DATASET_PRESETS[args.preset]
        target, drop = target or preset.target, drop or tuple(preset.drop)
    cfg = ExperimentConfig(
        dataset=args.dataset, task=args.task, algos=_algos(args.algo) or ("dp-gd", "diff2-gd"),
        eps=args.eps, delta=args.delta, rounds=args.rounds, clients=args.clients, seeds=args.seeds,
        root_seed=args.seed, tune=args.eta is None, fast=args.fast, eta=args.eta, c1=args.c1, c2=args.c2,
        c3=args.c3, restart_interval=args.restart_interval, local_steps=args.local_steps, batch=args.batch,
        stride=args.stride, target=target, drop=drop, jobs=args.jobs,
    )
    t0 = time.perf_counter()
    summaries = run_experiment(cfg)
    summary = emit_outputs(cfg, summaries, args.out)
    for algo, per in summary["aggregates"].items():
        cells = ", ".join(f"{c}={v['mean']:.6g}+-{v['std']:.3g}" for c, v in per.items() if v["mean"] is not None)
        print(f"{algo}: {cells}")
    for t in summary["t_tests"]:
        print(f"t-test {t['algo']} < {t['baseline']} on {t['criterion']}: t={t['t']}, p={t['p']:.4g}")
    failed = [s for s in summaries if not s.ok]
    for s in failed:
        print(f"FAILED {s.algo} seed {s.seed}: {s.error}", file=sys.stderr)
    print(f"wrote {args.out} in {time.perf_counter() - t0:.1f}s")
    return 1 if failed else 0


def cmd_calibrate(args) -> int:
    budget = PrivacyBudget(args.eps, args.delta)
    if args.algo == "dp-gd":
        plan = calibrate_diff2_gd(budget, args.rounds, 1, args.n_min, args.clients, limit_one=True)
    elif args.algo == "diff2-gd":
        plan = calibrate_diff2_gd(budget, args.rounds, args.restart_interval, args.n_min, args.clients, u=args.u)
    else:
        plan = calibrate_diff2_bvrlsgd(
            budget, args.rounds, args.restart_interval, args.local_steps, args.clients, args.n_min,
            args.batch, u1=args.u1, u2=args.u2,
        )
    audit = verify_budget(plan)
    print(json.dumps({"plan": plan.to_dict(), "audit": {**audit.__dict__, "rdp_total": audit.rdp_total}}, indent=2))
    if not plan.feasible:
        print("plan is infeasible: " + "; ".join(plan.reasons), file=sys.stderr)
        return 1
    if audit.eps_total > budget.eps_dp * (1 + 1e-9):
        print(f"audit exceeds budget: {audit.eps_total} > {budget.eps_dp}", file=sys.stderr)
        return 1
    return 0


def cmd_selftest(args) -> int:
    """A few fast invariants; the full suites live in the test directory."""
    from .core import Diff2Config, run_diff2, run_dp_gd
    from .federation import Federation
    from .harness.stats import paired_one_sided_t_test
    from .models import ModelSpec, Sample, finite_diff_gradient, init_params, per_sample_gradient
    from .numerics import RngStream, clip_to_radius, l2_norm

    checks = []
    rng = np.random.default_rng(0)

    v = rng.normal(size=7) * 10
    checks.append(("clip never exceeds radius", l2_norm(clip_to_radius(v, 1.5)) <= 1.5))

    budget = PrivacyBudget(3.0, 1e-5)
    plan = calibrate_diff2_gd(budget, 200, 10, 100, 10)
    audit = verify_budget(plan)
    checks.append(("gd plan spends eps/2 on rdp", math.isclose(audit.rdp_total, 1.5, rel_tol=1e-9)))
    checks.append(("gd plan within budget", audit.eps_total <= 3.0 * (1 + 1e-12)))

    spec = ModelSpec(4, 3)
    x = init_params(spec, RngStream(1))
    z = Sample(rng.normal(size=4), 0.3)
    g, fd = per_sample_gradient(spec, x, z), finite_diff_gradient(spec, x, z)
    checks.append(("gradient matches finite differences", l2_norm(g - fd) <= 1e-6 * max(1.0, l2_norm(g))))

    fed = Federation.from_arrays([(rng.normal(size=(5, 4)), rng.normal(size=5)) for _ in range(2)])
    a = run_diff2(Diff2Config(20, 1, 0.1, 1.0, sigma1=0.5), fed, spec, x, RngStream(2))
    b = run_dp_gd(20, 0.1, 1.0, 0.5, fed, spec, x, RngStream(2))
    checks.append(("diff2 with T=1 equals dp-gd", all(np.array_equal(p, q) for p, q in zip(a.trajectory, b.trajectory))))

    t, p = paired_one_sided_t_test([0.0] * 5)
    checks.append(("t-test symmetric at zero", t == 0 and p == 0.5))

    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(ok for _, ok in checks) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "calibrate": cmd_calibrate, "selftest": cmd_selftest}
    try:
        return handlers[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
