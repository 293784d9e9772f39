"""Command-line entry point ``mdlcal``.

Exit codes: 0 when every hard check passes, 1 when a check fails, 2 on
configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .decision import DegenerateCosts, induced_rule, threshold_from_costs
from .dist import DistributionError, FiniteJoint, Predictor, bayes_predictor
from .harness import (
    BUNDLED,
    ConfigError,
    SizeLimit,
    bundled_config,
    decision_table_csv,
    dump_json,
    generate_random_scenario,
    load_config_file,
    parse_config,
    run_scenario,
)
from .scoring import CostMatrix

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _report(name: str, manifest) -> None:
    status = "ok" if manifest.ok else "FAILED"
    print(f"{name}: {status} ({len(manifest.files)} files)")
    for f in manifest.failures:
        print(f"  failure: {f}")
    for w in manifest.warnings:
        print(f"  warning: {w}")


def _job(raw: dict, base_dir: str, seed, out: str, strict: bool, stages: tuple):
    cfg = parse_config(raw, base_dir, seed)
    return cfg.name, run_scenario(cfg, out, strict=strict, stages=stages)


def _collect(args) -> list[tuple[dict, str]]:
    jobs = []
    for path in args.config or []:
        jobs.append((load_config_file(path), str(Path(path).resolve().parent)))
    for name in getattr(args, "scenario", None) or []:
        jobs.append((bundled_config(name), str(Path.cwd())))
    if not jobs:
        raise ConfigError("give at least one --config or --scenario")
    return jobs


def _run_pipeline(args, stages) -> int:
    jobs = _collect(args)
    out = Path(args.out)
    names = [raw.get("name", "scenario") for raw, _ in jobs]
    if len(set(names)) != len(names):
        raise ConfigError(f"scenario names must be unique, got {names}")
    # one scenario writes straight into --out, several get a subdirectory each
    dirs = [out] if len(jobs) == 1 else [out / n for n in names]
    strict = getattr(args, "strict", False)
    calls = [(raw, base, args.seed, str(d), strict, stages) for (raw, base), d in zip(jobs, dirs)]
    workers = max(1, getattr(args, "parallel", 1) or 1)
    if workers > 1 and len(calls) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, *zip(*calls)))
    else:
        results = [_job(*c) for c in calls]
    ok = True
    for name, manifest in results:
        _report(name, manifest)
        ok &= manifest.ok
    return EXIT_OK if ok else EXIT_FAIL


def cmd_run(args) -> int:
    return _run_pipeline(args, ("solve", "audit", "decide"))


def cmd_solve(args) -> int:
    return _run_pipeline(args, ("solve",))


def cmd_audit(args) -> int:
    return _run_pipeline(args, ("solve", "audit"))


def cmd_decide(args) -> int:
    h = Predictor.from_dict(json.loads(Path(args.predictor).read_text()))
    cm = CostMatrix.load(args.costs)
    rule = induced_rule(h, cm)
    table = decision_table_csv(rule, cm)
    threshold = None
    if cm.costs.shape == (2, 2):
        try:
            threshold = threshold_from_costs(cm, args.positive_action, args.positive_label).to_dict()
        except DegenerateCosts as e:
            print(f"no threshold rule: {e}", file=sys.stderr)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "decisions.csv").write_text(table)
        if threshold is not None:
            (out / "threshold.json").write_text(dump_json(threshold))
    else:
        sys.stdout.write(table)
        if threshold is not None:
            sys.stdout.write(dump_json(threshold))
    return EXIT_OK


def cmd_scenario_gen(args) -> int:
    cfg, files = generate_random_scenario(args.seed, args.n, args.m, args.k, args.out, loss=args.loss)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Quick invariant sweep on seeded random instances."""
    from .audit import audit_envelope, disparity_curve
    from .decomposition import calibration_error, decompose
    from .envelopes import ConvexHullEnvelope
    from .scoring import BrierLoss, LogLoss
    from .solver import SolverOptions, solve_max_entropy, verify_saddle

    rng = np.random.default_rng(args.seed)
    checks: dict[str, bool] = {}
    losses = (LogLoss(), BrierLoss())

    worst = 0.0
    for _ in range(200):
        q = FiniteJoint(rng.dirichlet(np.ones(12)).reshape(4, 3))
        h = Predictor(rng.dirichlet(np.ones(3), size=4))
        for pl in losses:
            worst = max(worst, decompose(q, h, pl).identity_residual)
    checks["decomposition identity"] = worst <= 1e-8

    checks["bayes predictor calibrated"] = all(
        calibration_error(q, bayes_predictor(q), pl) <= 1e-9
        for q in (FiniteJoint(rng.dirichlet(np.ones(12)).reshape(4, 3)) for _ in range(100))
        for pl in losses
    )

    env = ConvexHullEnvelope([FiniteJoint.bernoulli(0.2), FiniteJoint.bernoulli(0.9)])
    res = solve_max_entropy(env, LogLoss(), SolverOptions(gap_tol=1e-11))
    checks["bernoulli hull value ln 2"] = abs(res.value - np.log(2)) <= 1e-6

    saddle_ok = bound_ok = limit_ok = True
    for _ in range(20):
        k = int(rng.integers(1, 5))
        env = ConvexHullEnvelope([FiniteJoint(rng.dirichlet(np.ones(6)).reshape(2, 3)) for _ in range(k)])
        for pl in losses:
            res = solve_max_entropy(env, pl, SolverOptions(gap_tol=1e-11))
            saddle_ok &= verify_saddle(env, res, pl, probes=10, seed=args.seed).passed
            bound_ok &= audit_envelope(env, res, pl, env.vertices).all_bounds_ok
            limit_ok &= all(disparity_curve(v, res, pl).calib_errors[-1] <= 1e-8 for v in env.vertices)
    checks["saddle certificates"] = saddle_ok
    checks["calibration bound"] = bound_ok
    checks["disparity limit"] = limit_ok

    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", action="append", metavar="PATH", help="scenario config (TOML or JSON); repeatable")
    p.add_argument("--scenario", action="append", choices=BUNDLED, help="bundled scenario; repeatable")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, default=None, metavar="U64", help="override the config seed")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="run up to N scenarios concurrently")
    p.add_argument("--strict", action="store_true", help="treat warnings as failures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdlcal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (
        ("run", cmd_run, "solve, certify, audit and decide"),
        ("solve", cmd_solve, "solve for Q* and h* and certify the saddle point"),
        ("audit", cmd_audit, "solve and audit every probe"),
    ):
        p = sub.add_parser(name, help=helptext)
        _pipeline_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("decide", help="decision table for a predictor and cost matrix")
    p.add_argument("--predictor", required=True, metavar="PATH")
    p.add_argument("--costs", required=True, metavar="PATH")
    p.add_argument("--positive-action", type=int, default=0)
    p.add_argument("--positive-label", type=int, default=1)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("scenario", help="scenario utilities")
    ssub = p.add_subparsers(dest="scenario_command", required=True)
    g = ssub.add_parser("gen", help="write a random hull scenario")
    g.add_argument("--seed", type=int, required=True, metavar="U64")
    g.add_argument("--n", type=int, required=True, help="feature values")
    g.add_argument("--m", type=int, required=True, help="labels")
    g.add_argument("--k", type=int, required=True, help="hull vertices")
    g.add_argument("--loss", choices=("log", "brier"), default="log")
    g.add_argument("--out", required=True, metavar="DIR")
    g.set_defaults(func=cmd_scenario_gen)

    p = sub.add_parser("selftest", help="run a quick invariant sweep")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SizeLimit, DistributionError, FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
