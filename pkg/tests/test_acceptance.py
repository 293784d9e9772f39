"""Acceptance criteria 1-13 at their stated tolerances and runtime budgets.

Each test records one PASS/FAIL line; the lines are printed in the terminal
summary (and by ``python tests/test_acceptance.py``).
"""

import dataclasses
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mdlcal.audit import audit_envelope, disparity_curve, lipschitz_check, tradeoff_ledger
from mdlcal.decision import induced_rule, threshold_from_costs, verify_avg_optimality, DegenerateCosts
from mdlcal.decomposition import calibration_error, decompose
from mdlcal.dist import FiniteJoint, Predictor, bayes_predictor
from mdlcal.envelopes import ConvexHullEnvelope, CVaREnvelope, DivergenceBallEnvelope
from mdlcal.harness import bundled_config, parse_config, run_scenario
from mdlcal.scoring import BrierLoss, CostMatrix, LogLoss
from mdlcal.solver import (
    SolverOptions,
    entropy_supergradient,
    expected_gen_entropy,
    minimax_game,
    solve_max_entropy,
    verify_saddle,
)

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES, binary_entropy, kl  # noqa: E402

LOG, BRIER = LogLoss(), BrierLoss()
TIGHT = SolverOptions(gap_tol=1e-11)


def record(n: int, ok: bool, elapsed: float, budget: float | None, detail: str) -> None:
    timing = f"{elapsed:.2f}s" + (f" / {budget:g}s" if budget else "")
    ACCEPTANCE_LINES[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail} ({timing})"
    print(ACCEPTANCE_LINES[n])


def check(n, budget, detail, ok, t0):
    elapsed = time.perf_counter() - t0
    within = budget is None or elapsed < budget
    record(n, ok and within, elapsed, budget, detail)
    assert ok, detail
    assert within, f"criterion {n} took {elapsed:.2f}s, budget {budget}s"


def rand_joint(rng, n, m):
    return FiniteJoint(rng.dirichlet(np.ones(n * m)).reshape(n, m))


def test_01_decomposition_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, clipped = 0.0, 0
    for pl in (LOG, BRIER):
        for _ in range(1000):
            n, m = int(rng.integers(1, 9)), int(rng.integers(2, 5))
            d = decompose(rand_joint(rng, n, m), Predictor(rng.dirichlet(np.ones(m), size=n)), pl)
            clipped += d.clip_active
            worst = max(worst, d.identity_residual)
    check(1, 5, f"max |risk - calib - refinement| = {worst:.2e} <= 1e-8, clipped {clipped}",
          worst <= 1e-8 and clipped == 0, t0)


def test_02_bayes_calibration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(500):
        q = rand_joint(rng, int(rng.integers(1, 9)), int(rng.integers(2, 5)))
        h = bayes_predictor(q)
        worst = max(worst, calibration_error(q, h, LOG), calibration_error(q, h, BRIER))
    check(2, 2, f"max Bayes calibration error = {worst:.2e} <= 1e-9", worst <= 1e-9, t0)


def test_03_closed_form_instance():
    t0 = time.perf_counter()
    env = ConvexHullEnvelope([FiniteJoint.bernoulli(0.2), FiniteJoint.bernoulli(0.9)])
    res = solve_max_entropy(env, LOG)
    dv = abs(res.value - math.log(2))
    dc = float(np.abs(res.h_star.table[0] - 0.5).max())
    ok = dv <= 1e-6 and dc <= 1e-5 and res.duality_gap <= 1e-7
    check(3, 1, f"|value - ln2| = {dv:.1e}, |cond - 0.5| = {dc:.1e}, gap = {res.duality_gap:.1e}", ok, t0)


@pytest.fixture(scope="module")
def game_runs():
    """Criterion 4 instances, shared with criterion 5."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    runs = []
    for _ in range(100):
        k, n, m = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(2, 4))
        env = ConvexHullEnvelope([rand_joint(rng, n, m) for _ in range(k)])
        for pl in (LOG, BRIER):
            runs.append((env, pl, solve_max_entropy(env, pl, TIGHT), minimax_game(env, pl, 10_000)))
    return runs, time.perf_counter() - t0


def test_04_solver_cross_validation(game_runs):
    runs, elapsed = game_runs
    t0 = time.perf_counter() - elapsed
    worst = max(abs(fw.value - mw.value) / pl.bound for _, pl, fw, mw in runs)
    check(4, 60, f"max |FW - MW| / M = {worst:.2e} <= 0.02 over {len(runs)} solves", worst <= 0.02, t0)


def test_05_saddle_certificates(game_runs):
    runs, elapsed = game_runs
    t0 = time.perf_counter() - elapsed
    worst = math.inf
    for env, pl, fw, _ in runs:
        cert = verify_saddle(env, fw, pl)
        worst = min(worst, cert.left_slack, cert.right_slack)
    env = ConvexHullEnvelope([FiniteJoint.bernoulli(0.2), FiniteJoint.bernoulli(0.9)])
    res = solve_max_entropy(env, LOG, TIGHT)
    bad = verify_saddle(env, dataclasses.replace(res, h_star=Predictor([[0.6, 0.4]])), LOG)
    ok = worst >= -1e-6 and bad.right_slack < -1e-6 and not bad.passed
    check(5, 60, f"min slack = {worst:.1e} >= -1e-6; corrupted h* right slack = {bad.right_slack:.3f}", ok, t0)


def _envelope(rng, i):
    n, m = int(rng.integers(1, 5)), int(rng.integers(2, 4))
    c = FiniteJoint(rng.dirichlet(2 * np.ones(n * m)).reshape(n, m))
    kind = i % 5
    if kind == 0:
        return ConvexHullEnvelope([rand_joint(rng, n, m) for _ in range(int(rng.integers(1, 6)))])
    if kind == 1:
        return DivergenceBallEnvelope(c, rng.uniform(0.01, 0.3), "kl")
    if kind == 2:
        return DivergenceBallEnvelope(c, rng.uniform(0.01, 0.3), "chi2")
    if kind == 3:
        return DivergenceBallEnvelope(c, rng.uniform(0.01, 0.3), "tv")
    return CVaREnvelope(c, rng.uniform(0.1, 0.9))


@pytest.fixture(scope="module")
def bound_runs():
    """200 envelopes x 5 probes, alternating losses and envelope kinds."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    runs = []
    for i in range(200):
        env = _envelope(rng, i)
        pl = LOG if (i // 5) % 2 == 0 else BRIER
        res = solve_max_entropy(env, pl, TIGHT)
        probes = [env.random_member(rng) for _ in range(4)]
        probes.append(env.extreme_points()[0] if env.extreme_points() else env.linear_oracle(rng.standard_normal(env.shape)))
        runs.append((env, pl, res, probes))
    return runs, time.perf_counter() - t0


def test_06_calibration_bound(bound_runs):
    runs, elapsed = bound_runs
    t0 = time.perf_counter() - elapsed
    worst, pairs = -math.inf, 0
    for env, pl, res, probes in runs:
        for row in audit_envelope(env, res, pl, probes):
            worst = max(worst, row.calibration_error - row.entropy_gap)
            pairs += 1
    env = ConvexHullEnvelope([FiniteJoint.bernoulli(0.2), FiniteJoint.bernoulli(0.9)])
    res = solve_max_entropy(env, LOG, TIGHT)
    tight = audit_envelope(env, res, LOG, [env.vertices[0]])["probe0"]
    want = kl([0.2, 0.8], [0.5, 0.5])
    ok_tight = abs(tight.calibration_error - want) <= 1e-6 and abs(tight.entropy_gap - want) <= 1e-6
    ok = pairs == 1000 and worst <= 1e-8 and ok_tight and abs(want - 0.192745) <= 1e-6
    check(6, 30, f"max (calib - gap) = {worst:.1e} <= 1e-8 over {pairs} pairs; tight instance {tight.calibration_error:.6f}", ok, t0)


def test_07_disparity_limit(bound_runs):
    t0 = time.perf_counter()
    runs, _ = bound_runs
    worst = 0.0
    for env, pl, res, probes in runs[:100]:
        for q in probes:
            worst = max(worst, disparity_curve(q, res, pl).calib_errors[-1])
    env = ConvexHullEnvelope([FiniteJoint.bernoulli(0.2), FiniteJoint.bernoulli(0.9)])
    res = solve_max_entropy(env, LOG, TIGHT)
    c = disparity_curve(env.vertices[0], res, LOG, steps=11)
    strict = all(b < a for a, b in zip(c.calib_errors, c.calib_errors[1:]))
    check(7, 5, f"max endpoint = {worst:.1e} <= 1e-8; Bernoulli segment strictly decreasing: {strict}",
          worst <= 1e-8 and strict and len(c.ts) == 11, t0)


def test_08_tradeoff_ledger(bound_runs):
    t0 = time.perf_counter()
    runs, _ = bound_runs
    worst_ab, worst_id = -math.inf, 0.0
    for _, pl, res, probes in runs:
        for q in probes:
            led = tradeoff_ledger(q, res, pl)
            worst_ab = max(worst_ab, led.a - led.b)
            worst_id = max(worst_id, abs(led.b - led.calib - led.refinement))
    check(8, 30, f"max (a - b) = {worst_ab:.1e} <= 1e-9; max |b - calib - ref| = {worst_id:.1e} <= 1e-8",
          worst_ab <= 1e-9 and worst_id <= 1e-8, t0)


def test_09_average_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    failures = 0
    for _ in range(200):
        groups, m = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        q = rand_joint(rng, groups, m)
        cm = CostMatrix(("a", "b"), rng.uniform(0, 5, size=(2, m)))
        res = verify_avg_optimality(q, bayes_predictor(q), cm)
        assert res.n_rules <= 8
        failures += not res.optimal
    check(9, 10, f"induced rule optimal on {200 - failures}/200 calibrated instances", failures == 0, t0)


def test_10_threshold():
    t0 = time.perf_counter()
    spec = threshold_from_costs(CostMatrix(("test", "no_test"), [[1.0, 0.0], [0.0, 10.0]]))
    worked = abs(spec.odds_threshold - 0.1) <= 1e-12 and abs(spec.forecast_threshold - 1 / 11) <= 1e-12
    rng = np.random.default_rng(10)
    agree = total = 0
    while total < 1000:
        cm = CostMatrix(("a", "b"), rng.uniform(0, 10, size=(2, 2)))
        try:
            s = threshold_from_costs(cm)
        except DegenerateCosts:
            continue
        nu = rng.uniform()
        if abs(nu / (1 - nu) - s.odds_threshold) < 1e-9:
            continue
        f = np.array([1 - nu, nu])
        agree += s.decide(f) == induced_rule(Predictor([f]), cm)(f)
        total += 1
    check(10, 2, f"odds threshold {spec.odds_threshold:g} (nu > 1/11); {agree}/1000 agree with argmin",
          worked and agree == 1000, t0)


def test_11_lipschitz():
    t0 = time.perf_counter()
    ok, worst_margin = True, math.inf
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        center = FiniteJoint(rng.dirichlet(2 * np.ones(6)).reshape(2, 3))
        gaps = []
        for eps in (0.1, 0.05, 0.01):
            rep = lipschitz_check(DivergenceBallEnvelope(center, eps, "kl"), LOG, samples=40, seed=seed)
            ok &= rep.holds
            worst_margin = min(worst_margin, rep.bound_value + 1e-6 - rep.max_gap_observed)
            gaps.append(rep.max_gap_observed)
        ok &= gaps[0] >= gaps[1] >= gaps[2]
    check(11, 20, f"min (kappa*eps + 1e-6 - gap) = {worst_margin:.2e} >= 0; gaps non-increasing", ok, t0)


def test_12_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    step, worst = 1e-5, 0.0
    for i in range(100):
        pl = LOG if i % 2 == 0 else BRIER
        q = FiniteJoint(rng.dirichlet(3 * np.ones(6)).reshape(3, 2))
        d = rand_joint(rng, 3, 2).probs - q.probs
        g = entropy_supergradient(q, pl)
        fd = (expected_gen_entropy(q.with_probs(q.probs + step * d), pl)
              - expected_gen_entropy(q.with_probs(q.probs - step * d), pl)) / (2 * step)
        worst = max(worst, abs(np.sum(g * d) - fd) / abs(fd))
    check(12, 5, f"max relative error vs central differences = {worst:.1e} <= 1e-4", worst <= 1e-4, t0)


def test_13_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = parse_config(bundled_config("healthcare_5050"), seed=13)
    run_scenario(cfg, tmp_path / "a")
    run_scenario(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "manifest.json")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in names)
    check(13, 5, f"{len(names)} output files byte-identical across reruns", same and len(names) >= 7, t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
