"""Per-distribution calibration audits of the max-entropy predictor.

For every probed ``Q`` in an envelope the audit decomposes the risk of
``h*`` under ``Q`` and compares its calibration error with the entropy gap
``F(Q*) - F(Q)``, which bounds it from above.  Also here: calibration along
the segment towards ``Q*``, the minimal-versus-achieved error ledger, an
empirical Lipschitz estimate of entropy against KL on divergence balls, and
temperature scaling as a post-hoc repair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .decomposition import calibration_error, decompose, risk
from .dist import FiniteJoint, Predictor
from .envelopes import DivergenceBallEnvelope, Envelope, divergence
from .scoring import LogLoss, ProperLoss
from .solver import SolveResult, entropy_supergradient, expected_gen_entropy

BOUND_TOL = 1e-8
PROBE_TOL = 1e-6


class ProbeOutsideEnvelope(ValueError):
    pass


class TradeoffViolation(AssertionError):
    pass


@dataclass(frozen=True)
class AuditRow:
    dist_id: str
    risk: float
    calibration_error: float
    refinement: float
    entropy_gap: float
    identity_residual: float
    clip_active: bool = False

    @property
    def bound_satisfied(self) -> bool:
        return self.calibration_error <= self.entropy_gap + BOUND_TOL


@dataclass(frozen=True)
class AuditReport:
    rows: tuple[AuditRow, ...]

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, dist_id: str) -> AuditRow:
        for row in self.rows:
            if row.dist_id == dist_id:
                return row
        raise KeyError(dist_id)

    @property
    def all_bounds_ok(self) -> bool:
        return all(r.bound_satisfied for r in self.rows)

    @property
    def max_residual(self) -> float:
        return max((r.identity_residual for r in self.rows), default=0.0)


def audit_envelope(
    env: Envelope,
    res: SolveResult,
    pl: ProperLoss,
    probes: Sequence[FiniteJoint],
    ids: Sequence[str] | None = None,
) -> AuditReport:
    ids = list(ids) if ids is not None else [f"probe{i}" for i in range(len(probes))]
    if len(ids) != len(probes):
        raise ValueError("need one id per probe")
    rows = []
    for dist_id, q in zip(ids, probes):
        if not env.contains(q, PROBE_TOL):
            raise ProbeOutsideEnvelope(f"probe {dist_id!r} is not in the {env.kind} envelope")
        dec = decompose(q, res.h_star, pl)
        rows.append(
            AuditRow(
                dist_id=dist_id,
                risk=dec.risk,
                calibration_error=dec.calibration_error,
                refinement=dec.refinement,
                entropy_gap=res.value - expected_gen_entropy(q, pl),
                identity_residual=dec.identity_residual,
                clip_active=dec.clip_active,
            )
        )
    return AuditReport(tuple(rows))


@dataclass(frozen=True)
class DisparityCurve:
    ts: tuple[float, ...]
    calib_errors: tuple[float, ...]

    @property
    def monotone_violations(self) -> int:
        e = self.calib_errors
        return sum(1 for a, b in zip(e, e[1:]) if b > a + 1e-12)


def disparity_curve(q: FiniteJoint, res: SolveResult, pl: ProperLoss, steps: int = 11) -> DisparityCurve:
    """Calibration error of ``h*`` on ``(1 - t) Q + t Q*`` for ``t`` in ``[0, 1]``."""
    if steps < 2:
        raise ValueError("steps must be at least 2")
    ts = np.linspace(0.0, 1.0, steps)
    errs = []
    for t in ts:
        qt = q.with_probs((1 - t) * q.probs + t * res.q_star.probs) if t < 1 else res.q_star
        errs.append(calibration_error(qt, res.h_star, pl))
    return DisparityCurve(tuple(float(t) for t in ts), tuple(errs))


@dataclass(frozen=True)
class TradeoffLedger:
    a: float
    b: float
    calib: float
    refinement: float


def tradeoff_ledger(q: FiniteJoint, res: SolveResult, pl: ProperLoss) -> TradeoffLedger:
    """Minimal error ``a = F(Q)`` against achieved error ``b = K(Q, h*)`` split into its parts."""
    a = expected_gen_entropy(q, pl)
    dec = decompose(q, res.h_star, pl)
    led = TradeoffLedger(a=a, b=dec.risk, calib=dec.calibration_error, refinement=dec.refinement)
    if led.a > led.b + 1e-9:
        raise TradeoffViolation(f"minimal error {led.a!r} exceeds achieved error {led.b!r}")
    if not dec.clip_active and dec.identity_residual > BOUND_TOL:
        raise TradeoffViolation(f"risk does not split into calibration + refinement ({dec.identity_residual:.3g})")
    return led


@dataclass(frozen=True)
class LipschitzReport:
    kappa_hat: float
    epsilon: float
    max_gap_observed: float
    n_probes: int

    @property
    def bound_value(self) -> float:
        return self.kappa_hat * self.epsilon

    @property
    def holds(self) -> bool:
        return self.max_gap_observed <= self.bound_value + 1e-6

    def to_dict(self) -> dict:
        return {
            "kappa_hat": self.kappa_hat,
            "epsilon": self.epsilon,
            "max_gap_observed": self.max_gap_observed,
            "bound_value": self.bound_value,
            "n_probes": self.n_probes,
            "holds": self.holds,
        }


def _ball_probes(ball: DivergenceBallEnvelope, pl: ProperLoss, samples: int, rng) -> list[np.ndarray]:
    """Tilts of the center towards seeded directions at a grid of radii.

    The entropy supergradient at the center and its negative lead the
    directions, so the largest and smallest entropies in the ball are probed.
    """
    p = ball.center.probs
    g0 = entropy_supergradient(ball.center, pl)
    radii = ball.epsilon * np.linspace(1.0, 0.1, 4)
    n_dirs = max(2, math.ceil((samples - 1) / len(radii)))
    directions = [g0, -g0] + [rng.standard_normal(p.shape) for _ in range(n_dirs - 2)]
    out = [p]
    for idx in range(samples - 1):
        d = directions[idx // len(radii)]
        r = radii[idx % len(radii)]
        out.append(DivergenceBallEnvelope(ball.center, r, ball.divergence)._oracle(d))
    return out


def lipschitz_check(ball: DivergenceBallEnvelope, pl: ProperLoss, samples: int = 40, seed: int = 0) -> LipschitzReport:
    """Empirical ``kappa`` in ``|F(P) - F(Q)| <= kappa * d(P, Q)`` on a ball.

    ``samples`` members are probed for the largest entropy gap to the
    center; ``kappa_hat`` is the largest ratio of gap to divergence over a
    superset of those probes (the probes plus as many random members).
    """
    if samples < 10:
        raise ValueError("lipschitz_check needs at least 10 samples")
    rng = np.random.default_rng(seed)
    f0 = expected_gen_entropy(ball.center, pl)
    probes = _ball_probes(ball, pl, samples, rng)
    gaps = [abs(expected_gen_entropy(ball.center.with_probs(q), pl) - f0) for q in probes]
    superset = probes + [ball.random_member(rng).probs for _ in range(samples)]
    kappa = 0.0
    for q in superset:
        d = divergence(ball.divergence, ball.center.probs, q)
        if d >= 1e-6 and math.isfinite(d):
            gap = abs(expected_gen_entropy(ball.center.with_probs(q), pl) - f0)
            kappa = max(kappa, gap / d)
    return LipschitzReport(kappa_hat=kappa, epsilon=ball.epsilon, max_gap_observed=max(gaps), n_probes=len(superset))


@dataclass(frozen=True)
class TemperatureFit:
    t_star: float
    repaired: Predictor
    nll_before: float
    nll_after: float


def temperature_scale(h: Predictor, t: float, floor: float = LogLoss().floor) -> Predictor:
    """``softmax(log h / t)`` row by row."""
    logits = np.log(np.maximum(h.table, floor)) / t
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return Predictor(w / w.sum(axis=1, keepdims=True), h.x_space)


def fit_temperature(
    q: FiniteJoint,
    h: Predictor,
    grid: tuple[float, float, int] = (0.05, 20.0, 400),
    pl: LogLoss | None = None,
) -> TemperatureFit:
    """Pick the temperature minimising log-loss risk of ``h`` under ``q``.

    A geometric grid over ``[t_min, t_max]`` is refined by a bounded scalar
    search between the neighbours of the best grid point.  ``t = 1`` (no
    change) is always a candidate, so the fitted risk never exceeds the
    original.
    """
    t_min, t_max, steps = grid
    if t_min <= 0 or t_max < t_min or steps < 2:
        raise ValueError(f"bad temperature grid {grid}")
    pl = pl or LogLoss()

    def nll(t):
        return risk(q, temperature_scale(h, t), pl)

    ts = np.geomspace(t_min, t_max, int(steps))
    vals = np.array([nll(t) for t in ts])
    i = int(np.argmin(vals))
    best_t, best_v = float(ts[i]), float(vals[i])
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
    if hi > lo:
        r = minimize_scalar(nll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        if r.fun < best_v:
            best_t, best_v = float(r.x), float(r.fun)
    before = nll(1.0)
    if before <= best_v:
        best_t, best_v = 1.0, before
    return TemperatureFit(best_t, temperature_scale(h, best_t), before, best_v)
