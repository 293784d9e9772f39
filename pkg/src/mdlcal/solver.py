"""Maximum expected generalized entropy over an envelope.

The objective ``F(Q) = sum_x Q(x) H(Q(.|x))`` is concave, and by propriety
its supergradient at ``Q`` is the loss table of ``Q``'s own Bayes predictor,
``g[x, y] = loss(y, Q(y|x))``.  ``solve_max_entropy`` runs Frank-Wolfe on it
(with away steps on polyhedral envelopes) and ``minimax_game`` solves the
same problem on hulls as a nature-versus-learner game with multiplicative
weights.  ``verify_saddle`` checks the resulting pair numerically.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .dist import FiniteJoint, Predictor, bayes_predictor, conditionals, marginal_x
from .envelopes import ConvexHullEnvelope, Envelope
from .scoring import ProperLoss

log = logging.getLogger(__name__)

SADDLE_TOL = 1e-6
ASCENT_TOL = 1e-10


class NotConverged(UserWarning):
    """Frank-Wolfe stopped at ``max_iters`` with the gap above tolerance."""


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-7
    max_iters: int = 10_000
    rounds: int = 10_000
    seed: int = 0
    line_search: bool = True
    away_steps: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.gap_tol < 0:
            raise ValueError("gap_tol must be non-negative")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverOptions":
        d = dict(d or {})
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True)
class SolveResult:
    q_star: FiniteJoint
    h_star: Predictor
    value: float
    iterations: int
    duality_gap: float
    trace: tuple[float, ...]
    converged: bool = True
    method: str = "frank_wolfe"
    weights: np.ndarray | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "value": self.value,
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "q_star": self.q_star.to_dict(),
            "h_star": self.h_star.to_dict(self.q_star.y_space.labels),
            "trace": list(self.trace),
        }
        if self.weights is not None:
            d["weights"] = self.weights.tolist()
        return d


# -- objective ----------------------------------------------------------------

def _objective(probs: np.ndarray, pl: ProperLoss) -> float:
    return float(np.dot(probs.sum(axis=1), pl.entropy(conditionals(probs))))


def _supergradient(probs: np.ndarray, pl: ProperLoss) -> np.ndarray:
    return pl.losses(conditionals(probs))


def expected_gen_entropy(q: FiniteJoint, pl: ProperLoss) -> float:
    """``E_Q[H(Q(y|x))]``, the Bayes risk of ``Q`` under ``pl``."""
    return _objective(q.probs, pl)


def entropy_supergradient(q: FiniteJoint, pl: ProperLoss) -> np.ndarray:
    """``g[x, y] = loss(y, Q(y|x))``; zero-mass rows use the label marginal."""
    return _supergradient(q.probs, pl)


# -- Frank-Wolfe ----------------------------------------------------------------

def _line_search(q, d, gmax, pl, fq):
    """Exact step on the concave segment ``F(q + t d)``, ``t in [0, gmax]``."""

    def slope(t):
        p = q + t * d
        return float(np.sum(_supergradient(p, pl) * d))

    s0 = slope(0.0)
    if s0 <= 0:
        return 0.0
    if slope(gmax) >= 0:
        t = gmax
    else:
        t = brentq(slope, 0.0, gmax, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    # guard against a slope jump at the root (clip or zero-mass boundary)
    if _objective(q + t * d, pl) < fq - ASCENT_TOL:
        return 0.0
    return t


class _ActiveSet:
    """Convex weights over atoms returned by the linear oracle."""

    def __init__(self):
        self.keys: list = []
        self.atoms: list[np.ndarray] = []
        self.alpha: list[float] = []

    def add(self, key, atom, weight=0.0):
        if key in self.keys:
            return self.keys.index(key)
        self.keys.append(key)
        self.atoms.append(atom)
        self.alpha.append(weight)
        return len(self.keys) - 1

    def point(self) -> np.ndarray:
        return np.tensordot(np.array(self.alpha), np.stack(self.atoms), axes=1)

    def fw_update(self, idx, gamma):
        self.alpha = [(1 - gamma) * a for a in self.alpha]
        self.alpha[idx] += gamma
        self._prune()

    def away_update(self, idx, gamma):
        self.alpha = [(1 + gamma) * a for a in self.alpha]
        self.alpha[idx] -= gamma
        self._prune()

    def _prune(self):
        keep = [i for i, a in enumerate(self.alpha) if a > 1e-15]
        total = sum(self.alpha[i] for i in keep)
        self.keys = [self.keys[i] for i in keep]
        self.atoms = [self.atoms[i] for i in keep]
        self.alpha = [self.alpha[i] / total for i in keep]


def _oracle_key(env, g, s):
    if isinstance(env, ConvexHullEnvelope):
        return ("v", env.best_vertex(g))
    return ("a", s.tobytes())


def solve_max_entropy(env: Envelope, pl: ProperLoss, opts: SolverOptions | None = None) -> SolveResult:
    """Find ``Q* = argmax_{Q in env} E_Q[H(Q(y|x))]`` by Frank-Wolfe.

    Stops once the Frank-Wolfe gap ``<g, s - q>`` (an upper bound on the
    suboptimality, by concavity) drops to ``opts.gap_tol``.  When
    ``max_iters`` runs out the best iterate is returned with
    ``converged=False`` and a ``NotConverged`` warning.
    """
    opts = opts or SolverOptions()
    use_away = opts.away_steps and opts.line_search and env.polyhedral
    active = _ActiveSet()
    if isinstance(env, ConvexHullEnvelope):
        for i, v in enumerate(env.stack):
            active.add(("v", i), v, 1.0 / len(env))
    else:
        active.add(("anchor",), np.array(env.anchor()), 1.0)
    q = active.point()
    fq = _objective(q, pl)
    trace = [fq]
    gap = math.inf
    it = 0
    for it in range(1, opts.max_iters + 1):
        g = _supergradient(q, pl)
        s = env._oracle(g)
        gap = float(np.sum(g * (s - q)))
        if gap <= opts.gap_tol:
            it -= 1
            break
        if use_away:
            scores = [float(np.sum(g * a)) for a in active.atoms]
            j = int(np.argmin(scores))
            away_gap = float(np.sum(g * q)) - scores[j]
            if gap >= away_gap or len(active.atoms) == 1:
                idx = active.add(_oracle_key(env, g, s), s)
                d = s - q
                t = _line_search(q, d, 1.0, pl, fq)
                active.fw_update(idx, t)
            else:
                a_j = active.alpha[j]
                d = q - active.atoms[j]
                tmax = a_j / (1.0 - a_j)
                t = _line_search(q, d, tmax, pl, fq)
                active.away_update(j, t)
            q_new = active.point()
        else:
            d = s - q
            if opts.line_search:
                t = _line_search(q, d, 1.0, pl, fq)
            else:
                t = 2.0 / (it + 2.0)
                while t > 1e-12 and _objective(q + t * d, pl) < fq - ASCENT_TOL:
                    t *= 0.5
            q_new = q + t * d
        f_new = _objective(q_new, pl)
        if f_new < fq - ASCENT_TOL or t == 0.0:
            log.debug("Frank-Wolfe stalled at iteration %d (gap %.3g)", it, gap)
            break
        q, fq = q_new, f_new
        trace.append(fq)
    else:
        # the loop ran out before the last gap check on the final iterate
        g = _supergradient(q, pl)
        gap = float(np.sum(g * (env._oracle(g) - q)))
    converged = gap <= opts.gap_tol
    if not converged:
        warnings.warn(
            f"Frank-Wolfe stopped after {it} iterations with gap {gap:.3g} > {opts.gap_tol:.3g}",
            NotConverged,
            stacklevel=2,
        )
    q_star = env.reference.with_probs(q)
    weights = None
    if isinstance(env, ConvexHullEnvelope) and use_away:
        weights = np.zeros(len(env))
        for key, a in zip(active.keys, active.alpha):
            weights[key[1]] += a
    return SolveResult(
        q_star=q_star,
        h_star=bayes_predictor(q_star),
        value=expected_gen_entropy(q_star, pl),
        iterations=it,
        duality_gap=max(gap, 0.0),
        trace=tuple(trace),
        converged=converged,
        weights=weights,
    )


# -- zero-sum game ------------------------------------------------------------

def minimax_game(env: ConvexHullEnvelope, pl: ProperLoss, rounds: int = 10_000) -> SolveResult:
    """Nature runs multiplicative weights over hull vertices; the learner best-responds.

    The learner's best response to a mixture is its Bayes predictor, so each
    round costs one conditional table and ``k`` risks.  The time-averaged
    mixture is returned as ``q_star``; its value is within the Hedge regret
    ``M * sqrt(log(k) / (2 * rounds))`` of the max-entropy value.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    k = len(env)
    flat = env.stack.reshape(k, -1)
    shape = env.shape
    w = np.full(k, 1.0 / k)
    w_sum = np.zeros(k)
    scale = pl.bound if pl.bound > 0 else 1.0
    eta = math.sqrt(8.0 * math.log(k) / rounds) if k > 1 else 0.0
    trace = []
    every = max(1, rounds // 100)
    for t in range(rounds):
        w_sum += w
        q = (w @ flat).reshape(shape)
        losses = pl.losses(conditionals(q)).ravel()
        r = flat @ losses
        w = w * np.exp(eta * (r - r.max()) / scale)
        w /= w.sum()
        if (t + 1) % every == 0 or t + 1 == rounds:
            trace.append(_objective(((w_sum / (t + 1)) @ flat).reshape(shape), pl))
    w_bar = w_sum / rounds
    q_bar = (w_bar @ flat).reshape(shape)
    q_star = env.reference.with_probs(q_bar)
    value = expected_gen_entropy(q_star, pl)
    g = _supergradient(q_star.probs, pl)
    gap = float(np.max(np.tensordot(env.stack, g, axes=([1, 2], [0, 1]))) - np.sum(g * q_star.probs))
    return SolveResult(
        q_star=q_star,
        h_star=bayes_predictor(q_star),
        value=value,
        iterations=rounds,
        duality_gap=max(gap, 0.0),
        trace=tuple(trace),
        converged=True,
        method="multiplicative_weights",
        weights=w_bar,
    )


# -- saddle certificate ---------------------------------------------------------

@dataclass(frozen=True)
class SaddleCertificate:
    """Slacks of ``K(Q, h*) <= K(Q*, h*) <= K(Q*, h)`` over the tested points."""

    left_slack: float
    right_slack: float
    q_witness: FiniteJoint
    h_witness: Predictor
    tol: float = SADDLE_TOL

    @property
    def passed(self) -> bool:
        return self.left_slack >= -self.tol and self.right_slack >= -self.tol

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "left_slack": self.left_slack,
            "right_slack": self.right_slack,
            "q_witness": self.q_witness.to_dict(),
            "h_witness": self.h_witness.to_dict(),
        }


def verify_saddle(
    env: Envelope,
    res: SolveResult,
    pl: ProperLoss,
    probes: int = 50,
    seed: int = 0,
) -> SaddleCertificate:
    """Check both saddle inequalities for ``(res.q_star, res.h_star)``.

    Nature's side is tested on the extreme points, on the envelope's
    worst case for ``h*`` (one linear-oracle call, since ``K(., h*)`` is
    linear) and on ``probes`` random members.  The learner's side is tested
    on the Bayes predictor of ``Q*``, each extreme point's Bayes predictor and
    ``probes`` random predictors.
    """
    rng = np.random.default_rng(seed)
    q_star = res.q_star
    loss_star = pl.losses(res.h_star.table)
    k_star = float(np.sum(q_star.probs * loss_star))

    qs = list(env.extreme_points())
    qs.append(env.linear_oracle(loss_star))
    qs.extend(env.random_member(rng) for _ in range(probes))
    left = [k_star - float(np.sum(q.probs * loss_star)) for q in qs]
    j = int(np.argmin(left))

    n, m = q_star.shape
    hs = [bayes_predictor(q_star)]
    hs.extend(bayes_predictor(v) for v in env.extreme_points())
    hs.extend(Predictor(rng.dirichlet(np.ones(m), size=n), q_star.x_space) for _ in range(probes))
    right = [float(np.sum(q_star.probs * pl.losses(h.table))) - k_star for h in hs]
    i = int(np.argmin(right))
    return SaddleCertificate(left[j], right[i], qs[j], hs[i])
