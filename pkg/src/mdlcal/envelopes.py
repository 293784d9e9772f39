"""Compact convex sets of joint distributions.

Every envelope offers membership testing and a linear maximisation oracle
``argmax_{Q in env} <g, Q>``; the max-entropy solver only talks to those two.
Oracles work on raw ``(n, m)`` arrays (``_oracle``) for speed, with a
``FiniteJoint`` wrapper on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .dist import FiniteJoint, Predictor, SpaceMismatch, bayes_predictor, conditionals

BISECTION_ITERS = 200
RADIUS_TOL = 1e-10
HULL_TOL = 1e-7
DIVERGENCES = ("kl", "chi2", "tv")


class BisectionFailure(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3g})")
        self.residual = residual


def divergence(kind: str, p, q) -> float:
    """Divergence of ``q`` from the reference ``p``.

    ``kl`` is ``KL(q || p)``, ``chi2`` is ``sum (q - p)^2 / p`` and ``tv`` is
    half the L1 distance.  KL and chi2 return ``inf`` when ``q`` puts mass
    where ``p`` has none.
    """
    p = np.asarray(getattr(p, "probs", p), dtype=float).ravel()
    q = np.asarray(getattr(q, "probs", q), dtype=float).ravel()
    if p.shape != q.shape:
        raise SpaceMismatch(f"divergence between shapes {p.shape} and {q.shape}")
    if kind == "tv":
        return 0.5 * float(np.abs(q - p).sum())
    off_support = (p <= 0) & (q > 0)
    if np.any(off_support):
        return math.inf
    s = p > 0
    if kind == "kl":
        qs, ps = q[s], p[s]
        pos = qs > 0
        return max(0.0, float(np.sum(qs[pos] * np.log(qs[pos] / ps[pos]))))
    if kind == "chi2":
        return float(np.sum((q[s] - p[s]) ** 2 / p[s]))
    raise ValueError(f"unknown divergence {kind!r}; expected one of {DIVERGENCES}")


class Envelope:
    """Interface shared by all distribution sets."""

    kind = "envelope"
    polyhedral = False

    @property
    def reference(self) -> FiniteJoint:
        raise NotImplementedError

    @property
    def shape(self) -> tuple[int, int]:
        return self.reference.shape

    def anchor(self) -> np.ndarray:
        """A member of the set, used as the solver's starting point."""
        return self.reference.probs

    def extreme_points(self) -> list[FiniteJoint]:
        return []

    def contains(self, q: FiniteJoint, tol: float = 1e-6) -> bool:
        self.reference.check_spaces(q)
        return self._contains(q.probs, tol)

    def _contains(self, probs: np.ndarray, tol: float) -> bool:
        raise NotImplementedError

    def linear_oracle(self, g) -> FiniteJoint:
        g = np.asarray(g, dtype=float)
        if g.shape != self.shape or not np.all(np.isfinite(g)):
            raise ValueError(f"gradient must be a finite {self.shape} table")
        return self.reference.with_probs(self._oracle(g))

    def _oracle(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def random_member(self, rng: np.random.Generator) -> FiniteJoint:
        direction = rng.standard_normal(self.shape)
        t = rng.uniform()
        probs = (1 - t) * self.anchor() + t * self._oracle(direction)
        return self.reference.with_probs(probs)


class ConvexHullEnvelope(Envelope):
    """``conv{Q_1, ..., Q_k}`` over a shared space."""

    kind = "hull"
    polyhedral = True

    def __init__(self, vertices: Sequence[FiniteJoint], ids: Sequence[str] | None = None):
        vertices = list(vertices)
        if not vertices:
            raise ValueError("a hull needs at least one vertex")
        for v in vertices[1:]:
            vertices[0].check_spaces(v)
        self.vertices = tuple(vertices)
        self.ids = tuple(ids) if ids is not None else tuple(f"v{i}" for i in range(len(vertices)))
        if len(self.ids) != len(self.vertices):
            raise ValueError("need one id per vertex")
        self._stack = np.stack([v.probs for v in vertices])
        self._stack.setflags(write=False)

    def __len__(self):
        return len(self.vertices)

    @property
    def reference(self):
        return self.vertices[0]

    @property
    def stack(self) -> np.ndarray:
        """Vertices as a ``(k, n, m)`` array."""
        return self._stack

    def anchor(self):
        return self._stack.mean(axis=0)

    def extreme_points(self):
        return list(self.vertices)

    def weights_for(self, probs: np.ndarray) -> tuple[np.ndarray, float]:
        """Simplex weights minimising the max-abs reconstruction error."""
        k = len(self.vertices)
        a = self._stack.reshape(k, -1).T
        d = a.shape[0]
        # variables: k weights then the residual bound t; minimise t
        c = np.zeros(k + 1)
        c[-1] = 1.0
        ones = np.ones((d, 1))
        a_ub = np.vstack([np.hstack([a, -ones]), np.hstack([-a, -ones])])
        b_ub = np.concatenate([probs.ravel(), -probs.ravel()])
        a_eq = np.append(np.ones(k), 0.0)[None, :]
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                      bounds=[(0, None)] * (k + 1), method="highs")
        if not res.success:
            return np.full(k, 1.0 / k), math.inf
        w = np.clip(res.x[:k], 0.0, None)
        w /= w.sum()
        resid = float(np.abs(np.tensordot(w, self._stack, axes=1) - probs).max())
        return w, resid

    def _contains(self, probs, tol):
        _, resid = self.weights_for(probs)
        return resid <= max(tol, HULL_TOL)

    def _oracle(self, g):
        scores = np.tensordot(self._stack, g, axes=([1, 2], [0, 1]))
        return self._stack[int(np.argmax(scores))]

    def best_vertex(self, g) -> int:
        scores = np.tensordot(self._stack, np.asarray(g, dtype=float), axes=([1, 2], [0, 1]))
        return int(np.argmax(scores))

    def random_member(self, rng):
        w = rng.dirichlet(np.ones(len(self.vertices)))
        return self.reference.with_probs(np.tensordot(w, self._stack, axes=1))


class DivergenceBallEnvelope(Envelope):
    """``{Q : d(center, Q) <= epsilon}`` for ``d`` in KL, chi2 or TV."""

    polyhedral = False

    def __init__(self, center: FiniteJoint, epsilon: float, divergence: str = "kl"):
        if divergence not in DIVERGENCES:
            raise ValueError(f"unknown divergence {divergence!r}")
        if not epsilon >= 0:
            raise ValueError(f"ball radius must be non-negative, got {epsilon}")
        self.center = center
        self.epsilon = float(epsilon)
        self.divergence = divergence
        self.kind = f"{divergence}_ball"
        self.polyhedral = divergence == "tv"

    @property
    def reference(self):
        return self.center

    def _contains(self, probs, tol):
        if np.any(probs < -tol) or abs(probs.sum() - 1) > tol:
            return False
        return divergence(self.divergence, self.center.probs, probs) <= self.epsilon + tol

    def _oracle(self, g):
        p = self.center.probs
        if self.epsilon == 0:
            return p
        if self.divergence == "kl":
            return kl_tilt(p, g, self.epsilon)
        if self.divergence == "chi2":
            return chi2_tilt(p, g, self.epsilon)
        return tv_transport(p, g, self.epsilon)


class CVaREnvelope(Envelope):
    """Reweightings ``w * base`` with ``0 <= w <= 1/(1 - alpha)``."""

    kind = "cvar"
    polyhedral = True

    def __init__(self, base: FiniteJoint, alpha: float):
        if not 0 <= alpha < 1:
            raise ValueError(f"CVaR level must lie in [0, 1), got {alpha}")
        self.base = base
        self.alpha = float(alpha)

    @property
    def reference(self):
        return self.base

    @property
    def cap(self) -> float:
        return 1.0 / (1.0 - self.alpha)

    def _contains(self, probs, tol):
        p = self.base.probs
        if np.any(probs < -tol) or abs(probs.sum() - 1) > tol:
            return False
        if np.any(probs[p <= 0] > tol):
            return False
        pos = p > 0
        return bool(np.all(probs[pos] / p[pos] <= self.cap + tol))

    def _oracle(self, g):
        return capped_fill(self.base.probs, g, self.cap)


# -- oracle kernels ---------------------------------------------------------

def _kl_of_tilt(ps, gs, beta):
    logits = beta * gs
    logits -= logits.max()
    w = ps * np.exp(logits)
    z = w.sum()
    qs = w / z
    pos = qs > 0
    kl = float(np.sum(qs[pos] * (np.log(qs[pos]) - np.log(ps[pos]))))
    return qs, max(kl, 0.0)


def kl_tilt(p: np.ndarray, g: np.ndarray, eps: float) -> np.ndarray:
    """Maximiser of ``<g, Q>`` over ``KL(Q || p) <= eps``.

    The solution is the exponential tilt ``Q ~ p * exp(beta * g)`` with
    ``beta`` set by bisection so that the constraint is tight, or the
    renormalised restriction of ``p`` to the argmax cells when that already
    fits inside the ball.
    """
    shape = p.shape
    p = p.ravel()
    g = g.ravel()
    s = p > 0
    ps, gs = p[s], g[s]
    gs = gs - gs.max()
    out = np.zeros_like(p)
    spread = -gs.min()
    if eps <= 0 or spread <= 0:
        return p.reshape(shape)
    top = gs == 0
    if -math.log(ps[top].sum()) <= eps:
        out[np.flatnonzero(s)[top]] = ps[top] / ps[top].sum()
        return out.reshape(shape)
    lo, hi = 0.0, 1.0 / spread
    qs_lo = ps
    for _ in range(2000):
        qs, kl = _kl_of_tilt(ps, gs, hi)
        if kl > eps:
            break
        lo, qs_lo = hi, qs
        hi *= 2.0
    resid = eps - divergence("kl", ps, qs_lo)
    for _ in range(BISECTION_ITERS):
        if resid <= RADIUS_TOL:
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        qs, kl = _kl_of_tilt(ps, gs, mid)
        if kl <= eps:
            lo, qs_lo, resid = mid, qs, eps - kl
        else:
            hi = mid
    else:
        if resid > RADIUS_TOL:
            raise BisectionFailure("KL tilt did not reach the ball radius", resid)
    out[s] = qs_lo
    return out.reshape(shape)


def _chi2_direction(ps, gs, scale):
    """``u = max(-1, scale * (g - nu))`` with ``nu`` chosen so ``<p, u> = 0``."""
    order = np.argsort(gs)
    g_sorted, p_sorted = gs[order], ps[order]
    t = 1.0 / scale
    clamped_mass = 0.0
    nu = float(np.dot(ps, gs))
    for k in range(len(gs)):
        rest = p_sorted[k:].sum()
        nu = (np.dot(p_sorted[k:], g_sorted[k:]) - t * clamped_mass) / rest
        if g_sorted[k] - nu >= -t:
            break
        clamped_mass += p_sorted[k]
    return np.maximum(-1.0, scale * (gs - nu))


def chi2_tilt(p: np.ndarray, g: np.ndarray, eps: float) -> np.ndarray:
    """Maximiser of ``<g, Q>`` over ``chi2(Q || p) <= eps``.

    Writing ``Q = p (1 + u)``, stationarity gives ``u = max(-1, s (g - nu))``;
    the scale ``s`` is bisected until ``sum p u^2`` meets the radius.
    """
    shape = p.shape
    p = p.ravel()
    g = g.ravel()
    s = p > 0
    ps, gs = p[s], g[s] - g[s].max()
    out = np.zeros_like(p)
    spread = -gs.min()
    if eps <= 0 or spread <= 0:
        return p.reshape(shape)
    top = gs == 0
    if 1.0 / ps[top].sum() - 1.0 <= eps:
        out[np.flatnonzero(s)[top]] = ps[top] / ps[top].sum()
        return out.reshape(shape)

    def radius(scale):
        u = _chi2_direction(ps, gs, scale)
        return u, float(np.dot(ps, u * u))

    lo, hi = 0.0, 1.0 / spread
    u_lo = np.zeros_like(ps)
    for _ in range(2000):
        u, r = radius(hi)
        if r > eps:
            break
        lo, u_lo = hi, u
        hi *= 2.0
    resid = eps - float(np.dot(ps, u_lo * u_lo))
    for _ in range(BISECTION_ITERS):
        if resid <= RADIUS_TOL:
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        u, r = radius(mid)
        if r <= eps:
            lo, u_lo, resid = mid, u, eps - r
        else:
            hi = mid
    else:
        if resid > RADIUS_TOL:
            raise BisectionFailure("chi2 scaling did not reach the ball radius", resid)
    qs = np.clip(ps * (1.0 + u_lo), 0.0, None)
    out[s] = qs / qs.sum()
    return out.reshape(shape)


def tv_transport(p: np.ndarray, g: np.ndarray, eps: float) -> np.ndarray:
    """Move up to ``eps`` mass from the lowest-``g`` cells onto the best cell."""
    shape = p.shape
    p = p.ravel().copy()
    g = g.ravel()
    best = int(np.argmax(g))
    budget = min(eps, 1.0 - p[best])
    for i in np.argsort(g, kind="stable"):
        if budget <= 0 or g[i] >= g[best]:
            break
        take = min(p[i], budget)
        p[i] -= take
        p[best] += take
        budget -= take
    return p.reshape(shape)


def capped_fill(p: np.ndarray, g: np.ndarray, cap: float) -> np.ndarray:
    """Fill cells in decreasing ``g`` order at ``cap * p`` until mass one."""
    shape = p.shape
    p = p.ravel()
    g = g.ravel()
    out = np.zeros_like(p)
    left = 1.0
    for i in np.argsort(-g, kind="stable"):
        if left <= 0:
            break
        take = min(cap * p[i], left)
        out[i] = take
        left -= take
    return (out / out.sum()).reshape(shape)


# -- generalized Bayes rule -------------------------------------------------

@dataclass(frozen=True)
class GeneralizedBayesRule:
    conditionals: tuple[tuple[str, Predictor], ...]
    scores: tuple[float, ...]


def generalized_bayes_rule(env: ConvexHullEnvelope, pl) -> GeneralizedBayesRule:
    """Per-vertex Bayes predictors and their expected generalized entropies."""
    preds, scores = [], []
    for vid, v in zip(env.ids, env.vertices):
        preds.append((vid, bayes_predictor(v)))
        mass = v.probs.sum(axis=1)
        scores.append(float(np.dot(mass, pl.entropy(conditionals(v.probs)))))
    return GeneralizedBayesRule(tuple(preds), tuple(scores))


def make_envelope(spec: dict, load_joint) -> Envelope:
    """Build an envelope from a config mapping.

    ``load_joint`` turns an inline dict or a file reference into a
    ``FiniteJoint``.
    """
    kind = spec.get("kind")
    if kind == "hull":
        verts = spec.get("vertices")
        if not verts:
            raise ValueError("hull envelope needs a non-empty 'vertices' list")
        ids = spec.get("ids")
        return ConvexHullEnvelope([load_joint(v) for v in verts], ids)
    if kind in ("kl_ball", "chi2_ball", "tv_ball"):
        if "center" not in spec or "epsilon" not in spec:
            raise ValueError(f"{kind} envelope needs 'center' and 'epsilon'")
        return DivergenceBallEnvelope(load_joint(spec["center"]), float(spec["epsilon"]), kind[:-5])
    if kind == "cvar":
        if "base" not in spec or "alpha" not in spec:
            raise ValueError("cvar envelope needs 'base' and 'alpha'")
        return CVaREnvelope(load_joint(spec["base"]), float(spec["alpha"]))
    raise ValueError(f"unknown envelope kind {kind!r}")
