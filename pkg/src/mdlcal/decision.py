"""Cost-based decisions on forecasts.

A decision rule maps each distinct forecast of a predictor to the action
with the smallest forecast-expected cost.  The checks here enumerate every
deterministic rule over a predictor's forecast groups to confirm that the
induced rule is optimal on average (single distribution, calibrated
predictor) or to measure whether it is optimal in the worst case over an
envelope.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decomposition import calibration_error, forecast_keys, group_by_forecast
from .dist import FiniteJoint, Predictor
from .envelopes import Envelope
from .scoring import BrierLoss, CostMatrix
from .solver import SolveResult

MAX_RULES = 2**20
CALIBRATION_TOL = 1e-9
DECISION_TOL = 1e-9


class TooManyRules(ValueError):
    pass


class NotCalibrated(ValueError):
    pass


class DegenerateCosts(ValueError):
    pass


@dataclass(frozen=True)
class DecisionRule:
    """Explicit forecast-to-action table over a predictor's distinct forecasts."""

    forecasts: np.ndarray
    actions: tuple[int, ...]
    _index: dict = field(repr=False, compare=False)

    @classmethod
    def from_table(cls, forecasts, actions) -> "DecisionRule":
        forecasts = np.asarray(forecasts, dtype=float)
        keys = forecast_keys(forecasts)
        return cls(forecasts, tuple(int(a) for a in actions), dict(zip(keys, range(len(keys)))))

    def __len__(self):
        return len(self.actions)

    def __call__(self, forecast) -> int:
        key = forecast_keys(np.asarray(forecast, dtype=float)[None, :])[0]
        try:
            return self.actions[self._index[key]]
        except KeyError:
            raise KeyError(f"forecast {forecast} is not covered by this rule") from None

    def actions_for(self, h: Predictor) -> np.ndarray:
        return np.array([self(f) for f in h.table])


def _distinct_forecasts(h: Predictor) -> np.ndarray:
    seen, rows = set(), []
    for key, row in zip(forecast_keys(h.table), h.table):
        if key not in seen:
            seen.add(key)
            rows.append(row)
    return np.array(rows)


def induced_rule(h: Predictor, cm: CostMatrix) -> DecisionRule:
    """``forecast -> argmin_a E_{y~forecast} costs[a, y]``, lowest index on ties."""
    if cm.n_labels != h.table.shape[1]:
        raise ValueError("cost matrix and predictor disagree on the number of labels")
    nus = _distinct_forecasts(h)
    exp_cost = nus @ cm.costs.T
    best = exp_cost.min(axis=1, keepdims=True)
    # first action within tolerance of the minimum
    acts = np.argmax(exp_cost <= best + DECISION_TOL * np.maximum(1.0, np.abs(best)), axis=1)
    return DecisionRule.from_table(nus, acts)


@dataclass(frozen=True)
class ThresholdSpec:
    """Binary two-action rule: take ``positive_action`` when the odds cross the threshold.

    With ``above=True`` the positive action is chosen when
    ``nu / (1 - nu) > odds_threshold``; with ``above=False`` when it is below.
    """

    odds_threshold: float
    positive_action: int
    negative_action: int
    positive_label: int = 1
    above: bool = True

    @property
    def forecast_threshold(self) -> float:
        t = self.odds_threshold
        if t < 0:
            return 0.0
        return t / (1.0 + t) if math.isfinite(t) else 1.0

    def decide(self, forecast) -> int:
        nu = float(np.asarray(forecast)[self.positive_label])
        odds = nu / (1.0 - nu) if nu < 1 else math.inf
        hit = odds > self.odds_threshold if self.above else odds < self.odds_threshold
        return self.positive_action if hit else self.negative_action

    def to_dict(self) -> dict:
        return {
            "odds_threshold": self.odds_threshold,
            "forecast_threshold": self.forecast_threshold,
            "positive_action": self.positive_action,
            "negative_action": self.negative_action,
            "positive_label": self.positive_label,
            "direction": "above" if self.above else "below",
        }


def threshold_from_costs(cm: CostMatrix, positive_action: int = 0, positive_label: int = 1) -> ThresholdSpec:
    """Odds threshold ``(c_TN - c_FP) / (c_TP - c_FN)`` of the cost-minimising binary rule.

    ``c_TP`` and ``c_FP`` are the costs of ``positive_action`` on the
    positive and negative label, ``c_FN`` and ``c_TN`` those of the other
    action.  Minimising expected cost picks the positive action when
    ``nu (c_TP - c_FN) < (1 - nu) (c_TN - c_FP)``; dividing by
    ``c_TP - c_FN`` flips the inequality when that difference is negative.
    """
    if cm.costs.shape != (2, 2):
        raise ValueError("threshold rule needs a 2 x 2 cost matrix")
    neg_action, neg_label = 1 - positive_action, 1 - positive_label
    c = cm.costs
    c_tp, c_fp = c[positive_action, positive_label], c[positive_action, neg_label]
    c_fn, c_tn = c[neg_action, positive_label], c[neg_action, neg_label]
    denom = c_tp - c_fn
    if denom == 0:
        raise DegenerateCosts("c_TP equals c_FN; the decision does not threshold on the odds")
    return ThresholdSpec(
        odds_threshold=float((c_tn - c_fp) / denom),
        positive_action=positive_action,
        negative_action=neg_action,
        positive_label=positive_label,
        above=denom < 0,
    )


def average_decision_cost(q: FiniteJoint, h: Predictor, rule: DecisionRule, cm: CostMatrix) -> float:
    """``sum_{x,y} q[x, y] costs[rule(h(x)), y]``."""
    h.check_joint(q)
    acts = rule.actions_for(h)
    return float(np.sum(q.probs * cm.costs[acts]))


def _enumerate_rules(n_groups: int, n_actions: int) -> np.ndarray:
    if n_actions**n_groups > MAX_RULES:
        raise TooManyRules(f"{n_actions}^{n_groups} rules exceed the enumeration limit {MAX_RULES}")
    return np.array(list(itertools.product(range(n_actions), repeat=n_groups)), dtype=np.int64).reshape(
        -1, n_groups
    )


def _rule_costs(group_costs: np.ndarray, rules: np.ndarray) -> np.ndarray:
    """Total cost of each rule; ``group_costs[g, a]`` is group ``g``'s cost under action ``a``."""
    return group_costs[np.arange(group_costs.shape[0]), rules].sum(axis=1)


@dataclass(frozen=True)
class OptimalityResult:
    optimal: bool
    induced_cost: float
    best_cost: float
    n_rules: int
    witness: DecisionRule | None = None


def verify_avg_optimality(
    q: FiniteJoint,
    h: Predictor,
    cm: CostMatrix,
    require_calibrated: bool = True,
) -> OptimalityResult:
    """Compare the induced rule against every deterministic rule on ``q``.

    Raises ``NotCalibrated`` when ``h`` is not canonically calibrated for
    ``q`` (Brier divergence above ``1e-9``) unless ``require_calibrated`` is
    off, in which case the comparison is still made but carries no
    guarantee.
    """
    if require_calibrated:
        err = calibration_error(q, h, BrierLoss())
        if err > CALIBRATION_TOL:
            raise NotCalibrated(f"predictor calibration error {err:.3g} exceeds {CALIBRATION_TOL}")
    groups = group_by_forecast(q, h)
    rule = induced_rule(h, cm)
    # g-by-a cost of each group under each action, mass included
    gc = np.array([g.mass * (cm.costs @ g.conditional) for g in groups]).reshape(len(groups), cm.n_actions)
    rules = _enumerate_rules(len(groups), cm.n_actions)
    totals = _rule_costs(gc, rules)
    induced = np.array([[rule(g.forecast) for g in groups]], dtype=np.int64).reshape(1, len(groups))
    induced_cost = float(_rule_costs(gc, induced)[0])
    j = int(np.argmin(totals))
    best = float(totals[j])
    optimal = induced_cost <= best + DECISION_TOL
    witness = None
    if not optimal:
        witness = DecisionRule.from_table([g.forecast for g in groups], rules[j])
    return OptimalityResult(optimal, induced_cost, best, len(rules), witness)


@dataclass(frozen=True)
class WorstCaseReport:
    """Measurements behind ``verify_worstcase_optimality``.

    ``cost_entropies`` holds ``min_rule E_Q[cost]`` per distribution (``Q*``
    first).  ``qstar_cost`` is the induced rule's average cost under ``Q*``
    and ``maxmin_cost`` the largest cost entropy among the distributions;
    they coincide whenever ``Q*`` is the maximiser.
    """

    ids: tuple[str, ...]
    cost_entropies: tuple[float, ...]
    induced_costs: tuple[float, ...]
    qstar_cost: float
    maxmin_cost: float
    induced_worst: float
    best_worst: float
    n_rules: int
    best_rule: DecisionRule

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "cost_entropies": list(self.cost_entropies),
            "induced_costs": list(self.induced_costs),
            "qstar_cost": self.qstar_cost,
            "maxmin_cost": self.maxmin_cost,
            "induced_worst": self.induced_worst,
            "best_worst": self.best_worst,
            "n_rules": self.n_rules,
            "best_rule_actions": list(self.best_rule.actions),
        }


def verify_worstcase_optimality(
    env: Envelope,
    res: SolveResult,
    cm: CostMatrix,
    probes: Sequence[FiniteJoint],
    ids: Sequence[str] | None = None,
    tol: float = 1e-6,
) -> tuple[bool, bool, WorstCaseReport]:
    """Measure the premise and the conclusion of worst-case decision optimality.

    Step one checks whether ``Q*`` has the largest cost entropy
    ``min_rule E_Q[cost(rule(h*(x)), y)]`` among ``Q*`` and the probes (the
    consistency premise).  Step two enumerates every deterministic rule over
    the distinct forecasts of ``h*`` and checks that none has a worst-case
    average cost over the same distributions below the induced rule's by
    more than ``tol``.  ``optimal`` is only reported as true when the
    premise holds.
    """
    h = res.h_star
    dists = [res.q_star] + list(probes)
    ids = ["q_star"] + (list(ids) if ids is not None else [f"probe{i}" for i in range(len(probes))])
    for q in probes:
        if not env.contains(q, 1e-6):
            raise ValueError("probe is not a member of the envelope")
    nus = _distinct_forecasts(h)
    keys = forecast_keys(nus)
    slot = dict(zip(keys, range(len(keys))))
    member = np.array([slot[k] for k in forecast_keys(h.table)])
    rules = _enumerate_rules(len(nus), cm.n_actions)
    rule = induced_rule(h, cm)
    induced = np.array([[rule(nu) for nu in nus]], dtype=np.int64)

    # per distribution: forecast-group by action costs
    per_q = []
    for q in dists:
        gc = np.zeros((len(nus), cm.n_actions))
        np.add.at(gc, member, q.probs @ cm.costs.T)
        per_q.append(gc)
    all_costs = np.stack([_rule_costs(gc, rules) for gc in per_q])  # (n_dists, n_rules)
    induced_costs = np.array([_rule_costs(gc, induced)[0] for gc in per_q])
    cost_entropy = all_costs.min(axis=1)
    consistent = bool(cost_entropy[0] >= cost_entropy.max() - tol)

    worst = all_costs.max(axis=0)
    j = int(np.argmin(worst))
    induced_worst = float(induced_costs.max())
    optimal = consistent and induced_worst <= float(worst[j]) + tol
    report = WorstCaseReport(
        ids=tuple(ids),
        cost_entropies=tuple(float(c) for c in cost_entropy),
        induced_costs=tuple(float(c) for c in induced_costs),
        qstar_cost=float(induced_costs[0]),
        maxmin_cost=float(cost_entropy.max()),
        induced_worst=induced_worst,
        best_worst=float(worst[j]),
        n_rules=len(rules),
        best_rule=DecisionRule.from_table(nus, rules[j]),
    )
    return consistent, optimal, report
