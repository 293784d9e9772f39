"""Calibration-refinement decomposition of proper-scoring risk.

Features are grouped by the forecast the predictor issues for them; the
label distribution inside a group is the mass-weighted average of the
per-feature conditionals.  For a proper loss the risk then splits exactly
into ``sum_g mass_g * d(cond_g, nu_g)`` (calibration error) plus
``sum_g mass_g * H(cond_g)`` (refinement).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import FiniteJoint, Predictor
from .scoring import ProperLoss

QUANTUM = 1e-9


@dataclass(frozen=True)
class ForecastGroup:
    forecast: np.ndarray
    members: tuple[int, ...]
    mass: float
    conditional: np.ndarray


@dataclass(frozen=True)
class ForecastGrouping:
    groups: tuple[ForecastGroup, ...]

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    @property
    def masses(self) -> np.ndarray:
        return np.array([g.mass for g in self.groups])

    @property
    def forecasts(self) -> np.ndarray:
        return np.array([g.forecast for g in self.groups])

    @property
    def conditionals(self) -> np.ndarray:
        return np.array([g.conditional for g in self.groups])


@dataclass(frozen=True)
class Decomposition:
    risk: float
    calibration_error: float
    refinement: float
    clip_active: bool = False

    @property
    def identity_residual(self) -> float:
        return abs(self.risk - self.calibration_error - self.refinement)


def forecast_keys(table: np.ndarray) -> list[bytes]:
    """Hashable keys for forecast rows, quantised to ``QUANTUM``."""
    q = np.round(np.asarray(table, dtype=float) / QUANTUM).astype(np.int64)
    return [row.tobytes() for row in q]


def group_by_forecast(q: FiniteJoint, h: Predictor) -> ForecastGrouping:
    """Merge positive-mass features that receive the same forecast.

    Groups are ordered by first appearance in the feature order, and the
    representative forecast of a group is that of its first member.
    """
    h.check_joint(q)
    mass = q.probs.sum(axis=1)
    order: dict[bytes, list[int]] = {}
    for i, key in enumerate(forecast_keys(h.table)):
        if mass[i] > 0:
            order.setdefault(key, []).append(i)
    groups = []
    for members in order.values():
        rows = q.probs[members]
        g_mass = float(rows.sum())
        groups.append(
            ForecastGroup(
                forecast=h.table[members[0]],
                members=tuple(members),
                mass=g_mass,
                conditional=rows.sum(axis=0) / g_mass,
            )
        )
    return ForecastGrouping(tuple(groups))


def risk(q: FiniteJoint, h: Predictor, pl: ProperLoss) -> float:
    """Expected loss ``sum_{x,y} q[x,y] * loss(y, h(x))``."""
    h.check_joint(q)
    return float(np.sum(q.probs * pl.losses(h.table)))


def calibration_error(q: FiniteJoint, h: Predictor, pl: ProperLoss) -> float:
    g = group_by_forecast(q, h)
    if not len(g):
        return 0.0
    return float(np.dot(g.masses, pl.bregman(g.conditionals, g.forecasts)))


def refinement(q: FiniteJoint, h: Predictor, pl: ProperLoss) -> float:
    g = group_by_forecast(q, h)
    if not len(g):
        return 0.0
    return float(np.dot(g.masses, pl.entropy(g.conditionals)))


def decompose(q: FiniteJoint, h: Predictor, pl: ProperLoss) -> Decomposition:
    g = group_by_forecast(q, h)
    masses, conds, nus = g.masses, g.conditionals, g.forecasts
    clipped = np.any((q.probs > 0) & (pl.raw_losses(h.table) > pl.bound))
    if len(g):
        clipped = clipped or np.any((conds > 0) & (pl.raw_losses(conds) > pl.bound))
        calib = float(np.dot(masses, pl.bregman(conds, nus)))
        refine = float(np.dot(masses, pl.entropy(conds)))
    else:
        calib = refine = 0.0
    return Decomposition(
        risk=risk(q, h, pl),
        calibration_error=calib,
        refinement=refine,
        clip_active=bool(clipped),
    )
