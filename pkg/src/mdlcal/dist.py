"""Finite discrete joint distributions, conditionals and forecast tables.

Everything here is a thin, immutable wrapper around dense numpy tables.  A
joint over ``n`` feature points and ``m`` labels is an ``(n, m)`` array of
non-negative entries summing to one; a predictor is an ``(n, m)`` array whose
rows are forecasts on the label simplex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

NORM_TOL = 1e-9
ZERO_MASS = 1e-12


class DistributionError(ValueError):
    """Base class for invalid distribution inputs."""


class ZeroMassFeature(DistributionError):
    """A conditional was requested for a feature point with no mass."""


class SpaceMismatch(DistributionError):
    """Two objects are defined over different feature or label spaces."""


class WeightNotSimplex(DistributionError):
    """Mixture weights are negative or do not sum to one."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_labels(labels: Sequence[str], what: str, min_size: int) -> tuple[str, ...]:
    labels = tuple(str(s) for s in labels)
    if len(labels) < min_size:
        raise DistributionError(f"{what} needs at least {min_size} entries, got {len(labels)}")
    if len(set(labels)) != len(labels):
        raise DistributionError(f"{what} entries must be distinct: {labels}")
    return labels


@dataclass(frozen=True)
class LabelSpace:
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", _check_labels(self.labels, "label space", 2))

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def of_size(cls, m: int) -> "LabelSpace":
        return cls(tuple(f"y{j}" for j in range(m)))


@dataclass(frozen=True)
class FeatureSpace:
    points: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", _check_labels(self.points, "feature space", 1))

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def of_size(cls, n: int) -> "FeatureSpace":
        return cls(tuple(f"x{i}" for i in range(n)))


def as_forecast(probs, tol: float = NORM_TOL) -> np.ndarray:
    """Validate a probability vector (or a stack of them along the last axis).

    Entries within ``tol`` of the simplex are clipped and renormalised; anything
    further away is rejected.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim == 0 or p.shape[-1] < 2:
        raise DistributionError(f"forecast needs at least two entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DistributionError("forecast has non-finite entries")
    if np.any(p < -tol) or np.any(p > 1 + tol):
        raise DistributionError(f"forecast entries outside [0, 1]: {p}")
    s = p.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > tol):
        raise DistributionError(f"forecast does not sum to one (sums {s})")
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)


def one_hot(y: int, m: int) -> np.ndarray:
    e = np.zeros(m)
    e[y] = 1.0
    return e


class FiniteJoint:
    """Joint distribution over a finite feature set times a finite label set.

    Parameters
    ----------
    probs : array-like, shape (n, m)
        Cell probabilities.  Must be non-negative and sum to one within
        ``NORM_TOL``; the stored table is renormalised exactly.
    x_space, y_space : optional
        Feature and label spaces.  Default names are ``x0..`` and ``y0..``.
    """

    __slots__ = ("probs", "x_space", "y_space")

    def __init__(self, probs, x_space: FeatureSpace | None = None, y_space: LabelSpace | None = None):
        p = np.array(probs, dtype=float)
        if p.ndim == 1:
            p = p[None, :]
        if p.ndim != 2:
            raise DistributionError(f"joint table must be 2-D, got shape {p.shape}")
        n, m = p.shape
        x_space = x_space or FeatureSpace.of_size(n)
        y_space = y_space or LabelSpace.of_size(m)
        if (len(x_space), len(y_space)) != (n, m):
            raise SpaceMismatch(f"table shape {p.shape} does not match spaces ({len(x_space)}, {len(y_space)})")
        if not np.all(np.isfinite(p)):
            raise DistributionError("joint table has non-finite entries")
        if np.any(p < -NORM_TOL):
            raise DistributionError(f"joint table has negative entries (min {p.min():.3g})")
        total = p.sum()
        if abs(total - 1.0) > NORM_TOL:
            raise DistributionError(f"joint table sums to {total!r}, not 1")
        p = np.clip(p, 0.0, None)
        object.__setattr__(self, "probs", _frozen(p / p.sum()))
        object.__setattr__(self, "x_space", x_space)
        object.__setattr__(self, "y_space", y_space)

    def __setattr__(self, name, value):
        raise AttributeError("FiniteJoint is immutable")

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def same_spaces(self, other) -> bool:
        return self.x_space == other.x_space and self.y_space == other.y_space

    def check_spaces(self, other) -> None:
        if not self.same_spaces(other):
            raise SpaceMismatch("objects are defined over different feature/label spaces")

    def with_probs(self, probs) -> "FiniteJoint":
        return FiniteJoint(probs, self.x_space, self.y_space)

    def __eq__(self, other):
        return (
            isinstance(other, FiniteJoint)
            and self.same_spaces(other)
            and np.array_equal(self.probs, other.probs)
        )

    def __hash__(self):
        return hash((self.x_space, self.y_space, self.probs.tobytes()))

    def __repr__(self):
        return f"FiniteJoint(shape={self.shape}, probs={self.probs.tolist()})"

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "x_labels": list(self.x_space.points),
            "y_labels": list(self.y_space.labels),
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteJoint":
        try:
            probs = d["probs"]
        except (KeyError, TypeError):
            raise DistributionError("distribution JSON needs a 'probs' table") from None
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 2:
            raise DistributionError("'probs' must be a row-major n x m table")
        x = d.get("x_labels")
        y = d.get("y_labels")
        return cls(
            probs,
            FeatureSpace(tuple(x)) if x is not None else None,
            LabelSpace(tuple(y)) if y is not None else None,
        )

    @classmethod
    def load(cls, path) -> "FiniteJoint":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def bernoulli(cls, p1: float) -> "FiniteJoint":
        """Single feature point, binary label with ``P(y=1) = p1``."""
        return cls([[1.0 - p1, p1]])


class Predictor:
    """Forecast table ``h: X -> simplex``, one row per feature point."""

    __slots__ = ("table", "x_space")

    def __init__(self, table, x_space: FeatureSpace | None = None):
        t = np.array(table, dtype=float)
        if t.ndim != 2:
            raise DistributionError(f"predictor table must be 2-D, got shape {t.shape}")
        t = as_forecast(t)
        x_space = x_space or FeatureSpace.of_size(t.shape[0])
        if len(x_space) != t.shape[0]:
            raise SpaceMismatch("predictor rows do not match the feature space")
        object.__setattr__(self, "table", _frozen(t))
        object.__setattr__(self, "x_space", x_space)

    def __setattr__(self, name, value):
        raise AttributeError("Predictor is immutable")

    def __getitem__(self, i) -> np.ndarray:
        return self.table[i]

    def __len__(self) -> int:
        return self.table.shape[0]

    def __repr__(self):
        return f"Predictor({self.table.tolist()})"

    def check_joint(self, q: FiniteJoint) -> None:
        if self.x_space != q.x_space or self.table.shape[1] != q.shape[1]:
            raise SpaceMismatch("predictor and joint are defined over different spaces")

    @classmethod
    def constant(cls, forecast, n: int, x_space: FeatureSpace | None = None) -> "Predictor":
        return cls(np.tile(as_forecast(forecast), (n, 1)), x_space)

    def to_dict(self, y_labels=None) -> dict:
        d = {"x_labels": list(self.x_space.points), "forecasts": self.table.tolist()}
        if y_labels is not None:
            d["y_labels"] = list(y_labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Predictor":
        x = d.get("x_labels")
        return cls(d["forecasts"], FeatureSpace(tuple(x)) if x is not None else None)


def marginal_x(j: FiniteJoint) -> np.ndarray:
    return j.probs.sum(axis=1)


def marginal_y(j: FiniteJoint) -> np.ndarray:
    return j.probs.sum(axis=0)


def conditional_y_given_x(j: FiniteJoint, i: int) -> np.ndarray:
    """Label distribution at feature point ``i``."""
    row = j.probs[i]
    mass = row.sum()
    if mass <= ZERO_MASS:
        raise ZeroMassFeature(f"feature {j.x_space.points[i]!r} has mass {mass:.3g}")
    return row / mass


def conditionals(probs: np.ndarray) -> np.ndarray:
    """Row-normalise an ``(n, m)`` table; zero-mass rows get the label marginal."""
    probs = np.asarray(probs, dtype=float)
    mass = probs.sum(axis=1, keepdims=True)
    positive = mass[:, 0] > ZERO_MASS
    out = np.empty_like(probs)
    out[positive] = probs[positive] / mass[positive]
    if not positive.all():
        out[~positive] = probs.sum(axis=0) / probs.sum()
    return out


def bayes_predictor(j: FiniteJoint) -> Predictor:
    """Per-feature conditional label distribution.

    Features with no mass receive the label marginal, which is the only
    forecast available there that invents no information.
    """
    return Predictor(conditionals(j.probs), j.x_space)


def mix(joints: Sequence[FiniteJoint], weights) -> FiniteJoint:
    """Convex combination of joints over a common space."""
    joints = list(joints)
    w = np.asarray(weights, dtype=float)
    if len(joints) == 0 or w.shape != (len(joints),):
        raise WeightNotSimplex(f"need one weight per joint ({len(joints)}), got shape {w.shape}")
    if np.any(w < -NORM_TOL) or abs(w.sum() - 1.0) > NORM_TOL:
        raise WeightNotSimplex(f"weights not in the simplex: {w}")
    first = joints[0]
    for q in joints[1:]:
        first.check_spaces(q)
    w = np.clip(w, 0.0, None)
    table = np.tensordot(w / w.sum(), np.stack([q.probs for q in joints]), axes=1)
    return first.with_probs(table)
