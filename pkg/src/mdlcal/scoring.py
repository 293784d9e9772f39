"""Proper scoring losses through their generalized entropy.

A proper loss is determined by a concave entropy ``H`` on the label simplex
and a supergradient ``dH`` of it::

    loss(y, h) = H(h) + dH(h) . (e_y - h)

All methods broadcast over leading axes, so an ``(n, m)`` forecast table can
be scored in one call.  Losses are clipped from above at the bound ``M``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

LOG_FLOOR = 1e-12


class ProperLoss:
    """A bounded proper scoring loss packaged with ``(H, dH)``.

    Parameters
    ----------
    name : str
        Identifier used in configs and reports.
    entropy_fn : callable
        Concave generalized entropy, reducing over the last axis.
    subgradient_fn : callable
        Supergradient of ``entropy_fn``; same shape as its input.
    bound : float
        Clip ceiling ``M``.
    strict : bool
        Whether the loss is strictly proper.
    """

    def __init__(
        self,
        name: str,
        entropy_fn: Callable[[np.ndarray], np.ndarray],
        subgradient_fn: Callable[[np.ndarray], np.ndarray],
        bound: float,
        strict: bool = True,
    ):
        if not bound >= 0:
            raise ValueError(f"loss bound must be non-negative, got {bound}")
        self.name = name
        self._entropy_fn = entropy_fn
        self._subgradient_fn = subgradient_fn
        self.bound = float(bound)
        self.strict = strict

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, bound={self.bound})"

    def raw_losses(self, h) -> np.ndarray:
        """Unclipped ``loss(y, h)`` for every label ``y``, shape of ``h``."""
        h = np.asarray(h, dtype=float)
        g = self.subgradient(h)
        return (self._entropy_fn(h) - np.sum(g * h, axis=-1))[..., None] + g

    def losses(self, h) -> np.ndarray:
        return np.minimum(self.raw_losses(h), self.bound)

    def loss(self, y: int, h) -> float:
        return float(self.losses(h)[..., y])

    def clip_active(self, h) -> bool:
        return bool(np.any(self.raw_losses(h) > self.bound))

    def subgradient(self, h) -> np.ndarray:
        return self._subgradient_fn(np.asarray(h, dtype=float))

    def expected_loss(self, eta, h) -> np.ndarray | float:
        """``L(eta, h) = E_{y~eta} loss(y, h)``."""
        return np.sum(np.asarray(eta, dtype=float) * self.losses(h), axis=-1)

    def entropy(self, eta) -> np.ndarray | float:
        """Bayes risk ``L(eta, eta)``; equals ``H(eta)`` wherever the clip is inactive."""
        return self.expected_loss(eta, eta)

    def bregman(self, eta, h) -> np.ndarray | float:
        """Propriety gap ``L(eta, h) - H(eta)``."""
        return self.expected_loss(eta, h) - self.entropy(eta)


class LogLoss(ProperLoss):
    """Log-loss ``min(M, -log h[y])`` with Shannon entropy (nats)."""

    def __init__(self, bound: float = 20.0, floor: float = LOG_FLOOR):
        self.floor = floor
        super().__init__("log", self._shannon, self._neg_log, bound)

    def _neg_log(self, h):
        return -np.log(np.maximum(h, self.floor))

    def _shannon(self, h):
        return np.sum(h * self._neg_log(h), axis=-1)

    def raw_losses(self, h):
        return self._neg_log(np.asarray(h, dtype=float))


class BrierLoss(ProperLoss):
    """Quadratic loss ``||e_y - h||^2``; entropy ``1 - ||h||^2``, bound 2."""

    def __init__(self):
        super().__init__(
            "brier",
            lambda h: 1.0 - np.sum(h * h, axis=-1),
            lambda h: -2.0 * h,
            bound=2.0,
        )

    def raw_losses(self, h):
        h = np.asarray(h, dtype=float)
        sq = np.sum(h * h, axis=-1, keepdims=True)
        return 1.0 - 2.0 * h + sq


def make_loss(spec) -> ProperLoss:
    """Build a loss from a name or a config mapping like ``{"name": "log", "bound": 20}``."""
    if isinstance(spec, ProperLoss):
        return spec
    if isinstance(spec, str):
        spec = {"name": spec}
    name = spec.get("name")
    if name == "log":
        return LogLoss(bound=float(spec.get("bound", 20.0)))
    if name == "brier":
        return BrierLoss()
    raise ValueError(f"unknown loss {name!r}; expected 'log' or 'brier'")


def loss_to_dict(pl: ProperLoss) -> dict:
    d = {"name": pl.name}
    if isinstance(pl, LogLoss):
        d["bound"] = pl.bound
    return d


# -- plain functional API -------------------------------------------------

def loss(pl: ProperLoss, y: int, h) -> float:
    return pl.loss(y, h)


def expected_loss(pl: ProperLoss, eta, h) -> float:
    return float(pl.expected_loss(eta, h))


def entropy(pl: ProperLoss, eta) -> float:
    return float(pl.entropy(eta))


def bregman(pl: ProperLoss, eta, h) -> float:
    return float(pl.bregman(eta, h))


@dataclass(frozen=True)
class CostMatrix:
    """Action-by-label cost table ``costs[a, y] >= 0``."""

    actions: tuple[str, ...]
    costs: np.ndarray

    def __post_init__(self):
        c = np.array(self.costs, dtype=float)
        if c.ndim != 2 or c.shape[0] != len(self.actions):
            raise ValueError(f"cost table shape {c.shape} does not match {len(self.actions)} actions")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("action identifiers must be distinct")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("costs must be finite and non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "actions", tuple(str(a) for a in self.actions))
        object.__setattr__(self, "costs", c)

    @property
    def n_actions(self) -> int:
        return self.costs.shape[0]

    @property
    def n_labels(self) -> int:
        return self.costs.shape[1]

    def to_dict(self) -> dict:
        return {"actions": list(self.actions), "costs": self.costs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CostMatrix":
        return cls(tuple(d["actions"]), d["costs"])

    @classmethod
    def load(cls, path) -> "CostMatrix":
        return cls.from_dict(json.loads(Path(path).read_text()))


def expected_cost(cm: CostMatrix, h, a: int) -> float:
    """``E_{y~h} costs[a, y]``."""
    return float(np.dot(cm.costs[a], np.asarray(h, dtype=float)))
