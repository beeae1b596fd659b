"""Component-selection and inference rules.

Selection rules:

* ``ORS``: open-loop randomized selection, component u with probability
  ``weights[u]`` at every step regardless of the past.
* ``DAS``: deterministic adaptive selection, probe the component with the
  smallest ``z(j) - log prior(j)``; ties go to the lowest index.
* ``RoundRobin``: cycle through the components in order. Not part of the
  analysis; kept as a simple non-adaptive deterministic baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .belief import TrajectoryState
from .channels import SystemModel, cross_entropy, inverse_cdf
from .divergence import MaxMinSolution


@dataclass(frozen=True, eq=False)
class ORS:
    weights: np.ndarray

    name = "ors"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("ORS weights must be a nonnegative vector summing to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "cum_weights", np.cumsum(w))

    def __eq__(self, other):
        return isinstance(other, ORS) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(("ors", self.weights.tobytes()))


@dataclass(frozen=True)
class DAS:
    name = "das"


@dataclass(frozen=True)
class RoundRobin:
    name = "round_robin"


SelectionStrategy = Union[ORS, DAS, RoundRobin]

STRATEGY_NAMES = ("ors", "das", "round_robin")


def make_strategy(name: str, solution: MaxMinSolution) -> SelectionStrategy:
    """Strategy from its config name; ORS uses the max-min weights."""
    key = name.strip().lower().replace("-", "_")
    if key == "ors":
        return ORS(solution.alpha_star)
    if key == "das":
        return DAS()
    if key in ("round_robin", "roundrobin", "rr"):
        return RoundRobin()
    raise ValueError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGY_NAMES)}")


def das_scores(z: np.ndarray, model: SystemModel) -> np.ndarray:
    return z - model.log_prior_tilde


def select(strategy: SelectionStrategy, state: TrajectoryState, model: SystemModel,
           rng: np.random.Generator | None = None) -> int:
    """Next component (1-based). Only ORS draws from ``rng`` (one uniform)."""
    if isinstance(strategy, ORS):
        if rng is None:
            raise ValueError("ORS needs a random generator")
        return inverse_cdf(strategy.cum_weights, rng.random()) + 1
    if isinstance(strategy, DAS):
        return int(np.argmin(das_scores(state.z, model))) + 1
    if isinstance(strategy, RoundRobin):
        return state.n % model.M + 1
    raise TypeError(f"not a selection strategy: {strategy!r}")


def zeta(state: TrajectoryState, model: SystemModel, solution: MaxMinSolution) -> np.ndarray:
    """Centered DAS scores; their beta*-weighted sum is zero.

    Subtracting ``z_bar`` and the cross-entropy of beta* against the prior
    does not depend on j, so the argmin coincides with the DAS choice.
    """
    return (state.z - model.log_prior_tilde - state.z_bar
            - cross_entropy(solution.beta_star, model.prior_tilde))


@dataclass(frozen=True)
class Threshold:
    theta: float

    def __post_init__(self):
        if math.isnan(self.theta) or self.theta == -math.inf:
            raise ValueError("threshold must be a number (use +inf to never declare safe)")


@dataclass(frozen=True)
class AlwaysSafe:
    pass


InferenceRule = Union[Threshold, AlwaysSafe]

SAFE, UNSAFE = "safe", "unsafe"


def infer(rule: InferenceRule, confidence: float) -> str:
    """Declare safe iff the confidence reaches the threshold (``>=``)."""
    if isinstance(rule, AlwaysSafe):
        return SAFE
    return SAFE if confidence >= rule.theta else UNSAFE


def infer_many(rule: InferenceRule, confidences: np.ndarray) -> np.ndarray:
    """Boolean array, True where the verdict is safe."""
    confidences = np.asarray(confidences)
    if isinstance(rule, AlwaysSafe):
        return np.ones(confidences.shape, dtype=bool)
    return confidences >= rule.theta


def parse_rule(text: str) -> InferenceRule | str:
    """Parse ``threshold:<value>``, ``always_safe`` or ``calibrated``.

    ``calibrated`` is returned as the string itself; the caller resolves it
    by simulation.
    """
    key = text.strip().lower()
    if key == "calibrated":
        return "calibrated"
    if key in ("always_safe", "alwayssafe"):
        return AlwaysSafe()
    if key.startswith("threshold:"):
        try:
            return Threshold(float(key.split(":", 1)[1]))
        except ValueError:
            raise ValueError(f"bad threshold value in {text!r}") from None
    raise ValueError(f"unknown inference rule {text!r}; use threshold:<value>, calibrated or always_safe")
