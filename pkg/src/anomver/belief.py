"""Per-trajectory sufficient statistics and the confidence level.

The confidence level is the log-likelihood ratio between the safe hypothesis
and the prior-weighted mixture of anomalous hypotheses for the whole
observed history. It depends on the history only through the accumulated
per-component LLRs ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .channels import SystemModel, kl, llr
from .divergence import MaxMinSolution


@dataclass(frozen=True)
class TrajectoryState:
    n: int
    z: np.ndarray
    z_bar: float

    @classmethod
    def zero(cls, m: int) -> "TrajectoryState":
        return cls(0, np.zeros(m), 0.0)


@dataclass(frozen=True)
class Posterior:
    probs: np.ndarray


def update(state: TrajectoryState, model: SystemModel, solution: MaxMinSolution,
           u: int, y: int) -> TrajectoryState:
    """Fold the experiment (u, y) into the state; returns a new state."""
    step = llr(model, u, u, y)
    z = state.z.copy()
    z[u - 1] += step
    return TrajectoryState(state.n + 1, z, state.z_bar + solution.beta_star[u - 1] * step)


def confidence_from_z(z: np.ndarray, log_prior_tilde: np.ndarray) -> np.ndarray | float:
    """-log sum_j exp(log prior(j) - z(j)), along the last axis."""
    out = -logsumexp(log_prior_tilde - z, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def confidence(state: TrajectoryState, model: SystemModel) -> float:
    return confidence_from_z(state.z, model.log_prior_tilde)


def posterior(state: TrajectoryState, model: SystemModel) -> Posterior:
    """Posterior over which component is anomalous, given that one is."""
    return Posterior(softmax(model.log_prior_tilde - state.z))


def decompose(state: TrajectoryState, model: SystemModel,
              solution: MaxMinSolution) -> tuple[float, float]:
    """Split the confidence into ``-D(beta* || posterior)`` and ``z_bar + D(beta* || prior)``.

    The two parts always add back to the confidence level. The first is
    never positive; the second is a random walk with i.i.d. increments
    under the safe hypothesis when the system is homogeneous.
    """
    post = posterior(state, model).probs
    kl_term = -kl(solution.beta_star, post)
    sum_term = state.z_bar + kl(solution.beta_star, model.prior_tilde)
    return kl_term, sum_term


@dataclass
class RecordingTrajectory:
    """Keeps the full (u, y) history next to the running state.

    The hot simulation path never stores histories; this wrapper exists for
    checks that recompute statistics from scratch.
    """

    model: SystemModel
    solution: MaxMinSolution
    state: TrajectoryState = None
    components: list = field(default_factory=list)
    observations: list = field(default_factory=list)

    def __post_init__(self):
        if self.state is None:
            self.state = TrajectoryState.zero(self.model.M)

    def record(self, u: int, y: int) -> TrajectoryState:
        self.state = update(self.state, self.model, self.solution, u, y)
        self.components.append(u)
        self.observations.append(y)
        return self.state

    def history(self) -> tuple[list, list]:
        return list(self.components), list(self.observations)


def replay(model: SystemModel, solution: MaxMinSolution, components, observations) -> TrajectoryState:
    """State reached by applying a recorded history from the zero state."""
    state = TrajectoryState.zero(model.M)
    for u, y in zip(components, observations):
        state = update(state, model, solution, int(u), int(y))
    return state

