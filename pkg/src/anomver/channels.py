"""Observation channels and the system model.

Components are indexed 1..M and hypotheses 0..M, where hypothesis 0 means
the system is safe and hypothesis j >= 1 means component j is anomalous.
All observation alphabets are finite and every pmf is strictly positive,
so log-likelihood ratios are always finite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np

SUM_TOL = 1e-12


class ModelError(ValueError):
    """Raised for malformed or degenerate models."""


def _as_pmf(probs: Sequence[float], normalize: bool = False, name: str = "pmf") -> np.ndarray:
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ModelError(f"{name} must be a non-empty 1-D list of probabilities")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ModelError(f"{name} entries must be finite and strictly positive")
    total = float(arr.sum())
    if normalize:
        arr = arr / total
    elif abs(total - 1.0) > SUM_TOL:
        raise ModelError(f"{name} sums to {total!r}, not 1 (set normalize to rescale)")
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Strictly positive pmf over symbols 0..len(probs)-1."""

    probs: np.ndarray

    def __init__(self, probs: Sequence[float], normalize: bool = False):
        arr = _as_pmf(probs, normalize=normalize)
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @property
    def size(self) -> int:
        return int(self.probs.size)

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        # pin the top so inverse-cdf sampling of a uniform in [0, 1) stays in range
        c[-1] = 1.0
        return c

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.all(self.probs == other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def __repr__(self) -> str:
        return f"DiscreteDistribution({self.probs.tolist()})"


@dataclass(frozen=True)
class ComponentChannel:
    """Observation laws of one component: ``p0`` when healthy, ``p1`` when anomalous."""

    p0: DiscreteDistribution
    p1: DiscreteDistribution

    def __post_init__(self):
        if self.p0.size != self.p1.size:
            raise ModelError(
                f"p0 and p1 must share an alphabet (sizes {self.p0.size} and {self.p1.size})"
            )
        if kl(self.p0, self.p1) <= 0:
            raise ModelError("channel is degenerate: KL(p0 || p1) must be positive")

    @property
    def alphabet_size(self) -> int:
        return self.p0.size

    @cached_property
    def llr(self) -> np.ndarray:
        """log(p0(y)/p1(y)) for every symbol y."""
        out = np.log(self.p0.probs) - np.log(self.p1.probs)
        out.setflags(write=False)
        return out


class SystemModel:
    """M components with their channels and a prior over hypotheses 0..M.

    The prior may be omitted, in which case hypothesis 0 gets mass 1/2 and
    the anomalous hypotheses share the remainder uniformly. Only the
    conditional prior over anomalies (``prior_tilde``) enters the
    confidence level, so the safe-hypothesis mass rarely matters.
    """

    def __init__(self, channels: Sequence[ComponentChannel], prior: Sequence[float] | None = None):
        channels = tuple(channels)
        if not channels:
            raise ModelError("model needs at least one component")
        m = len(channels)
        if prior is None:
            prior = [0.5] + [0.5 / m] * m
        prior = np.asarray(prior, dtype=np.float64)
        if prior.shape != (m + 1,):
            raise ModelError(f"prior must have M+1 = {m + 1} entries, got {prior.size}")
        if not np.all(np.isfinite(prior)) or abs(prior.sum() - 1.0) > SUM_TOL:
            raise ModelError("prior must sum to 1")
        if not 0 < prior[0] < 1:
            raise ModelError("prior of the safe hypothesis must lie strictly in (0, 1)")
        if np.any(prior[1:] <= 0):
            raise ModelError("every anomalous hypothesis needs positive prior mass")
        prior.setflags(write=False)
        self.channels = channels
        self.prior = prior
        tilde = prior[1:] / (1.0 - prior[0])
        tilde.setflags(write=False)
        self.prior_tilde = tilde
        self.log_prior_tilde = np.log(tilde)
        self.log_prior_tilde.setflags(write=False)

    @property
    def n_components(self) -> int:
        return len(self.channels)

    M = n_components

    @property
    def max_alphabet(self) -> int:
        return max(c.alphabet_size for c in self.channels)

    def llr_table(self) -> np.ndarray:
        """(M, |Y|max) table of log(p0^u(y)/p1^u(y)); padding columns are 0."""
        table = np.zeros((self.M, self.max_alphabet))
        for i, ch in enumerate(self.channels):
            table[i, : ch.alphabet_size] = ch.llr
        return table

    def cdf_table(self) -> np.ndarray:
        """(M, 2, |Y|max) cumulative pmfs; index 0 is p0, index 1 is p1.

        Padding entries are 1 so inverse-cdf sampling never lands on them.
        """
        table = np.ones((self.M, 2, self.max_alphabet))
        for i, ch in enumerate(self.channels):
            table[i, 0, : ch.alphabet_size] = ch.p0.cdf
            table[i, 1, : ch.alphabet_size] = ch.p1.cdf
        return table

    def to_dict(self) -> dict[str, Any]:
        return {
            "components": [
                {"p0": ch.p0.probs.tolist(), "p1": ch.p1.probs.tolist()} for ch in self.channels
            ],
            "prior": self.prior.tolist(),
        }

    def __repr__(self) -> str:
        return f"SystemModel(M={self.M}, prior={self.prior.tolist()})"


def homogeneous_model(p0: Sequence[float], p1: Sequence[float], m: int,
                      prior: Sequence[float] | None = None) -> SystemModel:
    """Model with ``m`` copies of the same channel."""
    ch = ComponentChannel(DiscreteDistribution(p0), DiscreteDistribution(p1))
    return SystemModel([ch] * m, prior)


def model_from_dict(data: dict[str, Any]) -> SystemModel:
    """Build a model from the JSON config schema.

    ``{"components": [{"p0": [...], "p1": [...]}, ...], "prior": [...], "normalize": bool}``
    """
    if not isinstance(data, dict) or "components" not in data:
        raise ModelError("model config needs a 'components' list")
    normalize = bool(data.get("normalize", False))
    comps = data["components"]
    if not isinstance(comps, list) or not comps:
        raise ModelError("'components' must be a non-empty list")
    channels = []
    for i, comp in enumerate(comps, start=1):
        try:
            p0, p1 = comp["p0"], comp["p1"]
        except (KeyError, TypeError):
            raise ModelError(f"component {i} needs 'p0' and 'p1'") from None
        channels.append(ComponentChannel(
            DiscreteDistribution(_as_pmf(p0, normalize, f"components[{i}].p0")),
            DiscreteDistribution(_as_pmf(p1, normalize, f"components[{i}].p1")),
        ))
    prior = data.get("prior")
    if prior is not None and normalize:
        prior = np.asarray(prior, dtype=np.float64)
        prior = prior / prior.sum()
    return SystemModel(channels, prior)


def load_model(path) -> SystemModel:
    with open(path, "rb") as fh:
        try:
            data = json.loads(fh.read())
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: malformed JSON ({exc})") from None
    return model_from_dict(data)


def _check_component(model: SystemModel, u: int, name: str = "component") -> None:
    if not 1 <= u <= model.M:
        raise IndexError(f"{name} index {u} outside 1..{model.M}")


def llr(model: SystemModel, u: int, j: int, y: int) -> float:
    """Log-likelihood ratio of hypothesis 0 against hypothesis ``j`` for one experiment."""
    _check_component(model, u)
    _check_component(model, j)
    ch = model.channels[u - 1]
    if not 0 <= y < ch.alphabet_size:
        raise IndexError(f"symbol {y} outside alphabet of component {u}")
    if u != j:
        return 0.0
    return float(ch.llr[y])


def sample_observation(model: SystemModel, x: int, u: int, rng: np.random.Generator) -> int:
    """Draw one observation from component ``u`` under hypothesis ``x``.

    Consumes exactly one uniform from ``rng`` (inverse-cdf sampling), which
    keeps the batched simulator in lock-step with this scalar version.
    """
    if not 0 <= x <= model.M:
        raise IndexError(f"hypothesis {x} outside 0..{model.M}")
    _check_component(model, u)
    ch = model.channels[u - 1]
    dist = ch.p1 if x == u else ch.p0
    return inverse_cdf(dist.cdf, rng.random())


def inverse_cdf(cdf: np.ndarray, v):
    """Symbol index whose cdf bin contains the uniform(s) ``v``."""
    idx = np.searchsorted(cdf, v, side="right")
    return np.minimum(idx, cdf.shape[-1] - 1) if np.ndim(idx) else int(min(idx, cdf.size - 1))


def kl(p, q) -> float:
    """Kullback-Leibler divergence D(p || q) in nats."""
    p = p.probs if isinstance(p, DiscreteDistribution) else np.asarray(p, dtype=np.float64)
    q = q.probs if isinstance(q, DiscreteDistribution) else np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"alphabet mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return max(float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask])))), 0.0)


def cross_entropy(p, q) -> float:
    """H(p, q) = -sum p log q. ``p`` may be any nonnegative weight vector."""
    p = p.probs if isinstance(p, DiscreteDistribution) else np.asarray(p, dtype=np.float64)
    q = q.probs if isinstance(q, DiscreteDistribution) else np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    if np.any(q <= 0):
        raise ValueError("cross-entropy undefined: q has a zero entry")
    mask = p != 0
    return float(-np.sum(p[mask] * np.log(q[mask])))


def is_homogeneous(model: SystemModel) -> bool:
    """True when every component has exactly the same (p0, p1) pair."""
    first = model.channels[0]
    return all(ch.p0 == first.p0 and ch.p1 == first.p1 for ch in model.channels[1:])
