"""Converse and achievability bounds on the incorrect-verification exponent.

Everything here except :func:`weak_converse_rate` needs a homogeneous model:
then the beta*-averaged LLR increment has the same law at every step no
matter how components are chosen, and the law of its N-fold sum is computed
exactly by convolution.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from .channels import SystemModel, cross_entropy, is_homogeneous, kl
from .divergence import MaxMinSolution

MERGE_TOL = 1e-12
ATOM_CAP = 10**7
MC_SAMPLES = 10**6
CDF_TOL = 1e-12


class HomogeneityRequired(ValueError):
    """The requested quantity is only defined for homogeneous models."""


class ConvolutionTooLarge(MemoryError):
    """Exact convolution would exceed the atom cap; use the Monte Carlo quantile instead."""


class ConstantsUnavailable(ArithmeticError):
    """No s in (0, 1) makes the contraction factor smaller than one."""


@dataclass(frozen=True, eq=False)
class DiscreteValueDistribution:
    """Finite-support law on the real line, atoms sorted by value."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        p = np.asarray(self.probs, dtype=np.float64)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise ValueError("values and probs must be equal-length non-empty 1-D arrays")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("probabilities must be positive and sum to 1")
        if np.any(np.diff(v) <= 0):
            raise ValueError("values must be strictly increasing")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_atoms(cls, values, probs, merge_tol: float = MERGE_TOL) -> "DiscreteValueDistribution":
        v, p = _merge(np.asarray(values, dtype=np.float64), np.asarray(probs, dtype=np.float64), merge_tol)
        return cls(v, p)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.probs.tolist()))

    def mean(self) -> float:
        return float(self.probs @ self.values)

    def variance(self) -> float:
        mu = self.mean()
        return float(self.probs @ (self.values - mu) ** 2)

    def central_abs_moment(self, k: int, center: float | None = None) -> float:
        c = self.mean() if center is None else center
        return float(self.probs @ np.abs(self.values - c) ** k)

    def cdf(self, x) -> np.ndarray | float:
        """P[X <= x]."""
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(self.values, x, side="right")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def __len__(self) -> int:
        return int(self.values.size)


def _merge(values: np.ndarray, probs: np.ndarray, merge_tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Sort atoms and merge runs whose neighbours lie within a relative tolerance.

    A merged atom sits at the smallest value of its run. A weighted mean
    would lose monotonicity when the merged masses are subnormal.
    """
    keep = probs > 0
    values, probs = values[keep], probs[keep]
    order = np.argsort(values, kind="stable")
    values, probs = values[order], probs[order]
    if values.size <= 1:
        return values, probs
    scale = np.maximum(1.0, np.maximum(np.abs(values[1:]), np.abs(values[:-1])))
    new_group = np.diff(values) > merge_tol * scale
    group = np.concatenate([[0], np.cumsum(new_group)])
    p = np.bincount(group, weights=probs)
    v = values[np.concatenate([[True], new_group])]
    return v, p


def l_distribution(model: SystemModel) -> DiscreteValueDistribution:
    """Law of one averaged LLR increment (1/M) log(p0(Y)/p1(Y)) with Y ~ p0."""
    if not is_homogeneous(model):
        raise HomogeneityRequired("the increment law is strategy-free only for homogeneous models")
    ch = model.channels[0]
    return DiscreteValueDistribution.from_atoms(ch.llr / model.M, ch.p0.probs)


def _convolve2(a: DiscreteValueDistribution, b: DiscreteValueDistribution,
               merge_tol: float, cap: int) -> DiscreteValueDistribution:
    if len(a) * len(b) > cap:
        raise ConvolutionTooLarge(
            f"convolution needs {len(a) * len(b)} atoms (cap {cap}); use the Monte Carlo quantile")
    v = np.add.outer(a.values, b.values).ravel()
    p = np.multiply.outer(a.probs, b.probs).ravel()
    v, p = _merge(v, p, merge_tol)
    return DiscreteValueDistribution(v, p / p.sum())


def convolve_n(dist: DiscreteValueDistribution, n: int, merge_tol: float = MERGE_TOL,
               cap: int = ATOM_CAP) -> DiscreteValueDistribution:
    """Exact law of the sum of ``n`` i.i.d. copies, by repeated squaring."""
    if n < 1:
        raise ValueError("n must be at least 1")
    result = None
    base = dist
    while True:
        if n & 1:
            result = base if result is None else _convolve2(result, base, merge_tol, cap)
        n >>= 1
        if not n:
            return result
        base = _convolve2(base, base, merge_tol, cap)


def quantile(dist: DiscreteValueDistribution, p: float, offset: float = 0.0) -> float:
    """Smallest atom x with F(x) >= p, shifted by ``offset``.

    Cumulative sums that fall short of ``p`` by less than 1e-12 count as
    reaching it, so p = 0.2 lands on an atom whose cdf is 0.2 in exact
    arithmetic.
    """
    if not 0 < p < 1:
        raise ValueError(f"quantile level {p} outside (0, 1)")
    cum = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cum, p - CDF_TOL, side="left"))
    idx = min(idx, len(dist) - 1)
    return float(dist.values[idx]) + offset


def mc_quantile(model: SystemModel, n: int, p: float, samples: int = MC_SAMPLES,
                seed: int = 0, offset: float = 0.0) -> float:
    """Monte Carlo quantile of the n-step averaged LLR sum, for huge alphabets."""
    if not 0 < p < 1:
        raise ValueError(f"quantile level {p} outside (0, 1)")
    base = l_distribution(model)
    rng = np.random.default_rng(seed)
    totals = np.zeros(samples)
    for _ in range(n):
        totals += rng.choice(base.values, size=samples, p=base.probs)
    totals.sort()
    k = max(int(math.ceil(p * samples)) - 1, 0)
    return float(totals[k]) + offset


def prior_offset(model: SystemModel, solution: MaxMinSolution) -> float:
    """D(beta* || prior over anomalies), the shift applied to the averaged LLR sum."""
    return kl(solution.beta_star, model.prior_tilde)


def inv_n(model: SystemModel, solution: MaxMinSolution, n: int, p: float,
          merge_tol: float = MERGE_TOL, cap: int = ATOM_CAP, mc_samples: int = MC_SAMPLES) -> float:
    """Quantile of z_bar after n steps plus D(beta* || prior).

    Falls back to Monte Carlo when exact convolution exceeds the atom cap.
    """
    if not 0 < p < 1:
        raise ValueError(f"quantile argument {p} outside (0, 1)")
    offset = prior_offset(model, solution)
    try:
        law = convolve_n(l_distribution(model), n, merge_tol, cap)
    except ConvolutionTooLarge:
        warnings.warn("exact convolution too large; using the Monte Carlo quantile", RuntimeWarning)
        return mc_quantile(model, n, p, mc_samples, offset=offset)
    return quantile(law, p, offset)


def weak_converse_rate(model: SystemModel, solution: MaxMinSolution, n: int, epsilon: float) -> float:
    """Upper bound on -(1/N) log phi*_N valid for any model."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    h = cross_entropy(solution.beta_star, model.prior_tilde)
    return solution.d_star / (1 - epsilon) + (math.log(2) + h) / (n * (1 - epsilon))


def _check_eta(epsilon: float, eta: float) -> None:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not eta > 1:
        raise ValueError("eta must be greater than 1")


def strong_converse(model: SystemModel, solution: MaxMinSolution, n: int, epsilon: float,
                    eta: float, **kw) -> float:
    """Upper bound on -log phi*_N: quantile at eps + eps/eta plus log(eta/eps)."""
    _check_eta(epsilon, eta)
    arg = epsilon + epsilon / eta
    if not 0 < arg < 1:
        raise ValueError(f"quantile argument eps + eps/eta = {arg} outside (0, 1)")
    return inv_n(model, solution, n, arg, **kw) + math.log(eta / epsilon)


def mgf_terms(model: SystemModel, s: float) -> tuple[float, float]:
    """(m(s), m_bar(s)): moment generating functions of the centered score steps.

    m is for the probed component, whose centered score moves by
    ((M-1)/M) log(p0/p1); m_bar for every other component, which moves by
    -(1/M) log(p0/p1). Both expectations are under p0, and both contain a
    sign flip so that they are E[exp(-s * step)].
    """
    if not is_homogeneous(model):
        raise HomogeneityRequired("achievability constants need a homogeneous model")
    ch = model.channels[0]
    m = model.M
    lam = ch.llr
    p = ch.p0.probs
    m_s = float(p @ np.exp(-s * (m - 1) / m * lam))
    m_bar = float(p @ np.exp(s / m * lam))
    return m_s, m_bar


@dataclass(frozen=True)
class AchievabilityConstants:
    s_star: float
    varsigma: float
    k: float
    k_prime: float
    delta: float


def default_delta(m: int) -> float:
    if m < 2:
        raise ValueError("achievability constants need at least two components")
    return 1.0 / (2 * (m - 1))


def achievability_constants(model: SystemModel, solution: MaxMinSolution,
                            delta: float | None = None, tol: float = 1e-6) -> AchievabilityConstants:
    """Find s* in (0, 1) minimizing the contraction factor and derive K, K'.

    Raises :class:`ConstantsUnavailable` when the minimum is not below 1.
    """
    m = model.M
    if delta is None:
        delta = default_delta(m)
    if m < 2:
        raise ValueError("achievability constants need at least two components")
    if not 0 <= delta < 1 / (m - 1):
        raise ValueError(f"delta must lie in [0, 1/(M-1)) = [0, {1 / (m - 1)})")
    w = (1 + delta) / m

    def varsigma(s):
        ms, mb = mgf_terms(model, s)
        return w * ms + (1 - w) * mb

    res = minimize_scalar(varsigma, bounds=(0.0, 1.0), method="bounded", options={"xatol": tol})
    s_star = float(res.x)
    vs = float(varsigma(s_star))
    if not (0 < s_star < 1 and vs < 1):
        raise ConstantsUnavailable(f"min over s of the contraction factor is {vs:.6g} >= 1")
    ms, mb = mgf_terms(model, s_star)
    k = (1 + delta) * (ms + (m - 1) * mb) / (1 + delta - m * delta)
    return AchievabilityConstants(s_star, vs, k, m + k / (1 - vs), delta)


def achievability_threshold(model: SystemModel, solution: MaxMinSolution, n: int, epsilon: float,
                            eta: float, delta: float | None = None,
                            **kw) -> tuple[float, float, float, bool]:
    """Confidence threshold that keeps psi_N >= 1 - eps under DAS.

    Returns ``(theta, theta1, theta2, ok)``. ``theta2`` is the quantile at
    eps - eps/eta; ``theta1`` the nonpositive correction covering the
    divergence term. When the constants cannot be found, ``theta1`` is 0
    and ``ok`` is False.
    """
    _check_eta(epsilon, eta)
    arg = epsilon - epsilon / eta
    if not 0 < arg < 1:
        raise ValueError(f"quantile argument eps - eps/eta = {arg} outside (0, 1)")
    theta2 = inv_n(model, solution, n, arg, **kw)
    try:
        c = achievability_constants(model, solution, delta)
    except ConstantsUnavailable:
        warnings.warn("achievability constants unavailable; threshold uses the quantile term only",
                      RuntimeWarning)
        return theta2, 0.0, theta2, False
    theta1 = math.log(epsilon / (eta * c.k_prime)) / c.s_star + math.log(model.M)
    return theta1 + theta2, theta1, theta2, True


def q_inverse(p: float) -> float:
    """Inverse of the standard normal tail function."""
    return float(norm.isf(p))


def increment_moments(model: SystemModel, solution: MaxMinSolution) -> tuple[float, float]:
    """(V, T): second and absolute third central moments of one increment."""
    law = l_distribution(model)
    return (law.central_abs_moment(2, solution.d_star),
            law.central_abs_moment(3, solution.d_star))


def berry_esseen_bounds(model: SystemModel, solution: MaxMinSolution, n: int, epsilon: float,
                        eta: float) -> tuple[float, float, float, float]:
    """Normal-approximation brackets (upper, lower, V, T) on -log phi*_N.

    Only the main terms are returned; the unknown O(log(eta/eps)) terms are
    left to the caller. A bracket whose Q^-1 argument leaves (0, 1) is NaN.
    """
    _check_eta(epsilon, eta)
    v, t = increment_moments(model, solution)
    be = 6 * t / math.sqrt(n * v**3)
    centre = n * solution.d_star
    spread = math.sqrt(n * v)
    up_arg = epsilon + epsilon / eta + be
    lo_arg = epsilon - epsilon / eta - be
    upper = centre - spread * q_inverse(up_arg) if 0 < up_arg < 1 else math.nan
    lower = centre - spread * q_inverse(lo_arg) if 0 < lo_arg < 1 else math.nan
    return upper, lower, v, t


@dataclass
class BoundReport:
    n: int
    epsilon: float
    eta: float
    weak_rate: float
    strong_converse: float
    achievability_theta: float
    be_upper_main: float
    be_lower_main: float
    log_term: float
    v: float
    t: float

    COLUMNS = ("n", "epsilon", "eta", "weak_rate", "strong_converse", "achievability_theta",
               "be_upper_main", "be_lower_main", "log_term", "v", "t")

    def as_dict(self) -> dict:
        return asdict(self)


def bound_report(model: SystemModel, solution: MaxMinSolution, n: int, epsilon: float,
                 eta: float = 10.0, delta: float | None = None) -> BoundReport:
    """All bounds at one (N, eps, eta). Strategy-free quantities are NaN for heterogeneous models."""
    weak = weak_converse_rate(model, solution, n, epsilon)
    log_term = math.log(eta / epsilon)
    nan = math.nan
    if not is_homogeneous(model):
        return BoundReport(n, epsilon, eta, weak, nan, nan, nan, nan, log_term, nan, nan)
    sc = _or_nan(lambda: strong_converse(model, solution, n, epsilon, eta))
    if model.M >= 2:
        ach = _or_nan(lambda: achievability_threshold(model, solution, n, epsilon, eta, delta)[0])
    else:
        ach = _or_nan(lambda: inv_n(model, solution, n, epsilon - epsilon / eta))
    upper, lower, v, t = berry_esseen_bounds(model, solution, n, epsilon, eta)
    return BoundReport(n, epsilon, eta, weak, sc, ach, upper, lower, log_term, v, t)


def _or_nan(fn) -> float:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return float(fn())
    except ValueError:
        return math.nan
