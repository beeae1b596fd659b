"""Seeded Monte Carlo estimation of the verification probabilities.

Every trial owns a random generator seeded from ``(seed, stream, trial)``,
so results do not depend on how trials are batched or how many worker
threads run them. Streams separate the safe-hypothesis trials, the
anomalous-hypothesis trials and threshold calibration.

Two estimators of the incorrect-verification probability phi are provided:

``direct``
    fraction of anomalous-hypothesis trials (anomaly drawn from the prior)
    declared safe.
``likelihood_ratio``
    mean of ``exp(-C) * 1{declared safe}`` over the safe-hypothesis trials.
    The confidence C is the log-likelihood ratio of the whole history
    (selection probabilities cancel), so this is an unbiased estimate of
    the same quantity that stays usable when phi is far below 1/trials.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import bounds as _bounds
from .belief import TrajectoryState, confidence, confidence_from_z, update
from .channels import SystemModel, inverse_cdf, sample_observation
from .divergence import MaxMinSolution
from .strategies import (DAS, ORS, InferenceRule, RoundRobin, SelectionStrategy, Threshold,
                         infer_many, make_strategy, select)

NULL_STREAM, ALT_STREAM, CALIBRATION_STREAM, SAMPLE_STREAM = 0, 1, 2, 3
BLOCK = 2048
Z95 = 1.959963984540054
Z95_ONE_SIDED = 1.6448536269514722
PHI_METHODS = ("direct", "likelihood_ratio")


def trial_rng(seed: int, stream: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, trial])


def run_trial(model: SystemModel, solution: MaxMinSolution, strategy: SelectionStrategy,
              x: int, n: int, rng: np.random.Generator) -> tuple[TrajectoryState, float]:
    """Play ``n`` experiments under hypothesis ``x``; return the final state and confidence."""
    if not 0 <= x <= model.M:
        raise IndexError(f"hypothesis {x} outside 0..{model.M}")
    state = TrajectoryState.zero(model.M)
    for _ in range(n):
        u = select(strategy, state, model, rng)
        y = sample_observation(model, x, u, rng)
        state = update(state, model, solution, u, y)
    return state, confidence(state, model)


def _draws_per_step(strategy: SelectionStrategy) -> int:
    return 2 if isinstance(strategy, ORS) else 1


def simulate_block(model: SystemModel, solution: MaxMinSolution, strategy: SelectionStrategy,
                   hyps: np.ndarray, uniforms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized trajectories for a batch of trials.

    ``uniforms`` has shape (B, n, k): per step, k=2 (selection, observation)
    for ORS and k=1 (observation) otherwise. Consumes them exactly as
    :func:`run_trial` would, so a trial's outcome is the same either way.
    Returns ``(z, z_bar)`` with shapes (B, M) and (B,).
    """
    b, n, _ = uniforms.shape
    m = model.M
    llr_tab = model.llr_table()
    cdfs = model.cdf_table()
    beta = np.asarray(solution.beta_star)
    log_prior = model.log_prior_tilde
    rows = np.arange(b)
    z = np.zeros((b, m))
    z_bar = np.zeros(b)
    anomaly = np.asarray(hyps) - 1
    for t in range(n):
        if isinstance(strategy, ORS):
            u = inverse_cdf(strategy.cum_weights, uniforms[:, t, 0])
            v = uniforms[:, t, 1]
        elif isinstance(strategy, DAS):
            u = np.argmin(z - log_prior, axis=1)
            v = uniforms[:, t, 0]
        elif isinstance(strategy, RoundRobin):
            u = np.full(b, t % m)
            v = uniforms[:, t, 0]
        else:
            raise TypeError(f"not a selection strategy: {strategy!r}")
        cdf = cdfs[u, (anomaly == u).astype(np.intp)]
        y = np.minimum((cdf <= v[:, None]).sum(axis=1), cdf.shape[1] - 1)
        step = llr_tab[u, y]
        z[rows, u] += step
        z_bar += beta[u] * step
    return z, z_bar


def _block_trials(model, solution, strategy, n, seed, stream, start, stop):
    k = _draws_per_step(strategy)
    count = stop - start
    hyps = np.zeros(count, dtype=np.intp)
    uniforms = np.empty((count, n, k))
    cum_prior = np.cumsum(model.prior_tilde)
    for i, trial in enumerate(range(start, stop)):
        rng = trial_rng(seed, stream, trial)
        if stream == ALT_STREAM:
            hyps[i] = inverse_cdf(cum_prior, rng.random()) + 1
        uniforms[i] = rng.random((n, k))
    z, z_bar = simulate_block(model, solution, strategy, hyps, uniforms)
    return hyps, z, z_bar


@dataclass
class TrialBatch:
    hyps: np.ndarray
    z: np.ndarray
    z_bar: np.ndarray
    confidence: np.ndarray


def simulate(model: SystemModel, solution: MaxMinSolution, strategy: SelectionStrategy, n: int,
             trials: int, seed: int, stream: int = NULL_STREAM, threads: int = 1) -> TrialBatch:
    """Run ``trials`` independent trajectories of length ``n``.

    Safe-hypothesis trials use ``NULL_STREAM``; ``ALT_STREAM`` draws the
    anomalous component of each trial from the prior over anomalies.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if n < 0:
        raise ValueError("horizon must be nonnegative")
    spans = [(s, min(s + BLOCK, trials)) for s in range(0, trials, BLOCK)]

    def work(span):
        return _block_trials(model, solution, strategy, n, seed, stream, *span)

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, spans))
    else:
        parts = [work(span) for span in spans]
    hyps = np.concatenate([p[0] for p in parts])
    z = np.vstack([p[1] for p in parts])
    z_bar = np.concatenate([p[2] for p in parts])
    return TrialBatch(hyps, z, z_bar, confidence_from_z(z, model.log_prior_tilde))


def _ci(p: float, trials: int) -> float:
    return Z95 * math.sqrt(max(p * (1 - p), 0.0) / trials)


@dataclass
class EstimateReport:
    psi_hat: float
    phi_hat: float
    psi_ci: float
    phi_ci: float
    trials: int
    seed: int
    method: str = "direct"


def estimate(model: SystemModel, solution: MaxMinSolution, strategy: SelectionStrategy,
             rule: InferenceRule, n: int, trials: int, seed: int, phi_method: str = "direct",
             threads: int = 1) -> EstimateReport:
    """Estimate psi_N and phi_N with 95% normal-approximation half-widths."""
    if phi_method == "lr":
        phi_method = "likelihood_ratio"
    if phi_method not in PHI_METHODS:
        raise ValueError(f"phi_method must be one of {PHI_METHODS}")
    null = simulate(model, solution, strategy, n, trials, seed, NULL_STREAM, threads)
    safe0 = infer_many(rule, null.confidence)
    psi = float(safe0.mean())
    if phi_method == "direct":
        alt = simulate(model, solution, strategy, n, trials, seed, ALT_STREAM, threads)
        phi = float(infer_many(rule, alt.confidence).mean())
        phi_ci = _ci(phi, trials)
    else:
        w = np.where(safe0, np.exp(-np.where(safe0, null.confidence, 0.0)), 0.0)
        phi = float(w.mean())
        phi_ci = Z95 * float(w.std(ddof=1)) / math.sqrt(trials) if trials > 1 else math.inf
    return EstimateReport(psi, phi, _ci(psi, trials), phi_ci, trials, seed, phi_method)


def calibrate_threshold(model: SystemModel, solution: MaxMinSolution, strategy: SelectionStrategy,
                        n: int, epsilon: float, trials: int, seed: int, threads: int = 1) -> float:
    """Largest sampled confidence with at most a (conservatively shrunk) eps fraction below it.

    eps is first lowered by the one-sided 95% binomial margin so the
    resulting threshold keeps psi >= 1 - eps with high probability.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    batch = simulate(model, solution, strategy, n, trials, seed, CALIBRATION_STREAM, threads)
    conf = np.sort(batch.confidence)
    target = epsilon - Z95_ONE_SIDED * math.sqrt(epsilon * (1 - epsilon) / trials)
    k = min(max(int(math.floor(target * trials + 1e-9)), 0), trials - 1)
    return float(conf[k])


def epsilon_schedule(schedule) -> callable:
    """Turn a constant, a callable or a ``"c/n"`` string into eps(N).

    Rejects schedules whose -log(eps_N)/N does not vanish, since the
    achievability theory needs eps to decay subexponentially.
    """
    if callable(schedule):
        fn = schedule
    elif isinstance(schedule, str) and "/n" in schedule.replace(" ", "").lower():
        c = float(schedule.replace(" ", "").lower().split("/n")[0] or 1.0)
        if c <= 0:
            raise ValueError("schedule constant must be positive")
        fn = lambda n: c / n  # noqa: E731
    else:
        c = float(schedule)
        if not 0 < c < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        fn = lambda n: c  # noqa: E731
    probe = fn(10**6)
    if not 0 < probe < 1 or -math.log(probe) / 10**6 > 1e-3:
        raise ValueError("epsilon schedule decays too fast: -log(eps_N)/N must vanish")
    return fn


@dataclass
class SweepRecord:
    strategy: str
    n: int
    epsilon: float
    eta: float
    theta: float
    psi_hat: float
    psi_ci: float
    phi_hat: float
    phi_ci: float
    neg_log_phi: float
    censored: bool
    weak_rate: float = math.nan
    strong_converse: float = math.nan
    achievability_theta: float = math.nan
    be_upper_main: float = math.nan
    be_lower_main: float = math.nan
    log_term: float = math.nan
    v: float = math.nan
    t: float = math.nan
    error: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRecord))


def _strategy_name(s) -> str:
    return s if isinstance(s, str) else s.name


def sweep(model: SystemModel, solution: MaxMinSolution, strategies, n_values, eps_schedule,
          trials: int, seed: int, eta: float = 10.0, delta: float | None = None,
          phi_method: str = "direct", threads: int = 1) -> list[SweepRecord]:
    """Calibrate, estimate and bound every (strategy, N) pair.

    A failing point yields a record carrying the error message instead of
    aborting the sweep. Records are sorted by (strategy name, N).
    """
    eps_fn = epsilon_schedule(eps_schedule)
    records = []
    for strat, n in itertools.product(strategies, n_values):
        name = _strategy_name(strat)
        eps = float(eps_fn(n))
        try:
            obj = make_strategy(strat, solution) if isinstance(strat, str) else strat
            theta = calibrate_threshold(model, solution, obj, n, eps, trials, seed, threads)
            est = estimate(model, solution, obj, Threshold(theta), n, trials, seed,
                           phi_method, threads)
            censored = est.phi_hat <= 0
            phi_for_log = 3.0 / trials if censored else est.phi_hat
            rec = SweepRecord(name, n, eps, eta, theta, est.psi_hat, est.psi_ci, est.phi_hat,
                              est.phi_ci, -math.log(phi_for_log), censored)
            report = _bounds.bound_report(model, solution, n, eps, eta, delta)
            for key, value in report.as_dict().items():
                if key not in ("n", "epsilon", "eta"):
                    setattr(rec, key, value)
        except Exception as exc:  # recorded per point, see docstring
            nan = math.nan
            rec = SweepRecord(name, n, eps, eta, nan, nan, nan, nan, nan, nan, False,
                              error=f"{type(exc).__name__}: {exc}")
        records.append(rec)
    records.sort(key=lambda r: (r.strategy, r.n))
    return records


@dataclass
class OracleResult:
    phi_opt: float
    best_tree: list
    trees_searched: int
    phi_hull: float = math.nan
    epsilon: float = math.nan
    n: int = 0
    nodes: list = field(default_factory=list)


def _np_curve(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (P(A), Q(A)) of the Neyman-Pearson tradeoff, starting at (0, 0)."""
    order = np.lexsort((-p, -(p / q)))
    return (np.concatenate([[0.0], np.cumsum(p[order])]),
            np.concatenate([[0.0], np.cumsum(q[order])]))


def _curve_at(cp: np.ndarray, cq: np.ndarray, level: float) -> float:
    """Smallest Q(A) with P(A) >= level, randomizing on the boundary outcome."""
    level = min(level, cp[-1])
    k = int(np.searchsorted(cp, level - 1e-15, side="left"))
    if k == 0:
        return float(cq[0])
    span = cp[k] - cp[k - 1]
    frac = 0.0 if span <= 0 else (level - cp[k - 1]) / span
    return float(cq[k - 1] + min(max(frac, 0.0), 1.0) * (cq[k] - cq[k - 1]))


def _lower_hull_at(points: np.ndarray, level: float) -> float:
    """Lower convex envelope of a point cloud in the (P, Q) plane, evaluated at P = level."""
    pts = np.unique(np.round(points, 15), axis=0)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    hull = []
    for pt in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (pt[1] - y1) - (y2 - y1) * (pt[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(pt)
    hull = np.array(hull)
    # the tradeoff is monotone: anything achieving P >= level qualifies
    best = math.inf
    for (x1, y1), (x2, y2) in zip(hull[:-1], hull[1:]):
        if x2 >= level - 1e-15:
            if x1 >= level:
                best = min(best, y1)
            else:
                best = min(best, y1 + (level - x1) / (x2 - x1) * (y2 - y1))
    if hull[-1][0] >= level - 1e-15:
        best = min(best, hull[-1][1])
    return float(best)


def brute_force_small(model: SystemModel, n: int, epsilon: float) -> OracleResult:
    """Exact minimum of phi over deterministic selection trees for tiny instances.

    A deterministic strategy picks the next component as a function of the
    observations so far, i.e. a tree with one decision per observation
    prefix. For every tree the law of the full history is computed under the
    safe hypothesis (P) and under the prior mixture of anomalies (Q); the
    Neyman-Pearson lemma with a randomized boundary then gives the least
    Q(safe) subject to P(safe) >= 1 - eps.

    ``phi_opt`` is the best tree and is an upper bound on the optimum over
    all strategies. ``phi_hull`` is the lower convex envelope over all
    trees' tradeoff curves, a lower bound that also covers randomized
    selection.
    """
    ysz = model.max_alphabet
    if model.M > 2 or ysz > 2 or n > 4 or n < 1:
        raise NotImplementedError("oracle supports M <= 2, binary alphabets and 1 <= n <= 4")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    m = model.M
    nodes = [pref for length in range(n) for pref in itertools.product(range(ysz), repeat=length)]
    node_index = {pref: i for i, pref in enumerate(nodes)}
    leaves = np.array(list(itertools.product(range(ysz), repeat=n)), dtype=np.intp)
    leaf_nodes = np.array([[node_index[tuple(leaf[:t])] for t in range(n)] for leaf in leaves])

    p0 = np.array([ch.p0.probs for ch in model.channels])  # (M, Y)
    p1 = np.array([ch.p1.probs for ch in model.channels])
    trees = np.array(list(itertools.product(range(m), repeat=len(nodes))), dtype=np.intp)
    u = trees[:, leaf_nodes]  # (T, L, n)
    y = np.broadcast_to(leaves, u.shape)
    probs0 = p0[u, y]
    probs1 = p1[u, y]
    pp = probs0.prod(axis=2)  # (T, L)
    qq = np.zeros_like(pp)
    for j in range(m):
        qq += model.prior_tilde[j] * np.where(u == j, probs1, probs0).prod(axis=2)

    level = 1 - epsilon
    best, best_t = math.inf, 0
    vertices = []
    for t in range(len(trees)):
        cp, cq = _np_curve(pp[t], qq[t])
        val = _curve_at(cp, cq, level)
        vertices.append(np.stack([cp, cq], axis=1))
        if val < best - 1e-15:
            best, best_t = val, t
    hull = _lower_hull_at(np.vstack(vertices), level)
    return OracleResult(best, (trees[best_t] + 1).tolist(), len(trees), hull, epsilon, n,
                        [list(pref) for pref in nodes])

