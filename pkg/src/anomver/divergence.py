"""Max-min Kullback-Leibler divergence over component-selection distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import ModelError, SystemModel, kl


@dataclass(frozen=True)
class MaxMinSolution:
    d_star: float
    alpha_star: np.ndarray
    beta_star: np.ndarray

    def to_dict(self) -> dict:
        return {
            "d_star": self.d_star,
            "alpha_star": self.alpha_star.tolist(),
            "beta_star": self.beta_star.tolist(),
        }


def per_component_divergence(model: SystemModel) -> np.ndarray:
    """KL(p0^u || p1^u) for u = 1..M."""
    d = np.array([kl(ch.p0, ch.p1) for ch in model.channels])
    if np.any(d <= 0):
        bad = int(np.argmin(d)) + 1
        raise ModelError(f"component {bad} has zero divergence; it cannot be tested")
    return d


def divergence_matrix(model: SystemModel) -> np.ndarray:
    """D[j, u]: expected LLR of hypothesis 0 vs j when probing u under hypothesis 0.

    Diagonal only, since probing a component says nothing about the others.
    """
    return np.diag(per_component_divergence(model))


def max_min_divergence(model: SystemModel) -> MaxMinSolution:
    """Closed-form saddle point: D* is the harmonic combination of the D_u^u.

    The maximizing and minimizing distributions coincide and put mass on
    each component in inverse proportion to its divergence, so that
    ``alpha(u) * D_u^u == D*`` for every component.
    """
    d = per_component_divergence(model)
    d_star = 1.0 / float(np.sum(1.0 / d))
    weights = d_star / d
    weights = weights / weights.sum()
    weights.setflags(write=False)
    return MaxMinSolution(d_star, weights, weights.copy())


def _compositions(m: int, total: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``m`` summing to ``total``."""
    if m == 1:
        return np.array([[total]])
    head = np.arange(total + 1)
    if m == 2:
        return np.stack([head, total - head], axis=1)
    return np.vstack([
        np.hstack([np.full((len(rest), 1), a), rest])
        for a in head
        for rest in (_compositions(m - 1, total - a),)
    ])


def _simplex_chunks(m: int, resolution: float):
    steps = int(round(1.0 / resolution))
    if m <= 2:
        yield _compositions(m, steps) / steps
        return
    for a in range(steps + 1):
        rest = _compositions(m - 1, steps - a)
        yield np.hstack([np.full((len(rest), 1), a), rest]) / steps


def _check_grid(model: SystemModel, grid_resolution: float) -> None:
    if model.M > 4:
        raise NotImplementedError("grid search over the simplex is limited to M <= 4")
    if not 0 < grid_resolution <= 0.1:
        raise ValueError("grid_resolution must lie in (0, 0.1]")


def brute_force_maxmin(model: SystemModel, grid_resolution: float = 1e-3) -> tuple[float, np.ndarray]:
    """Grid search for max_alpha min_j sum_u alpha(u) D_j^u. Test oracle only."""
    _check_grid(model, grid_resolution)
    dmat = divergence_matrix(model)
    best_val, best_pt = -np.inf, None
    for grid in _simplex_chunks(model.M, grid_resolution):
        # inner[k] = min_j sum_u alpha_k(u) D[j, u]
        inner = (grid @ dmat.T).min(axis=1)
        k = int(np.argmax(inner))
        if inner[k] > best_val:
            best_val, best_pt = float(inner[k]), grid[k]
    return best_val, best_pt


def brute_force_minmax(model: SystemModel, grid_resolution: float = 1e-3) -> tuple[float, np.ndarray]:
    """Grid search for min_beta max_u sum_j beta(j) D_j^u."""
    _check_grid(model, grid_resolution)
    dmat = divergence_matrix(model)
    best_val, best_pt = np.inf, None
    for grid in _simplex_chunks(model.M, grid_resolution):
        outer = (grid @ dmat).max(axis=1)
        k = int(np.argmin(outer))
        if outer[k] < best_val:
            best_val, best_pt = float(outer[k]), grid[k]
    return best_val, best_pt
