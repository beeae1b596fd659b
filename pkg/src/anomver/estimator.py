"""scikit-learn style wrapper around a selection strategy and a confidence threshold.

A recorded history of N experiments is one row of 2N integers: the probed
components ``u_1..u_N`` (1-based) followed by the observed symbols
``y_1..y_N``. Labels use 0 for safe and 1 for unsafe.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .belief import RecordingTrajectory, confidence_from_z
from .channels import SystemModel, inverse_cdf, sample_observation
from .divergence import max_min_divergence
from .sim import SAMPLE_STREAM, calibrate_threshold, trial_rng
from .strategies import make_strategy, select

SAFE_LABEL, UNSAFE_LABEL = 0, 1


class ActiveVerifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Decide safe/unsafe from recorded histories by thresholding the confidence level.

    Parameters
    ----------
    model : SystemModel
        Channels and prior. Fitting needs no data: the threshold is set by
        simulating the safe hypothesis under ``strategy``.
    strategy : {"das", "ors", "round_robin"}
    horizon : int
        Number of experiments per history.
    epsilon : float
        Allowed probability of declaring an actually safe system unsafe.
    threshold : "calibrated" or float
        A float skips calibration.
    trials : int
        Simulated trajectories used for calibration.
    random_state : int
    """

    def __init__(self, model: SystemModel | None = None, strategy: str = "das",
                 horizon: int = 100, epsilon: float = 0.1, threshold="calibrated",
                 trials: int = 10_000, random_state: int = 0):
        self.model = model
        self.strategy = strategy
        self.horizon = horizon
        self.epsilon = epsilon
        self.threshold = threshold
        self.trials = trials
        self.random_state = random_state

    def _validate_params(self):
        if not isinstance(self.model, SystemModel):
            raise ValueError("model must be a SystemModel")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be at least 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    def fit(self, X=None, y=None):
        """Solve the max-min problem and set ``theta_``. ``X`` and ``y`` are ignored."""
        self._validate_params()
        self.solution_ = max_min_divergence(self.model)
        self.strategy_ = make_strategy(self.strategy, self.solution_)
        if isinstance(self.threshold, str):
            if self.threshold != "calibrated":
                raise ValueError("threshold must be 'calibrated' or a number")
            self.theta_ = calibrate_threshold(self.model, self.solution_, self.strategy_,
                                              int(self.horizon), self.epsilon, self.trials,
                                              int(self.random_state))
        else:
            self.theta_ = float(self.threshold)
        self.classes_ = np.array([SAFE_LABEL, UNSAFE_LABEL])
        self.n_features_in_ = 2 * int(self.horizon)
        return self

    def _check_histories(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.int64)
        n = int(self.horizon)
        if X.shape[1] != 2 * n:
            raise ValueError(f"expected {2 * n} columns (components then symbols), got {X.shape[1]}")
        u, y = X[:, :n], X[:, n:]
        if u.min() < 1 or u.max() > self.model.M:
            raise ValueError(f"component indices must lie in 1..{self.model.M}")
        sizes = np.array([ch.alphabet_size for ch in self.model.channels])
        if y.min() < 0 or np.any(y >= sizes[u - 1]):
            raise ValueError("observation symbol outside the probed component's alphabet")
        return X

    def transform(self, X) -> np.ndarray:
        """Accumulated log-likelihood ratios z(j), one column per component."""
        check_is_fitted(self, "solution_")
        X = self._check_histories(X)
        n = int(self.horizon)
        u, y = X[:, :n] - 1, X[:, n:]
        llr = self.model.llr_table()[u, y]
        z = np.zeros((X.shape[0], self.model.M))
        for j in range(self.model.M):
            z[:, j] = np.where(u == j, llr, 0.0).sum(axis=1)
        return z

    def decision_function(self, X) -> np.ndarray:
        """Confidence level of each history (large means safe)."""
        return np.atleast_1d(confidence_from_z(self.transform(X), self.model.log_prior_tilde))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        safe = self.decision_function(X) >= self.theta_
        return np.where(safe, SAFE_LABEL, UNSAFE_LABEL)

    def sample(self, n_samples: int, hypothesis="mixture", random_state: int | None = None):
        """Simulate histories with the fitted strategy.

        ``hypothesis`` is 0 (safe), a component index, or ``"mixture"`` to
        draw safe/unsafe from the model prior and the anomaly from the
        conditional prior. Returns ``(X, labels)``.
        """
        check_is_fitted(self, "solution_")
        seed = self.random_state if random_state is None else random_state
        n = int(self.horizon)
        X = np.empty((n_samples, 2 * n), dtype=np.int64)
        labels = np.empty(n_samples, dtype=np.int64)
        cum_prior = np.cumsum(self.model.prior)
        for i in range(n_samples):
            rng = trial_rng(int(seed), SAMPLE_STREAM, i)
            x = inverse_cdf(cum_prior, rng.random()) if hypothesis == "mixture" else int(hypothesis)
            rec = RecordingTrajectory(self.model, self.solution_)
            for _ in range(n):
                u = select(self.strategy_, rec.state, self.model, rng)
                rec.record(u, sample_observation(self.model, x, u, rng))
            X[i, :n], X[i, n:] = rec.components, rec.observations
            labels[i] = SAFE_LABEL if x == 0 else UNSAFE_LABEL
        return X, labels
