"""Fixed-horizon active anomaly verification: strategies, simulation and bounds."""

from .channels import (ComponentChannel, DiscreteDistribution, ModelError, SystemModel,
                       cross_entropy, homogeneous_model, is_homogeneous, kl, llr, load_model,
                       model_from_dict, sample_observation)
from .divergence import (MaxMinSolution, brute_force_maxmin, brute_force_minmax,
                         max_min_divergence, per_component_divergence)
from .belief import (Posterior, RecordingTrajectory, TrajectoryState, confidence, decompose,
                     posterior, update)
from .strategies import (DAS, ORS, AlwaysSafe, RoundRobin, Threshold, infer, make_strategy,
                         select, zeta)
from .bounds import (BoundReport, DiscreteValueDistribution, achievability_constants,
                     achievability_threshold, berry_esseen_bounds, bound_report, convolve_n,
                     l_distribution, quantile, strong_converse, weak_converse_rate)
from .sim import (EstimateReport, OracleResult, SweepRecord, brute_force_small,
                  calibrate_threshold, estimate, run_trial, simulate, sweep)

__version__ = "0.1.0"
