"""Tabular mean-field game solvers built around softmax trust-region policy updates."""

from .core import (MfMdp, ValueTable, induced_kernel, kernel_power_apply, occupation_marginal,
                   occupation_measure, optimal_value_table, policy_evaluation_regularized,
                   soft_value_iteration, stationary_distribution, uniform_policy)
from .errors import (ConfigError, ConstructionError, ConvergenceError, InvalidArgumentError,
                     MfgError, NumericalError, SolverError)
from .evaluation import (exploitability, mfne_residual, monotonicity_probe,
                         pinsker_bound_check)
from .exact import (ExactTrpoConfig, MftrpoConfig, exact_fixed_point, exact_mftrpo,
                    exact_trpo, policy_update)
from .sampled import (MixturePolicy, SampledMftrpoConfig, SampledTrpoConfig,
                      population_pushforward_estimate, sample_based_mftrpo,
                      sample_based_trpo)
from .trace import IterationRecord, RunTrace

__version__ = "0.1.0"
