"""Discrete-time semi-Markov model of high-frequency returns."""

__version__ = "0.1.0"

from .errors import EstimationError, GridCapError, PreconditionError, ReducibleChainError, SmpError
from .fpt import (FptSolution, fpt_day_boundary, fpt_joint_within_day, fpt_multi_day,
                  fpt_stationary, fpt_within_day)
from .inference import run_tests, sojourn_pmf, test_statistic
from .kernel import (OvernightChain, SemiMarkovKernel, derive_views, estimate_kernel,
                     estimate_markov_baseline, estimate_overnight, geometric_kernel,
                     load_model, markov_to_kernel, save_model)
from .moments import (cross_moment, expected_accumulation, intraday_autocov, markov_squared_acf,
                      moment_surfaces, squared_acf_conditional, squared_acf_stationary)
from .simulate import SimConfig, empirical_fpt, empirical_sq_acf, simulate_markov, simulate_smp
from .smp_solver import solve_backward, solve_phi, stationary_law
from .state_model import (DayStructure, DiscretizedPath, StateSpace, compute_returns, discretize,
                          path_to_prices)

__all__ = [name for name in dir() if not name.startswith("_")]
