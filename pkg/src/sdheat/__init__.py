"""Null control of semi-discrete stochastic semilinear heat equations.

The package discretizes (0,1) with centered finite differences, models the
driving noise with a binary scenario tree so conditional expectations are
exact, builds Carleman-type space-time weights, and computes penalized
optimal controls whose terminal state decays exponentially in 1/h under a
coupled parameter schedule.
"""

from .calculus import (GridFunction, avg, diff, identity_residuals, inner,
                       integrate, laplace, trace, zero_extend)
from .config import (ExperimentConfig, SweepPointRejected, delta_schedule,
                     load_config)
from .hum import (CarlemanReport, ContractionError, EpsilonSchedule,
                  HUMProblem, HUMResult, SemilinearResult, carleman_ratio,
                  epsilon_schedule, lift_diffusion_control, select_lambda,
                  snorm_squared, solve_hum_linear, solve_hum_semilinear,
                  terminal_bound_check, weighted_initial_norm)
from .mesh import Interval, Mesh, NodeSet, build_mesh, outward_normal
from .solvers import (BackwardSystemSpec, ForwardSystemSpec, ImplicitStep,
                      MonteCarloReport, NonlinearitySpec, duality_residual,
                      linear_nonlinearity, monte_carlo_check,
                      second_moment_reference, sine_nonlinearity,
                      solve_backward, solve_forward, zero_nonlinearity)
from .suites import run_suite
from .tree import (AdaptedProcess, ScenarioTree, build_tree, dyadic_mean,
                   ito_product_residual, sample_paths)
from .weights import (ExpansionFit, PsiFunction, TimeWeight, WeightParams,
                      WeightSet, admissible, build_psi, build_time_weight,
                      build_weight_set, expansion_order)

__version__ = "0.1.0"
