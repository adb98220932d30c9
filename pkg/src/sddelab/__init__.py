"""Small-noise stochastic delay equations: simulation, action functionals,
quasipotentials and exit-time experiments."""
from .action import (ActionReport, action_gradient, concat_action_split, local_rate,
                     path_action, recover_control)
from .errors import (BlowUpError, ConfigError, ConvergenceError, DetectionFailure,
                     EllipticityError, GridError, ModelContractError, NumericalFailure,
                     SDDELabError, UnusableEstimateError)
from .exitlab import (ImportanceReport, SweepRow, SweepTable, epsilon_sweep,
                      estimate_mean_exit, importance_sampled_exit_prob)
from .expressions import build_expression_model
from .integrate import (AttractionReport, Control, DomainSpec, ExitRecord, OrbitSettings,
                        check_uniform_attraction, detect_periodic_orbit, first_exit,
                        first_exit_batch, simulate_controlled_sdde, simulate_sdde,
                        solve_controlled, solve_dde)
from .models import (CoefficientModel, LinearDelayParams, build_linear_model,
                     build_negative_feedback_model, build_ou_model, critical_delay,
                     sufficient_stability_delay,
                     rightmost_root_real_part, validate_model)
from .optimize import OptimizerSettings
from .quasipotential import (BoundaryHit, PinnedSegment, QuasipotentialResult,
                             ThresholdEstimate, boundary_minimizers, boundary_quasipotential,
                             connect_to_orbit_path, exit_thresholds, minimize_action,
                             quasipotential_at)
from .segments import (GridSpec, HistorySegment, Orbit, PathGrid, distance_to_orbit,
                       segment_at, sup_distance)

__version__ = "0.1.0"
