"""Moderate-deviation rates and exponential-tilting importance sampling for
recursive stochastic algorithms ``X_{i+1} = X_i + (b(X_i) + noise_i)/n``."""

from .engine import BACKEND
from .errors import (ConfigError, ConvergenceError, DegenerateEstimateError, DomainError, ModelError,
                     ModevError, UnsupportedTiltError)
from .model import ModelSpec, get_model, validate_model
from .ratefn import (ControlPath, RateSolution, controllability_gramian, exit_rate, halfspace_rate,
                     laplace_value, legendre, terminal_rate)
from .schedule import ControlSchedule, tilt_schedule_from_control
from .simulate import (ControlledTrajectory, conditional_mean_path, control_cost, martingale_residual,
                       simulate_controlled, simulate_y)
from .importance import (HalfspaceEvent, ISEstimate, SupNormEvent, is_laplace, is_probability, log_likelihood_ratio,
                         parse_event, sample_tilted, terminal_event)
from .harness import LadderReport, check_convergence, discrete_gronwall_envelope, emit_report, run_ladder

__version__ = "0.1.0"
