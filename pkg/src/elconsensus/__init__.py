"""Leader-follower consensus of Euler-Lagrange spacecraft under relative-position sensor bias.

The controller is distributed and model independent: a sliding variable built
from biased relative positions, a Laplacian-coupled sliding-mode force, and a
bias estimator driven by the measured velocity.
"""

from .analyze import (
    ConvergenceReport,
    closed_form_solution,
    fit_decay_rate,
    lyapunov_value,
    theoretical_rate,
    verify_theorem,
)
from .control import (
    ControlGains,
    bias_update,
    control_force_agent,
    control_force_stacked,
    sliding_variable,
    smoothed_sign,
    validate_gains,
)
from .dynamics import (
    AgentParams,
    AgentState,
    LeaderOrbit,
    bound_constants,
    coriolis_matrix,
    el_accel,
    follower_radius,
    gravity_vector,
    mass_matrix,
)
from .graph import (
    NetworkTopology,
    augmented_matrix,
    degree_matrix,
    kron_expand,
    laplacian,
    spectral_report,
)
from .simulate import Scenario, SimTrace, closed_loop_derivative, integrate, sample_initial_conditions

__version__ = "0.1.0"
