"""Belief-space trajectory optimization with uncertainty constraints.

Plans robot trajectories under motion, measurement, and estimation
uncertainty by solving an uncertainty-constrained stochastic optimal control
problem with an augmented-Lagrangian iLQG solver over EKF belief dynamics,
then validates the resulting affine feedback policy in closed-loop Monte
Carlo simulation.
"""

from .belief import Belief, max_eigenvalue, symmetrize_and_clamp, unvech, vech, wrap_angle
from .costs import (
    ALState,
    ConstraintSpec,
    CostWeights,
    constraint_eval,
    multiplier_update,
    penalty_phi,
    penalty_phi_prime,
    penalty_total,
    stage_cost,
    terminal_cost,
)
from .dynamics import BeliefModel, belief_jacobians, noise_matrix, propagate
from .motion import MotionModel, holonomic, numeric_jacobian, step, unicycle
from .sensing import (
    CameraParams,
    Feature,
    FeatureMap,
    Obstacle,
    assemble_measurement,
    project_stereo,
    visibility_prob,
    world_to_camera,
)
from .simulation import ExecutionTrace, MonteCarloSummary, execute_once, monte_carlo
from .solver import (
    Policy,
    SolveReport,
    SolverProblem,
    backward_pass,
    forward_pass,
    inner_solve,
    outer_solve,
    straight_line_controls,
)

__version__ = "0.1.0"

__all__ = [
    "ALState",
    "Belief",
    "BeliefModel",
    "CameraParams",
    "ConstraintSpec",
    "CostWeights",
    "ExecutionTrace",
    "Feature",
    "FeatureMap",
    "MonteCarloSummary",
    "MotionModel",
    "Obstacle",
    "Policy",
    "SolveReport",
    "SolverProblem",
    "assemble_measurement",
    "backward_pass",
    "belief_jacobians",
    "constraint_eval",
    "execute_once",
    "forward_pass",
    "holonomic",
    "inner_solve",
    "max_eigenvalue",
    "monte_carlo",
    "multiplier_update",
    "noise_matrix",
    "numeric_jacobian",
    "outer_solve",
    "penalty_phi",
    "penalty_phi_prime",
    "penalty_total",
    "project_stereo",
    "propagate",
    "stage_cost",
    "step",
    "straight_line_controls",
    "symmetrize_and_clamp",
    "terminal_cost",
    "unicycle",
    "unvech",
    "vech",
    "visibility_prob",
    "wrap_angle",
    "world_to_camera",
]
