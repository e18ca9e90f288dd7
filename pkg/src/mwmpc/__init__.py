"""Model predictive control with monotonically increasing stage-cost weights.

The cost sum_i (i/N)^m l(x_i) replaces a terminal constraint; ``certificates``
checks the inequalities that make the closed loop stable.
"""

from .dynamics import (BUILTIN_SYSTEMS, DimensionError, ModelError, StateTrajectory,
                       SystemModel, UnsupportedOperation, builtin_system, local_step, rollout)
from .mpc_loop import MpcConfig, SimulationRecord, StepRecord, run_closed_loop, shifted_candidate
from .solver import SolveResult, SolverConfig, SolverFailure, gradient, grid_oracle, solve
from .weighting import ProofConstants, WeightSpec, proof_constants, weighted_cost, weights

__version__ = "0.1.0"
