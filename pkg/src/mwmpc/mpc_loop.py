"""Receding-horizon closed loop with shifted-candidate warm starts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import SystemModel, as_state, rollout
from .solver import SolveResult, SolverConfig, SolverFailure, minimize_box, solve
from .weighting import WeightSpec, weighted_cost

log = logging.getLogger(__name__)

STEPS_EXHAUSTED = "steps_exhausted"
STOP_LEVEL = "stop_level_reached"
SOLVER_FAILURE = "solver_failure"


@dataclass(frozen=True)
class MpcConfig:
    weight_spec: WeightSpec
    solver: SolverConfig = SolverConfig()
    steps: int = 50
    stop_level: float = 1e-10
    warm_start: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.stop_level < 0:
            raise ValueError("stop_level must be nonnegative")


@dataclass(frozen=True)
class StepRecord:
    k: int
    state: tuple[float, ...]
    applied_control: tuple[float, ...]
    optimal_cost: float
    stage_cost: float
    terminal_stage_cost: float
    first_stage_cost: float         # l(x_1^{u*}) = l(x_{k+1})
    candidate_cost: Optional[float]
    solver_converged: bool
    candidate_flagged: bool = False


@dataclass(frozen=True)
class SimulationRecord:
    config: MpcConfig
    steps: tuple[StepRecord, ...]
    final_state: tuple[float, ...]
    final_optimal_cost: Optional[float]
    termination: str
    diagnostics: tuple[str, ...] = field(default=())

    def optimal_costs(self) -> list[float]:
        """J*_m at every visited state, including the final one when solved."""
        out = [s.optimal_cost for s in self.steps]
        if self.final_optimal_cost is not None:
            out.append(self.final_optimal_cost)
        return out


def terminal_control(model: SystemModel, x_terminal, config: SolverConfig
                     ) -> tuple[np.ndarray, bool]:
    """Approximate argmin over the control box of l(f(x_terminal, u)).

    Starts from zero, the clipped local controller (when present) and
    ``num_starts - 1`` seeded random points.  Returns (u_bar, ok); on failure
    u_bar is the zero control and ok is False.
    """
    x = np.asarray(x_terminal, dtype=float)
    lo, hi = model.control_lower, model.control_upper

    def fun(u):
        return float(model.stage_cost(np.asarray(model.step(x, u), dtype=float).reshape(-1)))

    if model.vectorized:
        def batch_fn(us):
            return np.asarray(model.stage_cost(model.step(np.broadcast_to(x, (len(us), x.size)), us)))
    else:
        def batch_fn(us):
            return np.array([fun(u) for u in us])

    starts = [np.zeros(model.control_dim)]
    if model.local_controller is not None:
        starts.append(model.clip(np.asarray(model.local_controller(x), dtype=float).reshape(-1)))
    rng = np.random.default_rng(config.seed)
    starts.extend(rng.uniform(lo, hi) for _ in range(config.num_starts - 1))
    try:
        u, _, _, _ = minimize_box(fun, batch_fn, starts, lo, hi, config)
    except SolverFailure:
        return np.zeros(model.control_dim), False
    return u, True


def shifted_candidate(model: SystemModel, prev_result: SolveResult, prev_x,
                      config: SolverConfig = SolverConfig()) -> tuple[np.ndarray, bool]:
    """The candidate (u*_1, ..., u*_{N-1}, u_bar) for the successor state.

    Returns the (N, n_u) profile and whether the terminal control problem was
    solved (False means u_bar fell back to zero).
    """
    traj = prev_result.trajectory
    if traj is None:
        traj = rollout(model, prev_x, prev_result.profile)
    u_bar, ok = terminal_control(model, traj.states[-1], config)
    profile = np.vstack([prev_result.profile[1:], u_bar.reshape(1, -1)])
    return profile, ok


def run_closed_loop(model: SystemModel, config: MpcConfig, x0) -> SimulationRecord:
    """Simulate x_{k+1} = f(x_k, u*_0(x_k)) for up to ``config.steps`` steps."""
    spec = config.weight_spec
    x = as_state(model, x0).copy()
    records: list[StepRecord] = []
    diags: list[str] = []
    warm = None
    termination = STEPS_EXHAUSTED
    final_cost = None

    for k in range(config.steps + 1):
        at_limit = k == config.steps
        stopped = float(model.stage_cost(x)) <= config.stop_level
        try:
            result = solve(model, spec, x, config.solver, warm_start=warm)
        except SolverFailure as exc:
            diags.append(f"step {k}: {exc}")
            termination = SOLVER_FAILURE
            break
        if stopped or at_limit:
            # J*_m at the last visited state closes the descent chain
            final_cost = result.cost
            if stopped:
                termination = STOP_LEVEL
            break

        u0 = result.profile[0].copy()
        x_next = np.asarray(model.step(x, u0), dtype=float).reshape(-1)
        candidate_cost, flagged = None, False
        if config.warm_start:
            warm, ok = shifted_candidate(model, result, x, config.solver)
            flagged = not ok
            candidate_cost = weighted_cost(spec, rollout(model, x_next, warm))
        records.append(StepRecord(
            k=k, state=tuple(x.tolist()), applied_control=tuple(u0.tolist()),
            optimal_cost=result.cost, stage_cost=float(model.stage_cost(x)),
            terminal_stage_cost=result.trajectory.terminal_cost,
            first_stage_cost=float(result.trajectory.stage_costs[1]),
            candidate_cost=candidate_cost, solver_converged=result.converged,
            candidate_flagged=flagged))
        log.debug("k=%d l=%.3e J*=%.3e", k, records[-1].stage_cost, result.cost)
        x = x_next

    return SimulationRecord(config=config, steps=tuple(records), final_state=tuple(x.tolist()),
                            final_optimal_cost=final_cost, termination=termination,
                            diagnostics=tuple(diags))
