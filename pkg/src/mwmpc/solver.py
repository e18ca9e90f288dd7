"""Box-constrained minimization of J_m over control profiles.

Single shooting: the decision vector is the flattened profile, the state is
eliminated by rollout.  Each start runs projected gradient descent with a
central finite-difference gradient and Armijo backtracking (halving).  After
the first iteration the trial step is the Barzilai-Borwein step of the last
accepted move instead of ``step_init``; the tail-heavy weights make J_m badly
scaled and a fixed initial trial stalls.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import (ModelError, StateTrajectory, SystemModel, as_profile, as_state,
                       rollout, rollout_batch)
from .weighting import WeightSpec, weighted_cost, weighted_cost_batch, weights

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_HALVINGS = 60
GRID_BUDGET = 10 ** 7
_BB_RANGE = (1e-30, 1e30)


class SolverFailure(RuntimeError):
    pass


class GradientError(SolverFailure):
    def __init__(self, message: str, component: int):
        super().__init__(message)
        self.component = component


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 400
    gradient_tolerance: float = 1e-12
    step_init: float = 1.0
    num_starts: int = 3
    fd_epsilon: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        for name in ("gradient_tolerance", "step_init", "fd_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.num_starts < 1:
            raise ValueError("num_starts must be >= 1")


@dataclass(frozen=True, eq=False)
class SolveResult:
    profile: np.ndarray
    cost: float
    iterations: int
    converged: bool
    starts_used: int
    trajectory: Optional[StateTrajectory] = None
    diagnostics: tuple[str, ...] = field(default=())


# ---------------------------------------------------------------------------
# generic projected descent

@dataclass
class _Run:
    z: np.ndarray
    f: float
    iterations: int
    converged: bool


def _fd_gradient(batch_fn: Callable[[np.ndarray], np.ndarray], z: np.ndarray,
                 eps: float) -> np.ndarray:
    d = z.size
    pert = np.repeat(z[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    pert[idx, idx] += eps
    pert[d + idx, idx] -= eps
    vals = batch_fn(pert)
    bad = ~np.isfinite(vals)
    if bad.any():
        comp = int(np.flatnonzero(bad)[0] % d)
        raise GradientError(f"non-finite cost when perturbing component {comp}", comp)
    return (vals[:d] - vals[d:]) / (2.0 * eps)


def _descend(fun: Callable[[np.ndarray], float],
             batch_fn: Callable[[np.ndarray], np.ndarray],
             z0: np.ndarray, lower: np.ndarray, upper: np.ndarray,
             config: SolverConfig) -> _Run:
    z = np.clip(np.asarray(z0, dtype=float), lower, upper)
    f = fun(z)
    if not np.isfinite(f):
        raise SolverFailure("non-finite cost at the start point")
    step = config.step_init
    g = None
    for it in range(config.max_iterations):
        if g is None:
            g = _fd_gradient(batch_fn, z, config.fd_epsilon)
        # stationarity: the projected move at the current trial step, in control units
        if np.max(np.abs(np.clip(z - step * g, lower, upper) - z), initial=0.0) \
                <= config.gradient_tolerance:
            return _Run(z, f, it, True)
        alpha = step
        for _ in range(MAX_HALVINGS + 1):
            z_new = np.clip(z - alpha * g, lower, upper)
            f_new = fun(z_new)
            if np.isfinite(f_new) and f_new <= f + ARMIJO * float(g @ (z_new - z)):
                break
            alpha *= 0.5
        else:
            return _Run(z, f, it, False)
        if f_new >= f and np.array_equal(z_new, z):
            return _Run(z, f, it + 1, True)
        g_new = _fd_gradient(batch_fn, z_new, config.fd_epsilon)
        s, y = z_new - z, g_new - g
        sy = float(s @ y)
        step = float(np.clip(s @ s / sy, *_BB_RANGE)) if sy > 0 else config.step_init
        z, f, g = z_new, f_new, g_new
    return _Run(z, f, config.max_iterations, False)


def _lex_key(cost: float, z: np.ndarray):
    return (cost, tuple(z.tolist()))


def _multistart(fun, batch_fn, starts: Sequence[np.ndarray], lower, upper,
                config: SolverConfig):
    best, best_key, diags, iters = None, None, [], 0
    for k, z0 in enumerate(starts):
        try:
            run = _descend(fun, batch_fn, z0, lower, upper, config)
        except SolverFailure as exc:
            diags.append(f"start {k} abandoned: {exc}")
            log.debug("start %d abandoned: %s", k, exc)
            continue
        iters += run.iterations
        key = _lex_key(run.f, run.z)
        if best_key is None or key < best_key:
            best, best_key = run, key
    if best is None:
        raise SolverFailure("all starts failed: " + "; ".join(diags))
    return best, iters, tuple(diags)


def minimize_box(fun: Callable[[np.ndarray], float],
                 batch_fn: Callable[[np.ndarray], np.ndarray],
                 starts: Sequence[np.ndarray], lower, upper,
                 config: SolverConfig) -> tuple[np.ndarray, float, bool, tuple[str, ...]]:
    """Multi-start projected descent of a scalar function over a box."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    run, _, diags = _multistart(fun, batch_fn, starts, lower, upper, config)
    return run.z, run.f, run.converged, diags


# ---------------------------------------------------------------------------
# the MPC problem

def _profile_objective(model: SystemModel, x0: np.ndarray, w: np.ndarray):
    n_steps, nu = len(w), model.control_dim

    def cost_of(costs: np.ndarray) -> float:
        # same summation order as weighted_cost
        total = 0.0
        for wi, li in zip(w, costs[1:]):
            total += wi * li
        return float(total)

    def fun(z):
        return cost_of(rollout(model, x0, z.reshape(n_steps, nu)).stage_costs)

    def batch_fn(zs):
        costs = rollout_batch(model, x0, zs.reshape(len(zs), n_steps, nu))
        total = np.zeros(len(zs))
        for i in range(n_steps):
            total = total + w[i] * costs[:, i + 1]
        return total

    return fun, batch_fn


def _box(model: SystemModel, horizon: int):
    return np.tile(model.control_lower, horizon), np.tile(model.control_upper, horizon)


def _initial_starts(model: SystemModel, horizon: int, config: SolverConfig,
                    warm_start, starts) -> list[np.ndarray]:
    lower, upper = _box(model, horizon)
    out = []
    if warm_start is not None:
        out.append(as_profile(model, warm_start, horizon).ravel().copy())
    if starts is not None:
        out.extend(as_profile(model, s, horizon).ravel().copy() for s in starts)
        return out
    out.append(np.zeros(horizon * model.control_dim))
    rng = np.random.default_rng(config.seed)
    for _ in range(config.num_starts - 1):
        out.append(rng.uniform(lower, upper))
    return out


def _solve_weighted(model, w, horizon, x0, config, warm_start, starts, spec=None):
    x0 = as_state(model, x0)
    lower, upper = _box(model, horizon)
    fun, batch_fn = _profile_objective(model, x0, w)
    z0s = _initial_starts(model, horizon, config, warm_start, starts)
    run, iters, diags = _multistart(fun, batch_fn, z0s, lower, upper, config)
    profile = run.z.reshape(horizon, model.control_dim)
    traj = rollout(model, x0, profile)
    cost = weighted_cost(spec, traj) if spec is not None else fun(run.z)
    return SolveResult(profile=profile, cost=cost, iterations=iters,
                       converged=run.converged, starts_used=len(z0s),
                       trajectory=traj, diagnostics=diags)


def solve(model: SystemModel, spec: WeightSpec, x0, config: SolverConfig = SolverConfig(),
          warm_start=None, starts=None) -> SolveResult:
    """Minimize J_m(u | x0) over the product control box.

    The warm start, when given, is always one of the starts, so the returned
    cost never exceeds J_m(warm_start | x0).  ``starts`` replaces the default
    zero-plus-random starts with an explicit list.
    """
    return _solve_weighted(model, weights(spec), spec.horizon, x0, config,
                           warm_start, starts, spec=spec)


def solve_terminal(model: SystemModel, horizon: int, x0, config: SolverConfig = SolverConfig(),
                   warm_start=None, starts=None) -> SolveResult:
    """Minimize the terminal stage cost l(x_N) alone; ``cost`` is l(x_N)."""
    w = np.zeros(horizon)
    w[-1] = 1.0
    return _solve_weighted(model, w, horizon, x0, config, warm_start, starts)


def gradient(model: SystemModel, spec: WeightSpec, x0, profile,
             fd_epsilon: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of J_m w.r.t. the flattened profile."""
    x0 = as_state(model, x0)
    u = as_profile(model, profile, spec.horizon)
    _, batch_fn = _profile_objective(model, x0, weights(spec))
    return _fd_gradient(batch_fn, u.ravel().astype(float), fd_epsilon)


def grid_oracle(model: SystemModel, spec: WeightSpec, x0, levels,
                chunk: int = 65536) -> SolveResult:
    """Exhaustive minimum of J_m over a quantized profile grid.

    ``levels`` is one value list shared by all control components, or one list
    per component.  Ties go to the lexicographically smallest profile.
    """
    x0 = as_state(model, x0)
    nu, n_steps = model.control_dim, spec.horizon
    if len(levels) and np.ndim(levels[0]) == 1:
        if len(levels) != nu:
            raise ModelError(f"expected {nu} per-component level lists")
        per_comp = [sorted(float(v) for v in lv) for lv in levels]
    else:
        per_comp = [sorted(float(v) for v in levels)] * nu
    slots = per_comp * n_steps
    count = 1
    for s in slots:
        count *= len(s)
    if count > GRID_BUDGET:
        raise ModelError(f"grid has {count} profiles, budget is {GRID_BUDGET}")
    if count == 0:
        raise ModelError("empty level list")

    w = weights(spec)
    best_cost, best = np.inf, []
    it = itertools.product(*slots)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=float)
        if block.size == 0:
            break
        costs = weighted_cost_batch(spec, rollout_batch(
            model, x0, block.reshape(len(block), n_steps, nu)))
        costs[~np.isfinite(costs)] = np.inf
        lo = costs.min()
        if lo < best_cost:
            best_cost, best = lo, []
        if lo <= best_cost * (1 + 1e-9) + 1e-300:
            best.extend(block[costs <= best_cost * (1 + 1e-9) + 1e-300])
    if not best:
        raise ModelError("every grid profile produced a non-finite cost")
    # exact rescoring with the scalar path; enumeration order is lexicographic
    scored = []
    for z in best:
        traj = rollout(model, x0, z.reshape(n_steps, nu))
        scored.append((_lex_key(weighted_cost(spec, traj), z), z, traj))
    (cost, _), z, traj = min(scored, key=lambda t: t[0])
    return SolveResult(profile=z.reshape(n_steps, nu), cost=cost, iterations=0,
                       converged=True, starts_used=count, trajectory=traj)
