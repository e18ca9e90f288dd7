"""System models, control-profile rollout and the built-in benchmark systems.

States are 1-D float arrays of length ``state_dim``; a control profile over a
horizon ``N`` is an ``(N, control_dim)`` array.  The built-in systems write
their maps with elementwise numpy arithmetic over the trailing axis, so the
same callables accept a stack of states (shape ``(..., n)``).  The solver uses
that to evaluate finite-difference perturbations in one batched rollout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Mapping, Optional

import numpy as np
from scipy.linalg import solve_discrete_are

Vector = np.ndarray
StepFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
ScalarFn = Callable[[np.ndarray], Any]


class ModelError(ValueError):
    """Raised when a model, state or profile is inconsistent."""


class DimensionError(ModelError):
    """Dimension mismatch; ``index`` names the offending entry (or None)."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class UnsupportedOperation(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class SystemModel:
    name: str
    state_dim: int
    control_dim: int
    step: StepFn
    stage_cost: ScalarFn
    decrease_fn: ScalarFn
    control_lower: np.ndarray
    control_upper: np.ndarray
    local_controller: Optional[Callable[[np.ndarray], np.ndarray]] = None
    vectorized: bool = False
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        lo = np.asarray(self.control_lower, dtype=float).reshape(-1)
        hi = np.asarray(self.control_upper, dtype=float).reshape(-1)
        if lo.shape != (self.control_dim,) or hi.shape != (self.control_dim,):
            raise DimensionError("control box must have control_dim entries")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ModelError("control box must contain the zero control")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "control_lower", lo)
        object.__setattr__(self, "control_upper", hi)
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    def clip(self, u) -> np.ndarray:
        """Project controls (any leading shape) onto the per-step box."""
        return np.clip(u, self.control_lower, self.control_upper)

    def check_equilibrium(self, atol: float = 1e-12) -> bool:
        x0 = np.zeros(self.state_dim)
        u0 = np.zeros(self.control_dim)
        nxt = np.asarray(self.step(x0, u0), dtype=float)
        return bool(np.all(np.abs(nxt) <= atol)
                    and abs(float(self.stage_cost(x0))) <= atol
                    and abs(float(self.decrease_fn(x0))) <= atol)


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    states: np.ndarray        # (N+1, n)
    stage_costs: np.ndarray   # (N+1,)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @property
    def terminal_cost(self) -> float:
        return float(self.stage_costs[-1])


def as_state(model: SystemModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (model.state_dim,):
        raise DimensionError(
            f"state has dimension {x.size}, model {model.name!r} expects {model.state_dim}")
    return x


def as_profile(model: SystemModel, profile, horizon: Optional[int] = None,
               check_box: bool = True) -> np.ndarray:
    """Coerce ``profile`` to an ``(N, n_u)`` array and validate it."""
    u = np.asarray(profile, dtype=float)
    if u.ndim == 1 and model.control_dim == 1:
        u = u.reshape(-1, 1)
    elif u.ndim == 1 and horizon is not None and u.size == horizon * model.control_dim:
        u = u.reshape(horizon, model.control_dim)
    if u.ndim != 2:
        raise DimensionError("control profile must be a sequence of control vectors")
    if horizon is not None and u.shape[0] != horizon:
        raise DimensionError(f"profile has {u.shape[0]} controls, horizon is {horizon}")
    for i, ui in enumerate(u):
        if ui.shape != (model.control_dim,):
            raise DimensionError(
                f"control {i} has dimension {ui.size}, expected {model.control_dim}", index=i)
        if check_box and (np.any(ui < model.control_lower) or np.any(ui > model.control_upper)):
            raise ModelError(f"control {i} = {ui.tolist()} is outside the control box")
    return u


def rollout(model: SystemModel, x0, profile) -> StateTrajectory:
    """Propagate ``x0`` through ``profile``: x_0 = x0, x_i = f(x_{i-1}, u_{i-1})."""
    x = as_state(model, x0)
    u = as_profile(model, profile)
    states = np.empty((len(u) + 1, model.state_dim))
    states[0] = x
    for i in range(len(u)):
        nxt = np.asarray(model.step(states[i], u[i]), dtype=float).reshape(-1)
        if nxt.shape != (model.state_dim,):
            raise DimensionError(
                f"step {i + 1} returned a state of dimension {nxt.size}", index=i + 1)
        states[i + 1] = nxt
    costs = np.array([float(model.stage_cost(s)) for s in states])
    return StateTrajectory(states, costs)


def rollout_batch(model: SystemModel, x0, profiles: np.ndarray) -> np.ndarray:
    """Stage costs for a stack of profiles ``(B, N, n_u)``; returns ``(B, N+1)``.

    Uses one vectorized pass when the model supports it, else a loop.
    """
    x = as_state(model, x0)
    profiles = np.asarray(profiles, dtype=float)
    if not model.vectorized:
        return np.array([rollout(model, x, p).stage_costs for p in profiles])
    b, n_steps = profiles.shape[:2]
    states = np.broadcast_to(x, (b, model.state_dim)).copy()
    costs = np.empty((b, n_steps + 1))
    costs[:, 0] = model.stage_cost(states)
    for i in range(n_steps):
        states = model.step(states, profiles[:, i, :])
        costs[:, i + 1] = model.stage_cost(states)
    return costs


def local_step(model: SystemModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Apply the clipped local controller once; returns ``(u_plus, f(x, u_plus))``."""
    if model.local_controller is None:
        raise UnsupportedOperation(f"model {model.name!r} has no local controller")
    x = as_state(model, x)
    u = model.clip(np.asarray(model.local_controller(x), dtype=float).reshape(-1))
    return u, np.asarray(model.step(x, u), dtype=float).reshape(-1)


# ---------------------------------------------------------------------------
# built-in benchmarks

def _quadratic(weight: np.ndarray) -> ScalarFn:
    w = np.array(weight, dtype=float)
    n = len(w)

    def cost(x):
        x = np.asarray(x, dtype=float)
        total = 0.0
        for i in range(n):
            for j in range(n):
                if w[i, j] != 0.0:
                    total = total + w[i, j] * x[..., i] * x[..., j]
        return total

    return cost


def _linear_feedback(gain: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    g = np.array(gain, dtype=float)

    def controller(x):
        return g @ np.asarray(x, dtype=float)

    return controller


def _lqr(a: np.ndarray, b: np.ndarray, q: np.ndarray, r: np.ndarray):
    p = solve_discrete_are(a, b, q, r)
    p = 0.5 * (p + p.T)
    k = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    return p, k


def _sublevel_box(weight: np.ndarray, rho: float) -> list[float]:
    # half-widths of the smallest box containing {x : x'Wx <= rho}
    return np.sqrt(rho * np.diag(np.linalg.inv(weight))).tolist()


def scalar_affine(local_gain=None) -> SystemModel:
    """f(x, u) = 0.5 x + u with l = x^2, q = 0.5 x^2 and u in [-1, 1].

    The default local controller is kappa(x) = 0; the open-loop contraction
    alone gives l(0.5 x) - l(x) = -0.75 x^2 <= -q(x) everywhere.
    """
    gain = np.array([[0.0]] if local_gain is None else local_gain, dtype=float).reshape(1, 1)
    gamma = 0.5

    def step(x, u):
        return 0.5 * np.asarray(x, dtype=float) + np.asarray(u, dtype=float)

    def stage_cost(x):
        return np.asarray(x, dtype=float)[..., 0] ** 2

    def decrease(x):
        return gamma * stage_cost(x)

    return SystemModel(
        name="scalar_affine", state_dim=1, control_dim=1, step=step,
        stage_cost=stage_cost, decrease_fn=decrease,
        control_lower=np.array([-1.0]), control_upper=np.array([1.0]),
        local_controller=_linear_feedback(gain), vectorized=True,
        metadata={
            "gamma": gamma, "rho_bar": 1.0,
            "stage_cost": "x^2", "decrease_fn": "0.5 x^2",
            "local_controller": f"u = {gain[0, 0]!r} x",
            "local_gain": gain.tolist(),
            "clf_box": [1.0],
            "state_region": [[-1.0], [1.0]],
            "horizon": 3, "feasible_x0": [1.0],
        })


def double_integrator(local_gain=None) -> SystemModel:
    """x+ = A x + B u with A = [[1, 1], [0, 1]], B = [0.5, 1], u in [-1, 1].

    Stage cost l(x) = x'Px with P the discrete Riccati solution for Q = I,
    R = 1, and kappa the matching LQR feedback.  The identity weight cannot
    serve as a one-step CLF here: along x ~ (2, 1) no control decreases |x|^2.
    """
    a = np.array([[1.0, 1.0], [0.0, 1.0]])
    b = np.array([[0.5], [1.0]])
    p, k = _lqr(a, b, np.eye(2), np.eye(1))
    gain = -k if local_gain is None else np.array(local_gain, dtype=float).reshape(1, 2)
    # exact linear decrease rate is 0.496; no clipping occurs below l = 2.45
    gamma, rho_bar = 0.45, 2.0
    cost = _quadratic(p)

    def step(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (2,)))
        out[..., 0] = x[..., 0] + x[..., 1] + 0.5 * u[..., 0]
        out[..., 1] = x[..., 1] + u[..., 0]
        return out

    def decrease(x):
        return gamma * cost(x)

    return SystemModel(
        name="double_integrator", state_dim=2, control_dim=1, step=step,
        stage_cost=cost, decrease_fn=decrease,
        control_lower=np.array([-1.0]), control_upper=np.array([1.0]),
        local_controller=_linear_feedback(gain), vectorized=True,
        metadata={
            "gamma": gamma, "rho_bar": rho_bar,
            "stage_cost": "x'Px, P = DARE(A, B, I, 1)", "P": p.tolist(),
            "decrease_fn": f"{gamma} * l(x)",
            "local_controller": "u = -K x (LQR, Q = I, R = 1), clipped",
            "local_gain": gain.tolist(),
            "clf_box": _sublevel_box(p, rho_bar),
            "state_region": [[-1.0, -0.5], [1.0, 0.5]],
            "horizon": 2, "feasible_x0": [1.0, 0.0],
        })


def pendulum(dt: float = 0.1, damping: float = 0.5, u_max: float = 2.0,
             local_gain=None) -> SystemModel:
    """Explicit-Euler pendulum: theta'' = sin(theta) - d theta' + u, step ``dt``.

    The origin is the upright equilibrium.  l(x) = x'Px with P the Riccati
    solution of the linearization (Q = I, R = 1); kappa is the LQR gain.
    """
    a = np.array([[1.0, dt], [dt, 1.0 - dt * damping]])
    b = np.array([[0.0], [dt]])
    p, k = _lqr(a, b, np.eye(2), np.eye(1))
    gain = -k if local_gain is None else np.array(local_gain, dtype=float).reshape(1, 2)
    # Tuned for the defaults (linear rate 0.142); other dt/damping need re-certifying.
    gamma, rho_bar = 0.1, 1.0
    cost = _quadratic(p)

    def step(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (2,)))
        out[..., 0] = x[..., 0] + dt * x[..., 1]
        out[..., 1] = x[..., 1] + dt * (np.sin(x[..., 0]) - damping * x[..., 1] + u[..., 0])
        return out

    def decrease(x):
        return gamma * cost(x)

    return SystemModel(
        name="pendulum", state_dim=2, control_dim=1, step=step,
        stage_cost=cost, decrease_fn=decrease,
        control_lower=np.array([-u_max]), control_upper=np.array([u_max]),
        local_controller=_linear_feedback(gain), vectorized=True,
        metadata={
            "gamma": gamma, "rho_bar": rho_bar, "dt": dt, "damping": damping,
            "stage_cost": "x'Px, P = DARE of the linearization (Q = I, R = 1)",
            "P": p.tolist(), "decrease_fn": f"{gamma} * l(x)",
            "local_controller": "u = -K x (LQR of the linearization), clipped",
            "local_gain": gain.tolist(),
            "clf_box": _sublevel_box(p, rho_bar),
            "state_region": [[-0.1, -0.1], [0.1, 0.1]],
            "horizon": 6, "feasible_x0": [0.1, 0.0],
        })


BUILTIN_SYSTEMS: dict[str, Callable[..., SystemModel]] = {
    "scalar_affine": scalar_affine,
    "double_integrator": double_integrator,
    "pendulum": pendulum,
}


def builtin_system(name: str, **params) -> SystemModel:
    try:
        factory = BUILTIN_SYSTEMS[name]
    except KeyError:
        raise ModelError(
            f"unknown system {name!r}; valid names: {', '.join(sorted(BUILTIN_SYSTEMS))}"
        ) from None
    return factory(**params)
