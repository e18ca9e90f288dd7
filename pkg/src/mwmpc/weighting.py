"""Monotone stage-cost weights (i/N)^m, the weighted cost J_m and the
constants the stability argument is built from."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DimensionError, StateTrajectory


@dataclass(frozen=True)
class WeightSpec:
    horizon: int
    exponent: int = 0

    def __post_init__(self):
        if isinstance(self.horizon, bool) or int(self.horizon) != self.horizon or self.horizon < 2:
            raise ValueError(f"horizon must be an integer >= 2, got {self.horizon!r}")
        if isinstance(self.exponent, bool) or int(self.exponent) != self.exponent or self.exponent < 0:
            raise ValueError(f"exponent must be a nonnegative integer, got {self.exponent!r}")
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "exponent", int(self.exponent))

    @property
    def c(self) -> float:
        """Ratio (N - 1)/N of the two last weights' bases."""
        return (self.horizon - 1) / self.horizon

    def with_exponent(self, m: int) -> "WeightSpec":
        return WeightSpec(self.horizon, m)


def weights(spec: WeightSpec) -> np.ndarray:
    n, m = spec.horizon, spec.exponent
    return np.array([(i / n) ** m for i in range(1, n + 1)])


def weighted_cost(spec: WeightSpec, traj) -> float:
    """J_m = sum_{i=1..N} (i/N)^m l(x_i); the initial state's cost is not counted.

    ``traj`` is a StateTrajectory or a bare length-(N+1) stage-cost vector.
    """
    costs = traj.stage_costs if isinstance(traj, StateTrajectory) else np.asarray(traj, float)
    if costs.shape != (spec.horizon + 1,):
        raise DimensionError(
            f"trajectory has {costs.shape[0] - 1} steps, weight spec horizon is {spec.horizon}")
    total = 0.0
    for w, l in zip(weights(spec), costs[1:]):
        total += w * l
    return float(total)


def weighted_cost_batch(spec: WeightSpec, costs: np.ndarray) -> np.ndarray:
    """Row-wise J_m for a ``(B, N+1)`` stage-cost array, same summation order."""
    w = weights(spec)
    total = np.zeros(costs.shape[0])
    for i in range(spec.horizon):
        total = total + w[i] * costs[:, i + 1]
    return total


@dataclass(frozen=True)
class ProofConstants:
    horizon: int
    exponent: int
    c: float
    psi_m: float
    eta: float
    gamma: float
    rho_bar: float
    m_min: int

    def conditions(self, m: int) -> tuple[bool, bool]:
        """(terminal level inside the CLF region, descent margin >= gamma/2) at ``m``."""
        return minimum_exponent_conditions(self.horizon, m, self.eta, self.gamma, self.rho_bar)


def minimum_exponent_conditions(horizon: int, m: int, eta: float, gamma: float,
                                rho_bar: float) -> tuple[bool, bool]:
    c = (horizon - 1) / horizon
    cm = c ** m
    # psi(m) - 1 + gamma >= gamma/2  <=>  c^m <= gamma/2
    return eta * cm <= rho_bar, cm <= gamma / 2.0


def proof_constants(spec: WeightSpec, eta: float, gamma: float, rho_bar: float,
                    max_exponent: int = 100_000) -> ProofConstants:
    """Constants for ``spec`` plus the smallest exponent satisfying
    eta * c^m <= rho_bar and c^m <= gamma / 2."""
    if eta < 0 or not math.isfinite(eta):
        raise ValueError("eta must be finite and nonnegative")
    if gamma <= 0 or rho_bar <= 0:
        raise ValueError("gamma and rho_bar must be positive")
    n = spec.horizon
    # log-based guess, then settle by direct substitution
    c = spec.c
    need = min(rho_bar / eta if eta > 0 else math.inf, gamma / 2.0)
    m = 0 if need >= 1.0 else max(0, int(math.floor(math.log(need) / math.log(c))) - 2)
    while not all(minimum_exponent_conditions(n, m, eta, gamma, rho_bar)):
        m += 1
        if m > max_exponent:
            raise ValueError("no exponent below max_exponent satisfies the conditions")
    while m > 0 and all(minimum_exponent_conditions(n, m - 1, eta, gamma, rho_bar)):
        m -= 1
    return ProofConstants(horizon=n, exponent=spec.exponent, c=c,
                          psi_m=1.0 - c ** spec.exponent, eta=float(eta),
                          gamma=float(gamma), rho_bar=float(rho_bar), m_min=m)
