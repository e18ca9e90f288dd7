"""Numerical checks of the stability argument.

Every check returns a plain frozen dataclass of Python scalars and tuples so
that reports compare with ``==`` and survive a JSON round trip unchanged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .dynamics import ModelError, SystemModel, UnsupportedOperation, as_state, rollout_batch
from .mpc_loop import SimulationRecord
from .solver import SolverConfig, SolverFailure, solve, solve_terminal
from .weighting import ProofConstants, WeightSpec

FEASIBILITY_TOL = 1e-8
INEQUALITY_TOL = 1e-8
IDENTITY_TOL = 1e-12
CLF_TOL = 1e-10
MAX_DRAWS = 10 ** 6


class CertificateError(RuntimeError):
    pass


def _tuple(a) -> tuple:
    return tuple(float(v) for v in np.asarray(a, dtype=float).ravel())


class _Report:
    """to_dict/from_dict for flat report dataclasses with nested report tuples."""

    _nested: dict = {}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict):
        kwargs = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            value = data[f.name]
            sub = cls._nested.get(f.name)
            if sub is not None and value is not None:
                value = (tuple(sub.from_dict(v) for v in value)
                         if isinstance(value, (list, tuple)) else sub.from_dict(value))
            elif isinstance(value, (list, tuple)):
                value = _deep_tuple(value)
            kwargs[f.name] = value
        return cls(**kwargs)


def _deep_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_deep_tuple(v) for v in value)
    return value


# ---------------------------------------------------------------------------
# reachability

@dataclass(frozen=True)
class ReachabilityCheck(_Report):
    state: tuple[float, ...]
    horizon: int
    residual: float
    feasible: bool
    profile: tuple[float, ...]
    tolerance: float = FEASIBILITY_TOL
    partial_sum: float = 0.0      # sum_{i=1}^{N-1} l(x_i) along the found profile
    diagnostic: str = ""


def check_reachability(model: SystemModel, spec, x, tolerance: float = FEASIBILITY_TOL,
                       config: SolverConfig = SolverConfig()) -> ReachabilityCheck:
    """Look for an admissible profile steering ``x`` to l(x_N) <= tolerance."""
    horizon = spec.horizon if isinstance(spec, WeightSpec) else int(spec)
    x = as_state(model, x)
    try:
        res = solve_terminal(model, horizon, x, config)
    except SolverFailure as exc:
        return ReachabilityCheck(state=_tuple(x), horizon=horizon, residual=math.inf,
                                 feasible=False, profile=(), tolerance=tolerance,
                                 diagnostic=str(exc))
    residual = res.trajectory.terminal_cost
    partial = float(sum(res.trajectory.stage_costs[1:-1]))
    return ReachabilityCheck(state=_tuple(x), horizon=horizon, residual=residual,
                             feasible=residual <= tolerance, profile=_tuple(res.profile),
                             tolerance=tolerance, partial_sum=partial)


# ---------------------------------------------------------------------------
# local control-Lyapunov function

@dataclass(frozen=True)
class ClfCheck(_Report):
    rho_bar: float
    gamma: float
    samples: int
    worst_violation: float        # max l(f(x,u+)) - l(x) + q(x)
    gamma_violation: float        # max gamma l(x) - q(x)
    passed: bool
    run: bool = True
    draws: int = 0
    worst_state: tuple[float, ...] = ()


def sample_sublevel_set(model: SystemModel, rho: float, count: int, rng, box=None,
                        max_draws: int = MAX_DRAWS) -> tuple[np.ndarray, int]:
    """Rejection-sample ``count`` states with l(x) <= rho from a bounding box.

    ``box`` gives the half-widths; defaults to the model's ``clf_box``
    metadata scaled from its rho_bar.
    """
    if box is None:
        if "clf_box" not in model.metadata:
            raise CertificateError(f"model {model.name!r} has no clf_box; pass box=")
        ref = float(model.metadata["rho_bar"])
        box = np.asarray(model.metadata["clf_box"], float) * math.sqrt(rho / ref)
    half = np.asarray(box, dtype=float).reshape(model.state_dim)
    kept: list[np.ndarray] = []
    draws = 0
    batch = max(256, 2 * count)
    while len(kept) < count:
        if draws >= max_draws:
            raise CertificateError(
                f"only {len(kept)} of {count} states with l <= {rho} after {draws} draws")
        n = min(batch, max_draws - draws)
        cand = rng.uniform(-half, half, size=(n, model.state_dim))
        draws += n
        for x in cand:
            if float(model.stage_cost(x)) <= rho:
                kept.append(x)
                if len(kept) == count:
                    break
    return np.array(kept).reshape(-1, model.state_dim), draws


def check_clf(model: SystemModel, rho_bar: float, gamma: float, sample_count: int = 10_000,
              seed: int = 0, box=None, tol: float = CLF_TOL) -> ClfCheck:
    """Sample B_l(rho_bar) and test l(f(x,u+)) - l(x) <= -q(x) and q(x) >= gamma l(x),
    with u+ the local controller clipped to the control box."""
    if model.local_controller is None:
        raise UnsupportedOperation(f"model {model.name!r} has no local controller")
    if sample_count == 0:
        return ClfCheck(rho_bar=rho_bar, gamma=gamma, samples=0, worst_violation=-math.inf,
                        gamma_violation=-math.inf, passed=True, run=False)
    rng = np.random.default_rng(seed)
    xs, draws = sample_sublevel_set(model, rho_bar, sample_count, rng, box)
    worst, worst_x, gworst = -math.inf, None, -math.inf
    for x in xs:
        u = model.clip(np.asarray(model.local_controller(x), dtype=float).reshape(-1))
        lx = float(model.stage_cost(x))
        qx = float(model.decrease_fn(x))
        v = float(model.stage_cost(np.asarray(model.step(x, u), float).reshape(-1))) - lx + qx
        if v > worst:
            worst, worst_x = v, x
        gworst = max(gworst, gamma * lx - qx)
    return ClfCheck(rho_bar=float(rho_bar), gamma=float(gamma), samples=len(xs),
                    worst_violation=worst, gamma_violation=gworst,
                    passed=worst <= tol and gworst <= tol, draws=draws,
                    worst_state=_tuple(worst_x))


# ---------------------------------------------------------------------------
# geometric terminal bound

def estimate_eta(model: SystemModel, spec, state_samples: int = 200,
                 profile_samples: int = 200, seed: int = 0, region=None) -> float:
    """Sampled lower estimate of sup over (x, u) of sum_{i=1}^{N-1} l(x_i^u(x)).

    ``region`` is (lower, upper) of a state box standing in for the reachable
    set, defaulting to the model's ``state_region``.  State i always uses the
    i-th draw of one stream and profiles from a child stream keyed by i, so
    raising either count only adds samples.
    """
    horizon = spec.horizon if isinstance(spec, WeightSpec) else int(spec)
    if region is None:
        region = model.metadata["state_region"]
    lo = np.asarray(region[0], dtype=float).reshape(model.state_dim)
    hi = np.asarray(region[1], dtype=float).reshape(model.state_dim)
    ulo = np.tile(model.control_lower, (horizon, 1))
    uhi = np.tile(model.control_upper, (horizon, 1))
    xrng = np.random.default_rng(seed)
    best = 0.0
    for i in range(state_samples):
        x = xrng.uniform(lo, hi)
        if profile_samples == 0:
            continue
        prng = np.random.default_rng([seed, i])
        profiles = prng.uniform(ulo, uhi, size=(profile_samples, horizon, model.control_dim))
        costs = rollout_batch(model, x, profiles)
        sums = costs[:, 1:horizon].sum(axis=1)
        sums = sums[np.isfinite(sums)]
        if sums.size:
            best = max(best, float(sums.max()))
    return best


@dataclass(frozen=True)
class Lemma1Entry(_Report):
    m: int
    measured: float
    bound: float
    holds: bool
    converged: bool


@dataclass(frozen=True)
class Lemma1Report(_Report):
    state: tuple[float, ...]
    horizon: int
    c: float
    eta_estimate: float
    eta_runtime: float
    eta_used: float
    applicable: bool
    entries: tuple[Lemma1Entry, ...] = ()
    fitted_slope: Optional[float] = None
    log_c: float = 0.0
    reachability: Optional[ReachabilityCheck] = None
    eta_is_estimate: bool = True

    _nested = {"entries": Lemma1Entry, "reachability": ReachabilityCheck}

    @property
    def passed(self) -> bool:
        return self.applicable and all(e.holds for e in self.entries)


def fit_log_slope(ms: Sequence[int], values: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log(value) against m over the positive values."""
    pts = [(m, math.log(v)) for m, v in zip(ms, values) if v > 0 and math.isfinite(v)]
    if len(pts) < 2:
        return None
    a = np.array(pts)
    return float(np.polyfit(a[:, 0], a[:, 1], 1)[0])


def check_lemma1(model: SystemModel, x, horizon: int, m_list: Iterable[int], eta: float,
                 config: SolverConfig = SolverConfig(),
                 tolerance: float = FEASIBILITY_TOL) -> Lemma1Report:
    """Compare the optimal terminal stage cost with eta * c^m for each m.

    Every solve is warm-started with the terminal-targeting profile found by
    the reachability check; that profile's partial sum is the runtime eta.
    """
    x = as_state(model, x)
    c = (horizon - 1) / horizon
    reach = check_reachability(model, horizon, x, tolerance, config)
    if not reach.feasible:
        return Lemma1Report(state=_tuple(x), horizon=horizon, c=c, eta_estimate=float(eta),
                            eta_runtime=0.0, eta_used=float(eta), applicable=False,
                            log_c=math.log(c), reachability=reach)
    eta_rt = reach.partial_sum
    eta_used = max(float(eta), eta_rt)
    u0 = np.asarray(reach.profile).reshape(horizon, model.control_dim)
    entries = []
    for m in m_list:
        res = solve(model, WeightSpec(horizon, int(m)), x, config, warm_start=u0)
        measured = res.trajectory.terminal_cost
        bound = eta_used * c ** int(m)
        entries.append(Lemma1Entry(m=int(m), measured=measured, bound=bound,
                                   holds=measured <= bound + IDENTITY_TOL,
                                   converged=res.converged))
    slope = fit_log_slope([e.m for e in entries], [e.measured for e in entries])
    return Lemma1Report(state=_tuple(x), horizon=horizon, c=c, eta_estimate=float(eta),
                        eta_runtime=eta_rt, eta_used=eta_used, applicable=True,
                        entries=tuple(entries), fitted_slope=slope, log_c=math.log(c),
                        reachability=reach)


# ---------------------------------------------------------------------------
# descent along a closed-loop record

@dataclass(frozen=True)
class DescentEntry(_Report):
    k: int
    lhs: Optional[float]          # J*_m(x_{k+1})
    candidate: Optional[float]    # J_m(shifted candidate | x_{k+1})
    rhs: float                    # J*_m(x_k) - l*_1 / N^m - (gamma/2) l*_N
    optimality_ok: Optional[bool]
    descent_ok: Optional[bool]
    skipped: bool = False


@dataclass(frozen=True)
class DescentReport(_Report):
    horizon: int
    exponent: int
    gamma: float
    m_min: int
    tolerance: float
    entries: tuple[DescentEntry, ...]
    verdict: str                  # "pass" | "fail" | "incomplete"
    below_m_min: bool = False

    _nested = {"entries": DescentEntry}

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def check_descent(model: SystemModel, record: SimulationRecord, constants: ProofConstants,
                  tol: float = INEQUALITY_TOL) -> DescentReport:
    """Check J*(x_{k+1}) <= J(candidate) <= J*(x_k) - l*_1/N^m - (gamma/2) l*_N at every step."""
    spec = record.config.weight_spec
    n, m = spec.horizon, spec.exponent
    head = 1.0 / n ** m
    costs = record.optimal_costs()
    entries = []
    for i, s in enumerate(record.steps):
        lhs = costs[i + 1] if i + 1 < len(costs) else None
        rhs = s.optimal_cost - head * s.first_stage_cost - 0.5 * constants.gamma * s.terminal_stage_cost
        if s.candidate_cost is None or lhs is None:
            entries.append(DescentEntry(k=s.k, lhs=lhs, candidate=s.candidate_cost, rhs=rhs,
                                        optimality_ok=None, descent_ok=None, skipped=True))
            continue
        entries.append(DescentEntry(
            k=s.k, lhs=lhs, candidate=s.candidate_cost, rhs=rhs,
            optimality_ok=lhs <= s.candidate_cost + tol,
            descent_ok=s.candidate_cost <= rhs + tol))
    if any(not (e.skipped or (e.optimality_ok and e.descent_ok)) for e in entries):
        verdict = "fail"
    elif any(e.skipped for e in entries):
        verdict = "incomplete"
    else:
        verdict = "pass"
    return DescentReport(horizon=n, exponent=m, gamma=constants.gamma, m_min=constants.m_min,
                         tolerance=tol, entries=tuple(entries), verdict=verdict,
                         below_m_min=m < constants.m_min)


@dataclass(frozen=True)
class TelescopingCheck(_Report):
    stage_sum: float              # sum_k l(x_{k+1})
    bound: float                  # N^m J*(x_0) + steps * tol
    holds: bool


def check_telescoping(record: SimulationRecord, tol: float = INEQUALITY_TOL) -> TelescopingCheck:
    spec = record.config.weight_spec
    if not record.steps:
        j0 = record.final_optimal_cost or 0.0
        return TelescopingCheck(stage_sum=0.0, bound=j0 * spec.horizon ** spec.exponent,
                                holds=True)
    total = float(sum(s.first_stage_cost for s in record.steps))
    bound = spec.horizon ** spec.exponent * record.steps[0].optimal_cost + tol * len(record.steps)
    return TelescopingCheck(stage_sum=total, bound=bound, holds=total <= bound)


# ---------------------------------------------------------------------------
# aggregate report written by the CLI

@dataclass(frozen=True)
class CertifyRun(_Report):
    initial_state: tuple[float, ...]
    reachability: ReachabilityCheck
    lemma1: Lemma1Report
    descent: Optional[DescentReport]
    telescoping: Optional[TelescopingCheck]
    termination: str = ""

    _nested = {"reachability": ReachabilityCheck, "lemma1": Lemma1Report,
               "descent": DescentReport, "telescoping": TelescopingCheck}

    @property
    def passed(self) -> bool:
        return (self.reachability.feasible and self.lemma1.passed
                and self.descent is not None and self.descent.passed
                and self.telescoping is not None and self.telescoping.holds)


@dataclass(frozen=True)
class CertifyReport(_Report):
    config: dict
    system: str
    horizon: int
    exponent: int
    eta_estimate: float
    eta_state_samples: int
    eta_profile_samples: int
    constants: dict
    clf: Optional[ClfCheck]
    runs: tuple[CertifyRun, ...]
    passed: bool

    _nested = {"clf": ClfCheck, "runs": CertifyRun}

    @classmethod
    def from_dict(cls, data: dict):
        out = super().from_dict(data)
        # config/constants are free-form mappings, keep them as parsed
        return cls(**{**{f.name: getattr(out, f.name) for f in fields(cls)},
                      "config": data["config"], "constants": data["constants"]})
