import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwmpc.dynamics import ModelError, SystemModel, double_integrator, pendulum, rollout, scalar_affine
from mwmpc.solver import (SolverConfig, SolverFailure, gradient, grid_oracle, solve,
                          solve_terminal)
from mwmpc.weighting import WeightSpec, weighted_cost

LEVELS5 = [-1.0, -0.5, 0.0, 0.5, 1.0]


def lifted_gradient(a, b, p, w, x0, u):
    """Analytic gradient of sum_i w_i x_i'P x_i for x_{i} = A x_{i-1} + B u_{i-1}."""
    n, nu, horizon = a.shape[0], b.shape[1], len(w)
    phi = np.vstack([np.linalg.matrix_power(a, i) for i in range(1, horizon + 1)])
    gam = np.zeros((horizon * n, horizon * nu))
    for i in range(1, horizon + 1):
        for j in range(i):
            gam[(i - 1) * n:i * n, j * nu:(j + 1) * nu] = np.linalg.matrix_power(a, i - 1 - j) @ b
    weight = np.kron(np.diag(w), p)
    x = phi @ x0 + gam @ u
    return 2 * gam.T @ weight @ x


@pytest.mark.parametrize("m", [0, 3])
def test_solve_at_equilibrium(m):
    for model in (scalar_affine(), double_integrator(), pendulum()):
        res = solve(model, WeightSpec(3, m), np.zeros(model.state_dim))
        assert res.cost == 0.0
        assert np.all(res.profile == 0)


def test_solve_beats_grid_on_scalar():
    model = scalar_affine()
    spec = WeightSpec(3, 2)
    grid = grid_oracle(model, spec, [1.0], LEVELS5)
    # independent enumeration of the 125 quantized profiles
    best = min(weighted_cost(spec, rollout(model, [1.0], np.array(p).reshape(3, 1)))
               for p in itertools.product(LEVELS5, repeat=3))
    assert grid.cost == best
    res = solve(model, spec, [1.0])
    assert res.cost <= grid.cost + 1e-12


def test_double_integrator_large_m_deadbeat_upper_bound():
    model = double_integrator()
    for m in (10, 30):
        spec = WeightSpec(2, m)
        deadbeat = weighted_cost(spec, rollout(model, [1.0, 0.0], [[-1.0], [1.0]]))
        res = solve(model, spec, [1.0, 0.0])
        assert res.cost <= deadbeat
    assert deadbeat < 1e-8


def test_gradient_zero_at_equilibrium():
    g = gradient(scalar_affine(), WeightSpec(3, 1), [0.0], np.zeros((3, 1)))
    assert np.all(np.isfinite(g)) and np.all(g == 0)


def test_gradient_matches_lifted_quadratic():
    model = double_integrator()
    a, b = np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[0.5], [1.0]])
    p = np.array(model.metadata["P"])
    rng = np.random.default_rng(5)
    for m in (0, 2):
        spec = WeightSpec(5, m)
        for _ in range(5):
            x0, u = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 5)
            exact = lifted_gradient(a, b, p, np.array([(i / 5) ** m for i in range(1, 6)]), x0, u)
            fd = gradient(model, spec, x0, u.reshape(5, 1))
            assert np.linalg.norm(fd - exact) <= 1e-5 * np.linalg.norm(exact)


def test_gradient_second_order_in_epsilon():
    model, spec = pendulum(), WeightSpec(6, 2)
    u = np.random.default_rng(6).uniform(-1, 1, (6, 1))
    ref = gradient(model, spec, [0.1, 0.05], u, 1e-5)
    e1 = np.abs(gradient(model, spec, [0.1, 0.05], u, 1e-2) - ref).max()
    e2 = np.abs(gradient(model, spec, [0.1, 0.05], u, 2e-2) - ref).max()
    assert 3.0 < e2 / e1 < 5.0


def test_gradient_reports_non_finite_component():
    # x_i = u_{i-1}, so only the second control can push a state past 0.5
    blowup = SystemModel("blow", 1, 1, step=lambda x, u: u + 0 * x,
                         stage_cost=lambda x: np.where(x > 0.5, np.inf, x * x)[..., 0],
                         decrease_fn=lambda x: 0.0, control_lower=[-1], control_upper=[1],
                         vectorized=True)
    with pytest.raises(SolverFailure) as exc:
        gradient(blowup, WeightSpec(2, 0), [0.0], [[0.0], [0.5]], 1e-3)
    assert exc.value.component == 1


def test_grid_singleton():
    model = double_integrator()
    res = grid_oracle(model, WeightSpec(2, 1), [1.0, 0.0], [0.0])
    assert np.all(res.profile == 0)
    assert res.cost == weighted_cost(WeightSpec(2, 1), rollout(model, [1.0, 0.0], np.zeros((2, 1))))


def test_grid_hand_enumeration_scalar():
    # J_1 = 0.5 x1^2 + x2^2 with x1 = 0.5 + u0, x2 = 0.5 x1 + u1
    table = {(-1, -1): 1.6875, (-1, 0): 0.1875, (-1, 1): 0.6875,
             (0, -1): 0.6875, (0, 0): 0.1875, (0, 1): 1.6875,
             (1, -1): 1.1875, (1, 0): 1.6875, (1, 1): 4.1875}
    model, spec = scalar_affine(), WeightSpec(2, 1)
    for prof, cost in table.items():
        assert weighted_cost(spec, rollout(model, [1.0], np.array(prof, float).reshape(2, 1))) == cost
    res = grid_oracle(model, spec, [1.0], [1.0, 0.0, -1.0])
    assert res.cost == 0.1875
    assert res.profile.ravel().tolist() == [-1.0, 0.0]   # lexicographic tie-break


def test_grid_containing_deadbeat():
    model, spec = double_integrator(), WeightSpec(2, 4)
    res = grid_oracle(model, spec, [1.0, 0.0], LEVELS5)
    deadbeat = weighted_cost(spec, rollout(model, [1.0, 0.0], [[-1.0], [1.0]]))
    assert res.cost <= deadbeat


def test_grid_budget():
    with pytest.raises(ModelError, match="100000000"):
        grid_oracle(scalar_affine(), WeightSpec(8, 0), [1.0], list(range(-5, 5)))


def test_zero_iteration_grid_starts_reproduce_oracle():
    model, spec = scalar_affine(), WeightSpec(3, 1)
    oracle = grid_oracle(model, spec, [0.5], LEVELS5)
    starts = [np.array(p).reshape(3, 1) for p in itertools.product(LEVELS5, repeat=3)]
    res = solve(model, spec, [0.5], SolverConfig(max_iterations=0), starts=starts)
    assert res.cost == oracle.cost
    assert np.array_equal(res.profile, oracle.profile)


def test_all_starts_failing_raises():
    nan_model = SystemModel("nan", 1, 1, step=lambda x, u: x + u,
                            stage_cost=lambda x: float("nan"), decrease_fn=lambda x: 0.0,
                            control_lower=[-1], control_upper=[1])
    with pytest.raises(SolverFailure, match="all starts failed"):
        solve(nan_model, WeightSpec(2, 0), [1.0])


def test_diverging_start_abandoned():
    def cost(x):
        return np.where(np.abs(x[..., 0]) > 1.8, np.inf, x[..., 0] ** 2)
    model = SystemModel("edge", 1, 1, step=lambda x, u: x + u, stage_cost=cost,
                        decrease_fn=lambda x: 0.0, control_lower=[-1], control_upper=[1],
                        vectorized=True)
    res = solve(model, WeightSpec(2, 0), [1.0], warm_start=[[1.0], [1.0]])
    assert res.cost < 1e-12
    assert any("abandoned" in d for d in res.diagnostics)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=-1)
    with pytest.raises(ValueError):
        SolverConfig(fd_epsilon=0)
    with pytest.raises(ValueError):
        SolverConfig(num_starts=0)


def test_solve_deterministic():
    model, spec = pendulum(), WeightSpec(6, 5)
    a = solve(model, spec, [0.1, 0.0], SolverConfig(seed=3, max_iterations=100))
    b = solve(model, spec, [0.1, 0.0], SolverConfig(seed=3, max_iterations=100))
    assert a.cost == b.cost and np.array_equal(a.profile, b.profile)
    assert a.iterations == b.iterations and a.starts_used == b.starts_used == 3


def test_solve_terminal_deadbeat():
    res = solve_terminal(double_integrator(), 2, [1.0, 0.0])
    assert res.cost <= 1e-8
    np.testing.assert_allclose(res.profile.ravel(), [-1.0, 1.0], atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(x1=st.floats(-1, 1), x2=st.floats(-0.5, 0.5), m=st.integers(0, 8),
       warm=st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_warm_start_dominance_and_feasibility(x1, x2, m, warm):
    model, spec = double_integrator(), WeightSpec(3, m)
    w = np.array(warm).reshape(3, 1)
    cfg = SolverConfig(max_iterations=30, num_starts=1)
    res = solve(model, spec, [x1, x2], cfg, warm_start=w)
    assert res.cost <= weighted_cost(spec, rollout(model, [x1, x2], w)) + 1e-12
    assert np.all(res.profile >= -1) and np.all(res.profile <= 1)
    assert res.cost == weighted_cost(spec, rollout(model, [x1, x2], res.profile))
    assert res.starts_used == 2


@settings(max_examples=15, deadline=None)
@given(x0=st.floats(-1, 1), m=st.integers(0, 3))
def test_oracle_dominance_scalar(x0, m):
    model, spec = scalar_affine(), WeightSpec(3, m)
    grid = grid_oracle(model, spec, [x0], LEVELS5)
    assert solve(model, spec, [x0]).cost <= grid.cost + 1e-12
