import pytest

from mwmpc.dynamics import SystemModel

ACCEPTANCE_LINES: list[str] = []


def identity_model(dim: int = 1) -> SystemModel:
    """f(x, u) = x with l = |x|^2; used for fixed-point and degenerate cases."""
    return SystemModel(
        name="identity", state_dim=dim, control_dim=1,
        step=lambda x, u: x.copy(),
        stage_cost=lambda x: float(x @ x), decrease_fn=lambda x: 0.0,
        control_lower=[-1.0], control_upper=[1.0])


@pytest.fixture
def identity():
    return identity_model()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
