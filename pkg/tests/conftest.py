import numpy as np
import pytest

from dgmdp import AgentParams, Structure, TaskParams


@pytest.fixture
def chain8_task() -> TaskParams:
    """Eight-step reference chain with the big reward twice the small one."""
    return TaskParams(tau=8, mu_ss=1.0, mu_ll=2.0, structure=Structure.ONE_SHOT)


@pytest.fixture
def chain8_agent() -> AgentParams:
    return AgentParams(gamma=0.92, sigma1=0.50, sigma=0.25, mu_e=0.0)


def game_task(tau: int, rho: float = 1.5, schedule=None, ll_reduction: float = 0.0) -> TaskParams:
    """Queue-waiting game chain: 100-point short queue, 100*tau*rho long."""
    intermediate = [0.0] * (tau - 1)
    if schedule:
        for pos, pts in schedule:
            intermediate[pos - 1] += pts
    return TaskParams(
        tau=tau,
        mu_ss=100.0,
        mu_ll=100.0 * tau * rho - ll_reduction,
        intermediate=tuple(intermediate),
        structure=Structure.ITERATED_PROXY,
    )


def assert_close(actual, expected, atol=1e-12, rtol=0.0):
    np.testing.assert_allclose(actual, expected, atol=atol, rtol=rtol)
