import numpy as np
import pytest

from moen.filters import kalman_bucy
from moen.systems import Scenario, Signal, duffing_model, harmonic_model, simulate_truth

ACCEPTANCE_LINES = []


def harmonic_scenario(**changes):
    sc = Scenario(
        harmonic_model(),
        x0_prior=[0.0, 0.0],
        x_true_init=[-0.1548, 0.2969],
        v=Signal("cosine", 0.1, 1.2),
        w=Signal("sine", 0.1, 0.5),
        T=10.0,
        grid_steps=1000,
    )
    return sc.with_(**changes) if changes else sc


def duffing_scenario(**changes):
    sc = Scenario(
        duffing_model(),
        x0_prior=[0.0, 0.0],
        x_true_init=[0.0646, -0.1465],
        v=Signal("cosine", 1.0, 1.2),
        T=15.0,
        grid_steps=1500,
    )
    return sc.with_(**changes) if changes else sc


def duffing_test_scenario():
    return Scenario(
        duffing_model(),
        x0_prior=[0.0, 0.0],
        x_true_init=[1.0, 0.0],
        v=Signal("cosine", 1.4, 1.2),
        w=Signal("sine", 0.1, np.pi),
        T=20.0,
        grid_steps=2000,
    )


@pytest.fixture(scope="session")
def harmonic():
    sc = harmonic_scenario()
    obs = simulate_truth(sc)
    return sc, obs, kalman_bucy(sc.model, obs, sc)


@pytest.fixture(scope="session")
def duffing():
    sc = duffing_scenario()
    return sc, simulate_truth(sc)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
