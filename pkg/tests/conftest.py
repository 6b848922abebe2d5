import pytest

from neuroflow.predictor.train import TrainConfig, train
from neuroflow.scenario import preset
from neuroflow.tracegen import generate_traces


@pytest.fixture(scope="session")
def small_traces():
    return generate_traces(preset("traces", seed=5, duration_ms=3 * 3600e3))


@pytest.fixture(scope="session")
def trained(small_traces):
    return train(small_traces, TrainConfig(epochs=10, seed=1))


@pytest.fixture(scope="session")
def sim_predictor():
    """A predictor good enough for placement decisions in simulator tests."""
    ts = generate_traces(preset("traces", seed=9, duration_ms=4 * 3600e3))
    return train(ts, TrainConfig(epochs=10, seed=0)).params


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.VERDICTS:
            terminalreporter.write_line(line)
