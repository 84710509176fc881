import pytest
from hypothesis import settings

from holoquant.tasks import SyntheticTask
from holoquant.trainer import TrainConfig, init_network, train

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def sine_task():
    return SyntheticTask(1, "sum-of-sinusoids", 2000, 0.0, 0)


@pytest.fixture(scope="session")
def trained_1x16(sine_task):
    net = init_network((1, 16, 1), 10, 0.1, 0)
    trained, history = train(net, sine_task, TrainConfig(epochs=60, seed=0))
    return trained, history


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
