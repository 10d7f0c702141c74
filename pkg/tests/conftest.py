import pytest

from mesobell.eventgen import GenerationConfig, generate_dataset
from mesobell.physics import PhysicsParams

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def params():
    return PhysicsParams()


@pytest.fixture(scope="session")
def million(params):
    """The default 1e6-pair dataset shared by the statistical tests."""
    return generate_dataset(GenerationConfig(n_pairs=1_000_000, seed=20040501, params=params))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
