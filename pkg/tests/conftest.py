import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("callqa", deadline=None, max_examples=60)
settings.load_profile("callqa")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance")
        for line in LINES:
            terminalreporter.write_line(line)
