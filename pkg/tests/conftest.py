import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    from scipy.spatial.transform import Rotation

    return Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Report one acceptance criterion as a PASS/FAIL line and fail the test when it fails."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def _record(criterion: str, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
        lines.append(line)
        reporter = request.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        print(line)
        assert passed, line

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
