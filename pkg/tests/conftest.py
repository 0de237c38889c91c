import numpy as np
import pytest
from hypothesis import settings

from panelpif.models import default_parameters, simulate_panel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def gompertz_truth():
    return default_parameters("gompertz", 5)


@pytest.fixture(scope="session")
def gompertz_panel(gompertz_truth):
    # U=5, N=50 at the standard truth values
    return simulate_panel("gompertz", gompertz_truth, 50, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the test session
_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(key: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[key] = f"{key} {'PASS' if ok else 'FAIL'}: {detail}"
        print(_ACCEPTANCE[key])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
            terminalreporter.write_line(_ACCEPTANCE[key])
