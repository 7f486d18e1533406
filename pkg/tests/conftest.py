import contextlib

import numpy as np
import pytest

from codesign.morphology import DEFAULT_MODEL
from codesign.pareto import MooConfig, nsga2_run
from codesign.surface import fit_talent_surface


@pytest.fixture(scope="session")
def pareto_set():
    return nsga2_run(MooConfig(), DEFAULT_MODEL)


@pytest.fixture(scope="session")
def surface(pareto_set):
    return fit_talent_surface(pareto_set, degree=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion's PASS/FAIL line."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    @contextlib.contextmanager
    def run(number: int, title: str):
        details: list[str] = []
        ok = False
        try:
            yield details
            ok = True
        finally:
            note = "; ".join(details)
            ACCEPTANCE_RESULTS[number] = (ok, f"{title}: {note}" if note else title)
            line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {ACCEPTANCE_RESULTS[number][1]}"
            if reporter is not None:
                reporter.write_line("")
                reporter.write_line(line)
            else:
                print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {text}")
