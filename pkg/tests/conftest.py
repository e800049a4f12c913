import numpy as np
import pytest

from noisecov.panel import AsyncPanel

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)


@pytest.fixture
def small_panel():
    """Async two-asset panel small enough to check by hand."""
    return AsyncPanel(
        tick_duration=1.0,
        assets=("x", "y"),
        ticks=(
            np.array([0, 2, 4, 6], dtype=np.int64),
            np.array([0, 3, 4, 5], dtype=np.int64),
        ),
        values=(
            np.array([0.1, -0.2, 0.3, 0.0]),
            np.array([1.0, 0.5, -0.5, 0.25]),
        ),
    )


@pytest.fixture
def sync_panel(rng):
    """Synchronous five-asset panel with iid noise values."""
    p, n = 5, 400
    ticks = np.arange(1, n + 1, dtype=np.int64)
    return AsyncPanel(
        tick_duration=1.0,
        assets=tuple(f"a{i}" for i in range(p)),
        ticks=tuple(ticks for _ in range(p)),
        values=tuple(rng.standard_normal(n) for _ in range(p)),
    )
