import numpy as np
import pytest

from onetracker.config import TrackerConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy():
    return TrackerConfig.toy()


def move_off_kinks(module, rng, scale=0.1):
    """Give exactly-zero parameters small random values so no ReLU input sits on its kink."""
    for p in module.parameters():
        if not p.data.any():
            p.data = rng.normal(0.0, scale, p.shape)


@pytest.fixture
def off_kinks():
    return move_off_kinks


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record one pass/fail line for an acceptance criterion, echo it, then assert."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
