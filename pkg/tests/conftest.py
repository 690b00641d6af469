from pathlib import Path

import pytest

from lirdeadlock import ir

FIXTURES = Path(__file__).parent / "fixtures"
FIGURES = FIXTURES / "figures"
CONTROLS = FIXTURES / "controls"
ALL_FIXTURES = sorted(FIXTURES.rglob("*.lir"))


def load(name: str) -> ir.Program:
    for path in ALL_FIXTURES:
        if path.stem == name:
            return ir.load_program(path)
    raise FileNotFoundError(name)


@pytest.fixture
def fixture_program():
    return load


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
